#pragma once

#include "cliperase/checkpoint.hpp"
#include "cliperase/data.hpp"
#include "cliperase/engine.hpp"
#include "cliperase/errors.hpp"
#include "cliperase/experiments.hpp"
#include "cliperase/losses.hpp"
#include "cliperase/metrics.hpp"
#include "cliperase/model.hpp"
#include "cliperase/optim.hpp"
