#pragma once

#include "cliperase/errors.hpp"
#include "cliperase/model.hpp"

#include <cmath>
#include <string>
#include <string_view>

namespace cliperase {

enum class OptimizerKind { Adam, SGD };

inline std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd"; }

inline OptimizerKind parse_optimizer(std::string_view s) {
    if (s == "adam" || s == "ADAM") return OptimizerKind::Adam;
    if (s == "sgd" || s == "SGD") return OptimizerKind::SGD;
    throw ConfigError("unknown optimizer '" + std::string(s) + "'");
}

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const {
        // lr == 0 is allowed: it is the identity update used to check plumbing.
        if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
            throw ConfigError("learning_rate must be finite and nonnegative");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
            throw ConfigError("adam betas must lie in [0, 1)");
        if (!(epsilon > 0.0)) throw ConfigError("adam epsilon must be positive");
    }
};

/// Adam (with bias correction) or plain SGD over an EncoderParams set.
/// Moments are kept in double regardless of the parameter scalar.
class Optimizer {
  public:
    Optimizer(OptimizerConfig cfg, const ArchConfig& arch)
        : cfg_(cfg), m_(Gradients::zeros(arch)), v_(Gradients::zeros(arch)) {
        cfg_.validate();
    }

    template <class Real>
    void step(EncoderParams<Real>& params, const Gradients& grads) {
        ++t_;
        if (cfg_.kind == OptimizerKind::SGD) {
            zip_params([&](std::string_view, auto& p, const auto& g) {
                p = (p.template cast<double>() - cfg_.learning_rate * g).template cast<Real>();
            }, params, grads);
            return;
        }
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        zip_params([&](std::string_view, auto& p, const auto& g, auto& m, auto& v) {
            m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
            v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
            const Matrix update =
                cfg_.learning_rate * ((m / bc1).array() / ((v / bc2).array().sqrt() + cfg_.epsilon)).matrix();
            p = (p.template cast<double>() - update).template cast<Real>();
        }, params, grads, m_, v_);
    }

    long steps() const { return t_; }

  private:
    OptimizerConfig cfg_;
    Gradients m_;
    Gradients v_;
    long t_ = 0;
};

}  // namespace cliperase
