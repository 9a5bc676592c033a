#pragma once

#include "cliperase/checkpoint.hpp"
#include "cliperase/data.hpp"
#include "cliperase/errors.hpp"
#include "cliperase/history.hpp"
#include "cliperase/losses.hpp"
#include "cliperase/metrics.hpp"
#include "cliperase/model.hpp"
#include "cliperase/optim.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace cliperase {

/// Contrastive pretraining of the toy model over the whole corpus.
struct PretrainConfig {
    double learning_rate = 1e-3;
    int epochs = 50;
    int batch_size = 32;
    std::uint64_t seed = 7;
    OptimizerKind optimizer = OptimizerKind::Adam;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double validation_fraction = 0.1;
    bool symmetric_contrastive = false;

    OptimizerConfig optimizer_config() const {
        return {optimizer, learning_rate, adam_beta1, adam_beta2, adam_epsilon};
    }
};

/// Hyperparameters of one unlearning run. Defaults follow the reference
/// setup (lambda = 1, 1, 1; 50 epochs; batch 32; Adam) except the learning
/// rate, which is scaled for the toy model.
struct UnlearnConfig {
    Method method = Method::CLIPErase;
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    double lambda3 = 1.0;
    double learning_rate = 1e-3;
    int epochs = 50;
    int batch_size = 32;
    std::uint64_t seed = 7;
    OptimizerKind optimizer = OptimizerKind::Adam;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double validation_fraction = 0.1;
    bool symmetric_contrastive = false;

    LossWeights weights() const { return {lambda1, lambda2, lambda3}; }
    OptimizerConfig optimizer_config() const {
        return {optimizer, learning_rate, adam_beta1, adam_beta2, adam_epsilon};
    }
};

namespace detail {

template <class Config>
void validate_common(const Config& c) {
    if (c.epochs < 1) throw ConfigError("epochs must be at least 1");
    if (c.batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (!(c.validation_fraction > 0.0 && c.validation_fraction < 1.0))
        throw ConfigError("validation_fraction must lie in (0, 1)");
    c.optimizer_config().validate();
}

// Strict reader: every key must be claimed by a handler.
class JsonFields {
  public:
    JsonFields(const nlohmann::json& j, std::string section) : j_(j), section_(std::move(section)) {
        if (!j_.is_object()) throw ConfigError("config section '" + section_ + "' must be a JSON object");
    }

    template <class Fn>
    JsonFields& on(const std::string& key, Fn&& fn) {
        handlers_.emplace_back(key, std::function<void(const nlohmann::json&)>(std::forward<Fn>(fn)));
        return *this;
    }

    void apply() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            const auto h = std::find_if(handlers_.begin(), handlers_.end(),
                                        [&](const auto& p) { return p.first == it.key(); });
            const std::string name = section_.empty() ? it.key() : section_ + "." + it.key();
            if (h == handlers_.end()) throw ConfigError("unknown config key '" + name + "'");
            try {
                h->second(it.value());
            } catch (const nlohmann::json::exception&) {
                throw ConfigError("bad value for config key '" + name + "'");
            } catch (const ConfigError& e) {
                throw ConfigError("config key '" + name + "': " + e.what());
            }
        }
    }

  private:
    const nlohmann::json& j_;
    std::string section_;
    std::vector<std::pair<std::string, std::function<void(const nlohmann::json&)>>> handlers_;
};

template <class Config>
void bind_common(JsonFields& f, Config& c) {
    f.on("learning_rate", [&](const auto& v) { c.learning_rate = v.template get<double>(); })
        .on("epochs", [&](const auto& v) { c.epochs = v.template get<int>(); })
        .on("batch_size", [&](const auto& v) { c.batch_size = v.template get<int>(); })
        .on("seed", [&](const auto& v) { c.seed = v.template get<std::uint64_t>(); })
        .on("optimizer", [&](const auto& v) { c.optimizer = parse_optimizer(v.template get<std::string>()); })
        .on("adam_beta1", [&](const auto& v) { c.adam_beta1 = v.template get<double>(); })
        .on("adam_beta2", [&](const auto& v) { c.adam_beta2 = v.template get<double>(); })
        .on("adam_epsilon", [&](const auto& v) { c.adam_epsilon = v.template get<double>(); })
        .on("validation_fraction", [&](const auto& v) { c.validation_fraction = v.template get<double>(); })
        .on("symmetric_contrastive", [&](const auto& v) { c.symmetric_contrastive = v.template get<bool>(); });
}

template <class Config>
void dump_common(nlohmann::json& j, const Config& c) {
    j["learning_rate"] = c.learning_rate;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["seed"] = c.seed;
    j["optimizer"] = std::string(to_string(c.optimizer));
    j["adam_beta1"] = c.adam_beta1;
    j["adam_beta2"] = c.adam_beta2;
    j["adam_epsilon"] = c.adam_epsilon;
    j["validation_fraction"] = c.validation_fraction;
    j["symmetric_contrastive"] = c.symmetric_contrastive;
}

}  // namespace detail

inline void validate(const PretrainConfig& c) { detail::validate_common(c); }

inline void validate(const UnlearnConfig& c) {
    detail::validate_common(c);
    c.weights().validate();
}

inline PretrainConfig pretrain_config_from_json(const nlohmann::json& j, const std::string& section = "pretrain") {
    PretrainConfig c;
    detail::JsonFields f(j, section);
    detail::bind_common(f, c);
    f.apply();
    validate(c);
    return c;
}

inline UnlearnConfig unlearn_config_from_json(const nlohmann::json& j, const std::string& section = "unlearn") {
    UnlearnConfig c;
    detail::JsonFields f(j, section);
    detail::bind_common(f, c);
    f.on("method", [&](const auto& v) { c.method = parse_method(v.template get<std::string>()); })
        .on("lambda1", [&](const auto& v) { c.lambda1 = v.template get<double>(); })
        .on("lambda2", [&](const auto& v) { c.lambda2 = v.template get<double>(); })
        .on("lambda3", [&](const auto& v) { c.lambda3 = v.template get<double>(); });
    f.apply();
    validate(c);
    return c;
}

inline nlohmann::json to_json(const PretrainConfig& c) {
    nlohmann::json j;
    detail::dump_common(j, c);
    return j;
}

inline nlohmann::json to_json(const UnlearnConfig& c) {
    nlohmann::json j;
    j["method"] = std::string(to_string(c.method));
    j["lambda1"] = c.lambda1;
    j["lambda2"] = c.lambda2;
    j["lambda3"] = c.lambda3;
    detail::dump_common(j, c);
    return j;
}

// ---------------------------------------------------------------------------

template <class Real>
struct TrainResult {
    DualEncoder<Real> model;
    RunHistory history;
};

namespace detail {

// Deterministic holdout of round(fraction * n) ids (at least one, and at
// least one left for training). With fewer than two ids the same ids serve
// both roles.
inline std::pair<std::vector<int>, std::vector<int>> holdout(std::vector<int> ids, double fraction, std::uint64_t seed,
                                                             std::uint64_t salt) {
    if (ids.size() < 2) return {ids, ids};
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(salt), 0x5eedu};
    std::mt19937_64 rng(seq);
    std::shuffle(ids.begin(), ids.end(), rng);
    auto n_val = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(ids.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, ids.size() - 1);
    std::vector<int> val(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<int> train(ids.begin() + static_cast<std::ptrdiff_t>(n_val), ids.end());
    std::sort(val.begin(), val.end());
    std::sort(train.begin(), train.end());
    return {std::move(train), std::move(val)};
}

inline void check_finite(double value, std::size_t step, const char* what) {
    if (!std::isfinite(value)) throw DivergenceError(step, std::string(what) + " is not finite");
}

// An update that overflows would otherwise surface later as a normalization
// failure; report it as divergence at the step that caused it.
template <class Real>
void check_finite(const EncoderParams<Real>& params, std::size_t step) {
    zip_params([&](std::string_view name, const auto& m) {
        if (!m.allFinite()) throw DivergenceError(step, "parameter " + std::string(name) + " is not finite");
    }, params);
}

// Cycles through shuffled batches of a fixed id set, reshuffling per pass.
class BatchCycle {
  public:
    BatchCycle(std::vector<int> ids, std::size_t batch_size, std::uint64_t seed, std::uint64_t salt)
        : ids_(std::move(ids)), batch_size_(batch_size), seed_(seed), salt_(salt) {}

    const std::vector<int>& next() {
        if (cursor_ >= current_.size()) {
            current_ = chunk_shuffled(ids_, batch_size_, seed_ + pass_++, salt_);
            cursor_ = 0;
        }
        return current_[cursor_++];
    }

  private:
    std::vector<int> ids_;
    std::size_t batch_size_;
    std::uint64_t seed_;
    std::uint64_t salt_;
    std::uint64_t pass_ = 0;
    std::vector<std::vector<int>> current_;
    std::size_t cursor_ = 0;
};

}  // namespace detail

/// Minibatch contrastive training over all data. Keeps the epoch with the
/// lowest held-out contrastive loss (earliest on ties).
template <class Real>
TrainResult<Real> pretrain(DualEncoder<Real> model, const Corpus& corpus, const PretrainConfig& cfg) {
    validate(cfg);
    if (corpus.samples.empty()) throw InputError("corpus is empty");
    std::vector<int> ids;
    for (const auto& s : corpus.samples) ids.push_back(s.sample_id);
    auto [train_ids, val_ids] = detail::holdout(std::move(ids), cfg.validation_fraction, cfg.seed, 11);

    const BatchBuilder gather(corpus);
    const PairBatch val_batch = gather(val_ids);
    const LossOptions opts{model.temperature(), cfg.symmetric_contrastive};
    Optimizer opt(cfg.optimizer_config(), model.arch());

    RunHistory hist;
    hist.kind = "pretrain";
    DualEncoder<Real> best = model;
    double best_objective = -std::numeric_limits<double>::infinity();
    long step = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (const auto& b : chunk_shuffled(train_ids, static_cast<std::size_t>(cfg.batch_size), cfg.seed + epoch, 13)) {
            ++step;
            auto grads = Gradients::zeros(model.arch());
            const double loss = pretrain_loss(model, gather(b), opts, &grads);
            detail::check_finite(loss, static_cast<std::size_t>(step), "contrastive loss");
            opt.step(model.mutable_params(), grads);
            detail::check_finite(model.params(), static_cast<std::size_t>(step));
            LossBreakdown rec;
            rec.l_rm = loss;
            rec.lambda1 = 1.0;
            rec.total = rec.reassembled();
            hist.steps.push_back({epoch, step, rec});
        }
        const double val_loss = pretrain_loss(model, val_batch, opts);
        detail::check_finite(val_loss, static_cast<std::size_t>(step), "validation loss");
        const auto prompts = encode_text(model, corpus.class_prompts());
        const double val_acc = zero_shot_accuracy(model, gather, val_ids, prompts);
        const double objective = -val_loss;
        hist.epochs.push_back({epoch, objective, val_loss, val_acc, 0.0});
        if (objective > best_objective) {
            best_objective = objective;
            best = model;
            hist.selected_checkpoint_epoch = epoch;
        }
    }
    return {std::move(best), std::move(hist)};
}

/// Unlearning from `model` (the original): per step one forget and one
/// retain batch; epochs count passes over the retain training subset. The
/// returned model is the epoch maximizing validation retain accuracy minus
/// validation forget accuracy (earliest on ties).
template <class Real>
TrainResult<Real> unlearn(const DualEncoder<Real>& model, const SplitDataset& split, const UnlearnConfig& cfg) {
    validate(cfg);
    if (split.forget_ids.empty()) throw InputError("forget set is empty");
    if (split.retain_ids.empty()) throw InputError("retain set is empty");
    const Corpus& corpus = split.corpus();

    const FrozenModel<Real> original = snapshot(model);
    DualEncoder<Real> live = model.thawed();

    auto [forget_train, forget_val] = detail::holdout(split.forget_ids, cfg.validation_fraction, cfg.seed, 21);
    auto [retain_train, retain_val] = detail::holdout(split.retain_ids, cfg.validation_fraction, cfg.seed, 22);

    const BatchBuilder gather(corpus);
    const PairBatch forget_val_batch = gather(forget_val);
    const PairBatch retain_val_batch = gather(retain_val);
    const TokenBatch prompts = corpus.class_prompts();
    const LossOptions opts{model.temperature(), cfg.symmetric_contrastive};
    const LossWeights weights = cfg.weights();
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    detail::BatchCycle forget_cycle(forget_train, bs, cfg.seed, 31);
    Optimizer opt(cfg.optimizer_config(), live.arch());

    auto objective_value = [&](const DualEncoder<Real>& m, const PairBatch& f, const PairBatch& r,
                               Gradients* grads) -> LossBreakdown {
        if (cfg.method == Method::CLIPErase) return total_unlearn_loss(m, original, f, r, weights, opts, grads);
        LossBreakdown b;
        b.total = baseline_loss(cfg.method, m, original, f, r, opts, grads);
        return b;
    };

    RunHistory hist;
    hist.kind = std::string(to_string(cfg.method));
    DualEncoder<Real> best = live;
    double best_objective = -std::numeric_limits<double>::infinity();
    long step = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (const auto& rb : chunk_shuffled(retain_train, bs, cfg.seed + epoch, 32)) {
            ++step;
            const PairBatch forget_batch = gather(forget_cycle.next());
            const PairBatch retain_batch = gather(rb);
            auto grads = Gradients::zeros(live.arch());
            const LossBreakdown rec = objective_value(live, forget_batch, retain_batch, &grads);
            detail::check_finite(rec.total, static_cast<std::size_t>(step), "unlearning loss");
            opt.step(live.mutable_params(), grads);
            detail::check_finite(live.params(), static_cast<std::size_t>(step));
            hist.steps.push_back({epoch, step, rec});
        }
        const double val_loss = objective_value(live, forget_val_batch, retain_val_batch, nullptr).total;
        detail::check_finite(val_loss, static_cast<std::size_t>(step), "validation loss");
        const auto prompt_emb = encode_text(live, prompts);
        const double retain_acc = zero_shot_accuracy(live, gather, retain_val, prompt_emb);
        const double forget_acc = zero_shot_accuracy(live, gather, forget_val, prompt_emb);
        const double objective = retain_acc - forget_acc;
        hist.epochs.push_back({epoch, objective, val_loss, retain_acc, forget_acc});
        if (objective > best_objective) {
            best_objective = objective;
            best = live;
            hist.selected_checkpoint_epoch = epoch;
        }
    }
    return {std::move(best), std::move(hist)};
}

/// Mean <img_n, txt_n> over the given pairs under `model`.
template <class Real>
double mean_pair_similarity(const DualEncoder<Real>& model, const Corpus& corpus, const std::vector<int>& ids) {
    const PairBatch b = BatchBuilder(corpus)(ids);
    return forgetting_loss(encode_image(model, b.images), encode_text(model, b.captions));
}

}  // namespace cliperase
