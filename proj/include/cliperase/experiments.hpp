#pragma once

#include "cliperase/data.hpp"
#include "cliperase/engine.hpp"
#include "cliperase/metrics.hpp"
#include "cliperase/model.hpp"

#include <charconv>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace cliperase {

/// Zero-shot prediction accuracy on both sides of a split.
struct AccuracyPair {
    std::optional<double> forget_acc;
    double retain_acc = 0.0;
};

template <class Real>
AccuracyPair zero_shot_accuracies(const DualEncoder<Real>& model, const SplitDataset& split) {
    const BatchBuilder gather(split.corpus());
    const auto prompts = encode_text(model, split.corpus().class_prompts());
    AccuracyPair out;
    if (!split.forget_ids.empty()) out.forget_acc = zero_shot_accuracy(model, gather, split.forget_ids, prompts);
    out.retain_acc = zero_shot_accuracy(model, gather, split.retain_ids, prompts);
    return out;
}

// ---------------------------------------------------------------------------
// Ablation over the three loss terms

struct AblationRow {
    std::string modules;  // "FM", "FM+RM", "FM+RM+CM"
    double lambda1 = 0.0, lambda2 = 0.0, lambda3 = 0.0;
    double forget_acc = 0.0;
    double retain_acc = 0.0;
    int selected_epoch = 0;
};

struct AblationResult {
    AccuracyPair original;
    std::vector<AblationRow> rows;  // fixed order: FM, FM+RM, FM+RM+CM
};

/// Three CLIPErase runs from the same model and seed with lambda masks
/// (0,l2,0), (l1,l2,0), (l1,l2,l3) taken from `cfg`.
template <class Real>
AblationResult run_ablation(const DualEncoder<Real>& model, const SplitDataset& split, UnlearnConfig cfg) {
    cfg.method = Method::CLIPErase;
    AblationResult out;
    out.original = zero_shot_accuracies(model, split);
    const struct {
        const char* name;
        bool rm, cm;
    } masks[] = {{"FM", false, false}, {"FM+RM", true, false}, {"FM+RM+CM", true, true}};
    for (const auto& m : masks) {
        UnlearnConfig run = cfg;
        run.lambda1 = m.rm ? cfg.lambda1 : 0.0;
        run.lambda3 = m.cm ? cfg.lambda3 : 0.0;
        const auto res = unlearn(model, split, run);
        const auto acc = zero_shot_accuracies(res.model, split);
        out.rows.push_back({m.name, run.lambda1, run.lambda2, run.lambda3, acc.forget_acc.value_or(0.0), acc.retain_acc,
                            res.history.selected_checkpoint_epoch});
    }
    return out;
}

inline std::string format_number(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, p);
}

inline std::string ablation_csv(const AblationResult& r) {
    std::string out = "modules,lambda1,lambda2,lambda3,forget_acc,retain_acc,selected_epoch\n";
    for (const auto& row : r.rows)
        out += row.modules + "," + format_number(row.lambda1) + "," + format_number(row.lambda2) + "," +
               format_number(row.lambda3) + "," + format_number(row.forget_acc) + "," + format_number(row.retain_acc) +
               "," + std::to_string(row.selected_epoch) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Forget-fraction sweep

inline const std::vector<double>& default_sweep_fractions() {
    static const std::vector<double> f = {0.0, 0.03, 0.10, 0.20, 0.30};
    return f;
}

struct SweepRow {
    double fraction = 0.0;
    Method method = Method::CLIPErase;
    int forget_classes = 0;
    std::optional<double> forget_acc;  // absent when nothing is forgotten
    double retain_acc = 0.0;
};

struct SweepResult {
    std::vector<double> forget_fractions;
    std::vector<SweepRow> rows;  // fraction-major, methods in the requested order
};

/// For each fraction, forgets round(fraction * C) classes (drawn with
/// split_seed + fraction index) and unlearns the same pretrained model with
/// every method. Fraction 0 performs no unlearning.
template <class Real>
SweepResult sweep_forget_fraction(const DualEncoder<Real>& pretrained, std::shared_ptr<const Corpus> corpus,
                                  const std::vector<Method>& methods, const std::vector<double>& fractions,
                                  const UnlearnConfig& cfg, std::uint64_t split_seed) {
    if (methods.empty()) throw ConfigError("sweep needs at least one method");
    for (double f : fractions) {
        if (!(f >= 0.0 && f < 1.0)) throw ConfigError("sweep fraction " + format_number(f) + " outside [0, 1)");
        if (f > 0.0 && std::lround(f * corpus->num_classes) == 0)
            throw ConfigError("sweep fraction " + format_number(f) + " rounds to zero classes");
    }
    SweepResult out;
    out.forget_fractions = fractions;
    for (std::size_t fi = 0; fi < fractions.size(); ++fi) {
        const double f = fractions[fi];
        if (f == 0.0) {
            SplitDataset none;
            none.all = corpus;
            none.selector = "none";
            for (const auto& s : corpus->samples) none.retain_ids.push_back(s.sample_id);
            std::sort(none.retain_ids.begin(), none.retain_ids.end());
            const double acc = zero_shot_accuracies(pretrained, none).retain_acc;
            for (Method m : methods) out.rows.push_back({f, m, 0, std::nullopt, acc});
            continue;
        }
        const SplitDataset split = split_by_fraction(corpus, f, split_seed + fi);
        for (Method m : methods) {
            UnlearnConfig run = cfg;
            run.method = m;
            run.seed = cfg.seed + fi;
            const auto res = unlearn(pretrained, split, run);
            const auto acc = zero_shot_accuracies(res.model, split);
            out.rows.push_back({f, m, static_cast<int>(split.forget_classes.size()), acc.forget_acc, acc.retain_acc});
        }
    }
    return out;
}

inline std::string sweep_csv(const SweepResult& r) {
    std::string out = "fraction,method,forget_classes,forget_acc,retain_acc\n";
    for (const auto& row : r.rows)
        out += format_number(row.fraction) + "," + std::string(to_string(row.method)) + "," +
               std::to_string(row.forget_classes) + "," + (row.forget_acc ? format_number(*row.forget_acc) : "") + "," +
               format_number(row.retain_acc) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Embedding export

struct EmbeddingRecord {
    int sample_id = 0;
    std::string modality;  // "image" or "text"
    int class_id = 0;
    std::vector<double> values;
    friend bool operator==(const EmbeddingRecord&, const EmbeddingRecord&) = default;
};

/// CSV with header `sample_id,modality,class_id,e0..e{d-1}`; one image row
/// then one text row per sample, in the given order.
template <class Real>
std::string embeddings_csv(const DualEncoder<Real>& model, const std::vector<PairSample>& samples) {
    if (samples.empty()) throw InputError("no samples to export");
    const Index d = model.arch().d_emb;
    Matrix images(static_cast<Index>(samples.size()), samples.front().image.size());
    TokenBatch captions;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        images.row(static_cast<Index>(i)) = samples[i].image;
        captions.push_back(samples[i].caption);
    }
    const auto img = encode_image(model, images);
    const auto txt = encode_text(model, captions);
    std::string out = "sample_id,modality,class_id";
    for (Index k = 0; k < d; ++k) out += ",e" + std::to_string(k);
    out += "\n";
    auto emit = [&](const PairSample& s, const char* tag, auto row) {
        out += std::to_string(s.sample_id) + "," + tag + "," + std::to_string(s.class_id);
        for (Index k = 0; k < d; ++k) out += "," + format_number(row(k));
        out += "\n";
    };
    for (std::size_t i = 0; i < samples.size(); ++i) {
        emit(samples[i], "image", img.row(static_cast<Index>(i)));
        emit(samples[i], "text", txt.row(static_cast<Index>(i)));
    }
    return out;
}

template <class Real>
void export_embeddings(const DualEncoder<Real>& model, const std::vector<PairSample>& samples, const std::string& path) {
    const std::string csv = embeddings_csv(model, samples);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(csv.data(), static_cast<std::streamsize>(csv.size()));
    if (!out) throw IoError("failed writing '" + path + "'");
}

inline std::vector<EmbeddingRecord> load_embeddings(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line.rfind("sample_id,modality,class_id", 0) != 0)
        throw ParseError(1, "missing embedding CSV header");
    const auto dims = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) - 2;
    std::vector<EmbeddingRecord> out;
    std::size_t ln = 1;
    while (std::getline(in, line)) {
        ++ln;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
        if (f.size() != dims + 3) throw ParseError(ln, "expected " + std::to_string(dims + 3) + " fields");
        EmbeddingRecord r;
        try {
            r.sample_id = std::stoi(f[0]);
            r.modality = f[1];
            r.class_id = std::stoi(f[2]);
            for (std::size_t k = 0; k < dims; ++k) r.values.push_back(std::stod(f[3 + k]));
        } catch (const std::logic_error&) {
            throw ParseError(ln, "bad numeric field");
        }
        if (r.modality != "image" && r.modality != "text") throw ParseError(ln, "bad modality '" + r.modality + "'");
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace cliperase
