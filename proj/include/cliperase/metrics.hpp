#pragma once

#include "cliperase/data.hpp"
#include "cliperase/errors.hpp"
#include "cliperase/linalg.hpp"
#include "cliperase/model.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

namespace cliperase {

inline constexpr std::array<int, 3> kRecallCutoffs = {1, 5, 10};

// ---------------------------------------------------------------------------
// Similarity-level primitives. Ties always go to the lowest index.

/// Row-wise argmax of an (items x classes) similarity table.
inline std::vector<int> argmax_rows(const Matrix& sim) {
    if (sim.cols() == 0) throw InputError("no candidates to choose from");
    std::vector<int> out(static_cast<std::size_t>(sim.rows()));
    for (Index r = 0; r < sim.rows(); ++r) {
        Index best = 0;
        for (Index c = 1; c < sim.cols(); ++c)
            if (sim(r, c) > sim(r, best)) best = c;
        out[static_cast<std::size_t>(r)] = static_cast<int>(best);
    }
    return out;
}

/// Fraction of queries with at least one positive among the top-k gallery
/// items of `sim` (queries x gallery).
inline double recall_at_k(const Matrix& sim, const std::vector<std::vector<Index>>& positives, int k) {
    if (k < 1) throw InputError("k must be at least 1");
    if (static_cast<std::size_t>(sim.rows()) != positives.size())
        throw ShapeError("positives list does not match the number of queries");
    if (sim.rows() == 0) throw InputError("no queries");
    std::size_t hits = 0;
    for (Index q = 0; q < sim.rows(); ++q) {
        const auto& pos = positives[static_cast<std::size_t>(q)];
        if (pos.empty()) throw InputError("query " + std::to_string(q) + " has no positives");
        // The best-ranked positive decides the hit; its rank is the number of
        // gallery items ordered strictly before it.
        Index best = pos.front();
        for (Index p : pos) {
            if (p < 0 || p >= sim.cols()) throw InputError("positive id out of gallery range");
            if (sim(q, p) > sim(q, best) || (sim(q, p) == sim(q, best) && p < best)) best = p;
        }
        const double s = sim(q, best);
        Index ahead = 0;
        for (Index g = 0; g < sim.cols() && ahead < k; ++g)
            if (sim(q, g) > s || (sim(q, g) == s && g < best)) ++ahead;
        if (ahead < k) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(sim.rows());
}

inline double recall_at_k(const EmbeddingMatrix& queries, const EmbeddingMatrix& gallery,
                          const std::vector<std::vector<Index>>& positives, int k) {
    return recall_at_k(similarity_matrix(queries, gallery), positives, k);
}

// ---------------------------------------------------------------------------
// Model-level tasks

/// Zero-shot classification: argmax over class prompts of <image, prompt>.
template <class Real>
std::vector<int> zero_shot_predict(const DualEncoder<Real>& model, const Matrix& images, const TokenBatch& prompts) {
    if (prompts.empty()) throw InputError("prompt set is empty");
    return argmax_rows(similarity_matrix(encode_image(model, images), encode_text(model, prompts)));
}

/// Index into image_pool of the best image for each prompt.
template <class Real>
std::vector<int> zero_shot_retrieve(const DualEncoder<Real>& model, const TokenBatch& prompts, const Matrix& image_pool) {
    if (prompts.empty()) throw InputError("prompt set is empty");
    if (image_pool.rows() == 0) throw InputError("image pool is empty");
    return argmax_rows(similarity_matrix(encode_text(model, prompts), encode_image(model, image_pool)));
}

/// Text-to-image (`captions` query `images`) recall@k.
template <class Real>
double recall_at_k(const DualEncoder<Real>& model, const TokenBatch& queries, const Matrix& gallery,
                   const std::vector<std::vector<Index>>& positives, int k) {
    return recall_at_k(encode_text(model, queries), encode_image(model, gallery), positives, k);
}

/// Image-to-text recall@k.
template <class Real>
double recall_at_k(const DualEncoder<Real>& model, const Matrix& queries, const TokenBatch& gallery,
                   const std::vector<std::vector<Index>>& positives, int k) {
    return recall_at_k(encode_image(model, queries), encode_text(model, gallery), positives, k);
}

// ---------------------------------------------------------------------------
// Report

struct SplitMetrics {
    std::size_t sample_count = 0;
    double zeroshot_prediction_acc = 0.0;
    std::optional<double> zeroshot_retrieval_acc;  // absent when no class prompt belongs to this side
    std::size_t retrieval_prompt_count = 0;
    std::map<int, double> image_retrieval_recall;  // text query -> image gallery
    std::map<int, double> text_retrieval_recall;   // image query -> caption gallery

    friend bool operator==(const SplitMetrics&, const SplitMetrics&) = default;
};

struct MetricsReport {
    std::string selector;
    std::optional<SplitMetrics> forget;  // absent for an empty forget set
    SplitMetrics retain;

    friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

inline constexpr const char* kZeroShotRetrievalDefinition =
    "per class prompt, top-1 image over the full corpus; correct when that image has the prompt's class";
inline constexpr const char* kRetrievalPositiveDefinition = "gallery items sharing the query's class";

/// Embeds every image, caption and class prompt once and derives all four
/// tasks for both sides of the split from those embeddings.
template <class Real>
MetricsReport evaluate_suite(const DualEncoder<Real>& model, const SplitDataset& split,
                             std::optional<TokenBatch> prompts = std::nullopt) {
    const Corpus& corpus = split.corpus();
    const TokenBatch class_prompts = prompts ? *prompts : corpus.class_prompts();
    if (static_cast<int>(class_prompts.size()) != corpus.num_classes)
        throw InputError("need exactly one prompt per class");

    const std::size_t n = corpus.size();
    Matrix images(static_cast<Index>(n), corpus.d_img);
    TokenBatch captions;
    captions.reserve(n);
    std::vector<int> labels(n);
    std::unordered_map<int, Index> row_of;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& s = corpus.samples[i];
        images.row(static_cast<Index>(i)) = s.image;
        captions.push_back(s.caption);
        labels[i] = s.class_id;
        row_of[s.sample_id] = static_cast<Index>(i);
    }
    const EmbeddingMatrix img = encode_image(model, images);
    const EmbeddingMatrix txt = encode_text(model, captions);
    const EmbeddingMatrix prm = encode_text(model, class_prompts);

    const std::vector<int> predicted = argmax_rows(similarity_matrix(img, prm));
    const std::vector<int> top_image = argmax_rows(similarity_matrix(prm, img));
    const Matrix text_to_image = similarity_matrix(txt, img);

    std::vector<std::vector<Index>> by_class(static_cast<std::size_t>(corpus.num_classes));
    for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(static_cast<Index>(i));

    std::unordered_set<int> forget_classes(split.forget_classes.begin(), split.forget_classes.end());

    auto side = [&](const std::vector<int>& ids, bool forget_side) {
        SplitMetrics m;
        m.sample_count = ids.size();
        std::vector<Index> rows;
        rows.reserve(ids.size());
        for (int id : ids) rows.push_back(row_of.at(id));

        std::size_t correct = 0;
        for (Index r : rows) correct += predicted[static_cast<std::size_t>(r)] == labels[static_cast<std::size_t>(r)];
        m.zeroshot_prediction_acc = static_cast<double>(correct) / static_cast<double>(rows.size());

        std::size_t prompts_used = 0, prompts_hit = 0;
        for (int c = 0; c < corpus.num_classes; ++c) {
            if (forget_classes.count(c) != static_cast<std::size_t>(forget_side)) continue;
            ++prompts_used;
            prompts_hit += labels[static_cast<std::size_t>(top_image[static_cast<std::size_t>(c)])] == c;
        }
        m.retrieval_prompt_count = prompts_used;
        if (prompts_used > 0) m.zeroshot_retrieval_acc = static_cast<double>(prompts_hit) / static_cast<double>(prompts_used);

        Matrix t2i(static_cast<Index>(rows.size()), text_to_image.cols());
        Matrix i2t(static_cast<Index>(rows.size()), text_to_image.rows());
        std::vector<std::vector<Index>> positives;
        positives.reserve(rows.size());
        for (std::size_t q = 0; q < rows.size(); ++q) {
            t2i.row(static_cast<Index>(q)) = text_to_image.row(rows[q]);
            i2t.row(static_cast<Index>(q)) = text_to_image.col(rows[q]).transpose();
            positives.push_back(by_class[static_cast<std::size_t>(labels[static_cast<std::size_t>(rows[q])])]);
        }
        for (int k : kRecallCutoffs) {
            m.image_retrieval_recall[k] = recall_at_k(t2i, positives, k);
            m.text_retrieval_recall[k] = recall_at_k(i2t, positives, k);
        }
        return m;
    };

    MetricsReport report;
    report.selector = split.selector;
    if (!split.forget_ids.empty()) report.forget = side(split.forget_ids, true);
    if (split.retain_ids.empty()) throw InputError("retain set is empty");
    report.retain = side(split.retain_ids, false);
    return report;
}

/// Zero-shot prediction accuracy over the given sample ids, using
/// precomputed prompt embeddings.
template <class Real>
double zero_shot_accuracy(const DualEncoder<Real>& model, const BatchBuilder& gather, const std::vector<int>& ids,
                          const EmbeddingMatrix& prompt_embeddings) {
    if (ids.empty()) throw InputError("no samples to score");
    const PairBatch b = gather(ids);
    const auto pred = argmax_rows(similarity_matrix(encode_image(model, b.images), prompt_embeddings));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) correct += pred[i] == gather.sample(ids[i]).class_id;
    return static_cast<double>(correct) / static_cast<double>(ids.size());
}

inline nlohmann::json to_json(const SplitMetrics& m) {
    auto recalls = [](const std::map<int, double>& r) {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [k, v] : r) j["recall@" + std::to_string(k)] = v;
        return j;
    };
    nlohmann::json j;
    j["sample_count"] = m.sample_count;
    j["zeroshot_prediction"] = {{"acc", m.zeroshot_prediction_acc}};
    j["zeroshot_retrieval"] = {{"acc", m.zeroshot_retrieval_acc ? nlohmann::json(*m.zeroshot_retrieval_acc) : nlohmann::json()},
                               {"prompt_count", m.retrieval_prompt_count}};
    j["image_retrieval"] = recalls(m.image_retrieval_recall);
    j["text_retrieval"] = recalls(m.text_retrieval_recall);
    return j;
}

inline nlohmann::json to_json(const MetricsReport& r) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["selector"] = r.selector;
    j["definitions"] = {{"zeroshot_retrieval_acc", kZeroShotRetrievalDefinition},
                        {"retrieval_positives", kRetrievalPositiveDefinition}};
    j["forget"] = r.forget ? to_json(*r.forget) : nlohmann::json();
    j["retain"] = to_json(r.retain);
    return j;
}

/// Flat table: split,task,metric,value. Absent metrics are skipped.
inline std::string metrics_csv(const MetricsReport& r) {
    std::string out = "split,task,metric,value\n";
    auto num = [](double v) {
        char buf[64];
        auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
        return std::string(buf, p);
    };
    auto emit = [&](const char* name, const SplitMetrics& m) {
        out += std::string(name) + ",zeroshot_prediction,acc," + num(m.zeroshot_prediction_acc) + "\n";
        if (m.zeroshot_retrieval_acc)
            out += std::string(name) + ",zeroshot_retrieval,acc," + num(*m.zeroshot_retrieval_acc) + "\n";
        for (const auto& [k, v] : m.image_retrieval_recall)
            out += std::string(name) + ",image_retrieval,recall@" + std::to_string(k) + "," + num(v) + "\n";
        for (const auto& [k, v] : m.text_retrieval_recall)
            out += std::string(name) + ",text_retrieval,recall@" + std::to_string(k) + "," + num(v) + "\n";
    };
    if (r.forget) emit("forget", *r.forget);
    emit("retain", r.retain);
    return out;
}

}  // namespace cliperase
