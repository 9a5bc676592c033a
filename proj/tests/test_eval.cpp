#include "cliperase/experiments.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

using namespace cliperase;

namespace {

EmbeddingMatrix unit_rows(const Matrix& m) { return EmbeddingMatrix::normalize(m); }

Matrix random_matrix(Index r, Index c, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
    return m;
}

// Rank of the best positive after a full sort by (similarity desc, id asc).
double sort_oracle_recall(const Matrix& sim, const std::vector<std::vector<Index>>& positives, int k) {
    int hits = 0;
    for (Index q = 0; q < sim.rows(); ++q) {
        std::vector<Index> order(static_cast<std::size_t>(sim.cols()));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return sim(q, a) > sim(q, b); });
        const auto& pos = positives[static_cast<std::size_t>(q)];
        for (std::size_t r = 0; r < order.size(); ++r) {
            if (std::find(pos.begin(), pos.end(), order[r]) != pos.end()) {
                hits += static_cast<int>(r) < k;
                break;
            }
        }
    }
    return static_cast<double>(hits) / static_cast<double>(sim.rows());
}

struct Pretrained {
    std::shared_ptr<const Corpus> corpus;
    DualEncoder<float> model;
};

const Pretrained& pretrained(std::uint64_t seed, int classes = 10) {
    static std::map<std::pair<std::uint64_t, int>, Pretrained> cache;
    const auto key = std::make_pair(seed, classes);
    auto it = cache.find(key);
    if (it == cache.end()) {
        CorpusConfig cc;
        cc.seed = seed;
        cc.num_classes = classes;
        auto corpus = std::make_shared<const Corpus>(generate_corpus(cc));
        PretrainConfig pc;
        pc.seed = seed;
        auto res = pretrain(init_model<float>(ArchConfig{}, seed), *corpus, pc);
        it = cache.emplace(key, Pretrained{corpus, std::move(res.model)}).first;
    }
    return it->second;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("cliperase_test_eval_" + name)).string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

// --- zero-shot prediction -----------------------------------------------------

TEST(ZeroShotPredict, ExactMatchWins) {
    std::mt19937_64 rng(1);
    const auto prompts = unit_rows(random_matrix(4, 6, rng));
    Matrix img(1, 6);
    img.row(0) = prompts.row(2);
    EXPECT_EQ(argmax_rows(similarity_matrix(EmbeddingMatrix::from_unit_rows(img), prompts)), std::vector<int>{2});
}

TEST(ZeroShotPredict, HandBuiltSimilarities) {
    Matrix s(2, 3);
    s << 0.9, 0.1, 0.0, 0.2, 0.8, 0.1;
    EXPECT_EQ(argmax_rows(s), (std::vector<int>{0, 1}));
}

TEST(ZeroShotPredict, IdenticalPromptsTieToClassZero) {
    const auto m = init_model<float>(ArchConfig{}, 3);
    std::mt19937_64 rng(2);
    const TokenBatch prompts(5, TokenSeq{1, 2, 3, 1, 12});
    EXPECT_EQ(zero_shot_predict(m, random_matrix(7, 64, rng), prompts), std::vector<int>(7, 0));
    EXPECT_THROW(zero_shot_predict(m, random_matrix(2, 64, rng), TokenBatch{}), InputError);
}

TEST(ZeroShotPredict, AgreesWithExhaustiveArgmax) {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> coarse(-2, 2);
    for (int trial = 0; trial < 300; ++trial) {
        // Coarse values make ties common.
        Matrix s(4, 5);
        for (Index i = 0; i < s.size(); ++i) s.data()[i] = coarse(rng) * 0.25;
        const auto got = argmax_rows(s);
        for (Index r = 0; r < s.rows(); ++r) {
            int best = 0;
            for (int c = 0; c < 5; ++c)
                if (s(r, c) > s(r, best)) best = c;
            EXPECT_EQ(got[static_cast<std::size_t>(r)], best);
        }
    }
}

// --- zero-shot retrieval --------------------------------------------------------

TEST(ZeroShotRetrieve, ThreePromptsSixImagesBruteForce) {
    Matrix p(3, 3), g(6, 3);
    p << 1, 0, 0, 0, 1, 0, 0, 0, 1;
    g << 0.2, 0.9, 0.1, 0.8, 0.1, 0.3, 0.1, 0.2, 0.7, 0.7, 0.7, 0.0, 0.0, 0.3, 0.9, 0.95, 0.0, 0.1;
    const auto pe = unit_rows(p), ge = unit_rows(g);
    const Matrix s = similarity_matrix(pe, ge);
    const auto top = argmax_rows(s);
    for (Index q = 0; q < 3; ++q) {
        Index best = 0;
        for (Index j = 0; j < 6; ++j)
            if (s(q, j) > s(q, best)) best = j;
        EXPECT_EQ(top[static_cast<std::size_t>(q)], best);
    }
    // Gallery classes: 1, 0, 2, 0, 2, 0 -> prompt c retrieves class c for every prompt.
    const std::vector<int> gallery_class = {1, 0, 2, 0, 2, 0};
    int correct = 0;
    for (int c = 0; c < 3; ++c) correct += gallery_class[static_cast<std::size_t>(top[static_cast<std::size_t>(c)])] == c;
    EXPECT_EQ(correct, 3);
}

TEST(ZeroShotRetrieve, DegeneratePools) {
    const auto m = init_model<float>(ArchConfig{}, 4);
    std::mt19937_64 rng(4);
    const TokenBatch prompts = {{1, 2, 3, 1, 12}, {1, 2, 3, 1, 13}, {1, 2, 3, 1, 14}};
    EXPECT_EQ(zero_shot_retrieve(m, prompts, random_matrix(1, 64, rng)), std::vector<int>(3, 0));
    EXPECT_THROW(zero_shot_retrieve(m, prompts, Matrix(0, 64)), InputError);
    Matrix pool = random_matrix(5, 64, rng);
    const auto first = zero_shot_retrieve(m, prompts, pool);
    pool.row(4) = pool.row(first[0]);  // a duplicate later in the pool never wins the tie
    EXPECT_EQ(zero_shot_retrieve(m, prompts, pool)[0], first[0]);
}

// --- recall@k ----------------------------------------------------------------------

TEST(RecallAtK, HandSetFourByEight) {
    Matrix s(4, 8);
    s << 0.9, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7,  // positive 0 ranked first
        0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2,   // positive 5 ranked sixth
        0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8,   // positive 3 ranked fifth
        0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5;   // all tied: positive 2 ranked third
    const std::vector<std::vector<Index>> pos = {{0}, {5}, {3}, {2}};
    EXPECT_DOUBLE_EQ(recall_at_k(s, pos, 1), 0.25);
    EXPECT_DOUBLE_EQ(recall_at_k(s, pos, 5), 0.75);
    EXPECT_DOUBLE_EQ(recall_at_k(s, pos, 1), sort_oracle_recall(s, pos, 1));
    EXPECT_DOUBLE_EQ(recall_at_k(s, pos, 5), sort_oracle_recall(s, pos, 5));
}

TEST(RecallAtK, BoundaryAndLargeK) {
    Matrix s(1, 8);
    s << 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2;
    const std::vector<std::vector<Index>> pos = {{5}};
    EXPECT_EQ(recall_at_k(s, pos, 5), 0.0);
    EXPECT_EQ(recall_at_k(s, pos, 6), 1.0);
    EXPECT_EQ(recall_at_k(s, pos, 8), 1.0);
    EXPECT_EQ(recall_at_k(s, pos, 100), 1.0);
}

TEST(RecallAtK, Errors) {
    Matrix s = Matrix::Zero(2, 3);
    EXPECT_THROW(recall_at_k(s, {{0}, {}}, 1), InputError);
    EXPECT_THROW(recall_at_k(s, {{0}, {1}}, 0), InputError);
    EXPECT_THROW(recall_at_k(s, {{0}}, 1), ShapeError);
    EXPECT_THROW(recall_at_k(s, {{0}, {7}}, 1), InputError);
}

TEST(RecallAtK, MatchesFullSortOracleAndIsMonotone) {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> dim(1, 12), coarse(-3, 3), coin(0, 3);
    for (int trial = 0; trial < 200; ++trial) {
        const Index nq = dim(rng), ng = dim(rng);
        Matrix s(nq, ng);
        for (Index i = 0; i < s.size(); ++i) s.data()[i] = coarse(rng) / 3.0;
        std::vector<std::vector<Index>> pos(static_cast<std::size_t>(nq));
        for (auto& p : pos) {
            for (Index g = 0; g < ng; ++g)
                if (coin(rng) == 0) p.push_back(g);
            if (p.empty()) p.push_back(std::uniform_int_distribution<Index>(0, ng - 1)(rng));
        }
        double prev = 0.0;
        for (int k = 1; k <= 12; ++k) {
            const double r = recall_at_k(s, pos, k);
            EXPECT_DOUBLE_EQ(r, sort_oracle_recall(s, pos, k)) << "trial " << trial << " k " << k;
            EXPECT_GE(r, prev);
            prev = r;
        }
    }
}

// --- evaluation suite -------------------------------------------------------------

TEST(EvaluateSuite, PretrainedModelScoresHighOnBothSides) {
    const auto& p = pretrained(1);
    const auto split = split_by_class(p.corpus, {0});
    const auto r = evaluate_suite(p.model, split);
    ASSERT_TRUE(r.forget.has_value());
    EXPECT_GE(r.forget->zeroshot_prediction_acc, 0.9);
    EXPECT_GE(r.retain.zeroshot_prediction_acc, 0.9);
    EXPECT_EQ(r.forget->sample_count, 100u);
    EXPECT_EQ(r.retain.sample_count, 900u);
    EXPECT_EQ(r.forget->retrieval_prompt_count, 1u);
    EXPECT_EQ(r.retain.retrieval_prompt_count, 9u);
}

TEST(EvaluateSuite, InvariantsAndPurity) {
    const auto& p = pretrained(2);
    const auto split = split_by_class(p.corpus, {3, 6});
    const auto r = evaluate_suite(p.model, split);
    for (const SplitMetrics* m : {&*r.forget, &r.retain}) {
        EXPECT_GE(m->zeroshot_prediction_acc, 0.0);
        EXPECT_LE(m->zeroshot_prediction_acc, 1.0);
        ASSERT_TRUE(m->zeroshot_retrieval_acc.has_value());
        EXPECT_GE(*m->zeroshot_retrieval_acc, 0.0);
        EXPECT_LE(*m->zeroshot_retrieval_acc, 1.0);
        for (const auto* rec : {&m->image_retrieval_recall, &m->text_retrieval_recall}) {
            ASSERT_EQ(rec->size(), 3u);
            EXPECT_LE(rec->at(1), rec->at(5));
            EXPECT_LE(rec->at(5), rec->at(10));
            EXPECT_LE(rec->at(10), 1.0);
            EXPECT_GE(rec->at(1), 0.0);
        }
    }
    EXPECT_EQ(evaluate_suite(p.model, split), r);
    // Zero-shot accuracy from the suite matches the standalone helper.
    const auto acc = zero_shot_accuracies(p.model, split);
    EXPECT_DOUBLE_EQ(*acc.forget_acc, r.forget->zeroshot_prediction_acc);
    EXPECT_DOUBLE_EQ(acc.retain_acc, r.retain.zeroshot_prediction_acc);
}

TEST(EvaluateSuite, RandomModelIsNearChance) {
    // A random encoder maps each class to an arbitrary prompt, so correctness
    // varies per class rather than per sample; average over many initializations
    // and compare with the binomial spread over (classes x models) trials.
    const auto corpus = std::make_shared<const Corpus>(generate_corpus(CorpusConfig{}));
    const auto split = split_by_class(corpus, {0});
    const int models = 40, classes = corpus->num_classes;
    double total = 0.0;
    for (int s = 0; s < models; ++s) {
        const auto r = evaluate_suite(init_model<float>(ArchConfig{}, 1000 + s), split);
        total += (r.forget->zeroshot_prediction_acc * 100 + r.retain.zeroshot_prediction_acc * 900) / 1000.0;
    }
    const double mean = total / models;
    const double p = 1.0 / classes;
    const double sigma = std::sqrt(p * (1 - p) / (classes * models));
    EXPECT_NEAR(mean, p, 3 * sigma);
}

TEST(EvaluateSuite, ReportJsonAndCsvShape) {
    const auto& p = pretrained(1);
    const auto r = evaluate_suite(p.model, split_by_class(p.corpus, {0}));
    const auto j = to_json(r);
    EXPECT_EQ(j.at("format_version"), 1);
    EXPECT_EQ(j.at("selector"), "class:0");
    for (const char* side : {"forget", "retain"}) {
        const auto& s = j.at(side);
        EXPECT_TRUE(s.at("zeroshot_prediction").contains("acc"));
        EXPECT_TRUE(s.at("zeroshot_retrieval").contains("acc"));
        for (const char* task : {"image_retrieval", "text_retrieval"})
            for (const char* k : {"recall@1", "recall@5", "recall@10"}) EXPECT_TRUE(s.at(task).contains(k));
    }
    const auto csv = metrics_csv(r);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 2 * (2 + 6));
    EXPECT_EQ(csv.rfind("split,task,metric,value\n", 0), 0u);
}

// --- ablation and sweep ------------------------------------------------------------

TEST(Ablation, RowsFollowTheExpectedOrdering) {
    int fm_forgets = 0, rm_keeps = 0, cm_no_worse = 0;
    for (std::uint64_t seed : {1, 2, 3}) {
        const auto& p = pretrained(seed);
        UnlearnConfig c;
        c.seed = seed;
        c.epochs = 5;
        const auto r = run_ablation(p.model, split_by_class(p.corpus, {static_cast<int>(seed)}), c);
        ASSERT_EQ(r.rows.size(), 3u);
        EXPECT_EQ(r.rows[0].modules, "FM");
        EXPECT_EQ(r.rows[1].modules, "FM+RM");
        EXPECT_EQ(r.rows[2].modules, "FM+RM+CM");
        EXPECT_EQ(r.rows[0].lambda1, 0.0);
        EXPECT_EQ(r.rows[1].lambda3, 0.0);
        fm_forgets += r.rows[0].forget_acc < *r.original.forget_acc;
        rm_keeps += r.rows[1].retain_acc >= r.rows[0].retain_acc;
        cm_no_worse += r.rows[2].forget_acc <= r.rows[1].forget_acc;
        const auto csv = ablation_csv(r);
        EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
    }
    EXPECT_GE(fm_forgets, 2);
    EXPECT_GE(rm_keeps, 2);
    EXPECT_GE(cm_no_worse, 2);
}

TEST(Sweep, FractionZeroAndChanceLevelForgetting) {
    const auto& p = pretrained(1, 30);
    UnlearnConfig c;
    c.seed = 1;
    c.epochs = 5;
    const std::vector<Method> methods = {Method::CLIPErase, Method::GA};
    const auto r = sweep_forget_fraction(p.model, p.corpus, methods, default_sweep_fractions(), c, 1);
    ASSERT_EQ(r.rows.size(), default_sweep_fractions().size() * methods.size());

    SplitDataset none;
    none.all = p.corpus;
    for (const auto& s : p.corpus->samples) none.retain_ids.push_back(s.sample_id);
    const double original = zero_shot_accuracies(p.model, none).retain_acc;
    for (const auto& row : r.rows) {
        if (row.fraction == 0.0) {
            EXPECT_FALSE(row.forget_acc.has_value());
            EXPECT_EQ(row.retain_acc, original);
        } else {
            ASSERT_TRUE(row.forget_acc.has_value());
            EXPECT_EQ(row.forget_classes, static_cast<int>(std::lround(row.fraction * 30)));
            if (row.method == Method::CLIPErase) {
                EXPECT_LE(*row.forget_acc, 1.0 / 30.0) << row.fraction;
            }
        }
    }
    const auto csv = sweep_csv(r);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 10);
    EXPECT_THROW(sweep_forget_fraction(p.model, p.corpus, methods, {0.01}, c, 1), ConfigError);
    EXPECT_THROW(sweep_forget_fraction(p.model, p.corpus, {}, {0.1}, c, 1), ConfigError);
}

// Gradient ascent alone loses more retain accuracy as the forget set grows.
TEST(Sweep, GradientAscentDegradesWithLargerForgetSets) {
    int holds = 0;
    for (std::uint64_t seed : {1, 2, 3}) {
        const auto& p = pretrained(seed, 30);
        UnlearnConfig c;
        c.seed = seed;
        const auto r = sweep_forget_fraction(p.model, p.corpus, {Method::GA}, {0.03, 0.30}, c, seed);
        holds += r.rows[1].retain_acc < r.rows[0].retain_acc;
    }
    EXPECT_GE(holds, 2);
}

// --- embedding export -------------------------------------------------------------

TEST(ExportEmbeddings, RecordsDeterminismAndRoundTrip) {
    const auto& p = pretrained(1);
    const std::vector<PairSample> samples(p.corpus->samples.begin(), p.corpus->samples.begin() + 25);
    const auto a = temp_path("a.csv"), b = temp_path("b.csv");
    export_embeddings(p.model, samples, a);
    export_embeddings(p.model, samples, b);
    EXPECT_EQ(slurp(a), slurp(b));

    const auto recs = load_embeddings(a);
    ASSERT_EQ(recs.size(), 50u);
    std::vector<int> ids;
    for (const auto& s : samples) ids.push_back(s.sample_id);
    const auto img = encode_image(p.model, BatchBuilder(*p.corpus)(ids).images);
    for (std::size_t i = 0; i < recs.size(); ++i) {
        EXPECT_EQ(recs[i].sample_id, samples[i / 2].sample_id);
        EXPECT_EQ(recs[i].modality, i % 2 == 0 ? "image" : "text");
        EXPECT_EQ(recs[i].class_id, samples[i / 2].class_id);
        ASSERT_EQ(recs[i].values.size(), 32u);
    }
    for (Index k = 0; k < 32; ++k) EXPECT_EQ(recs[2].values[static_cast<std::size_t>(k)], img.data()(1, k));
    std::filesystem::remove(a);
    std::filesystem::remove(b);
    EXPECT_THROW(export_embeddings(p.model, samples, "/nonexistent-dir/x.csv"), IoError);
    EXPECT_THROW(embeddings_csv(p.model, {}), InputError);
}
