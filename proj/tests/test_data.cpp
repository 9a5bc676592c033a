#include "cliperase/data.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace cliperase;

namespace {

std::shared_ptr<const Corpus> shared_corpus(int classes = 10, int per_class = 100, std::uint64_t seed = 3) {
    return std::make_shared<const Corpus>(generate_corpus(classes, per_class, 64, seed));
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("cliperase_test_data_" + name)).string();
}

void expect_partition(const SplitDataset& s) {
    std::set<int> f(s.forget_ids.begin(), s.forget_ids.end()), r(s.retain_ids.begin(), s.retain_ids.end());
    EXPECT_EQ(f.size(), s.forget_ids.size());
    EXPECT_EQ(r.size(), s.retain_ids.size());
    for (int id : f) EXPECT_EQ(r.count(id), 0u);
    std::set<int> all;
    for (const auto& p : s.corpus().samples) all.insert(p.sample_id);
    std::set<int> both = f;
    both.insert(r.begin(), r.end());
    EXPECT_EQ(both, all);
}

}  // namespace

TEST(GenerateCorpus, CountsPerClass) {
    const auto c = generate_corpus(10, 100, 64, 3);
    ASSERT_EQ(c.size(), 1000u);
    std::vector<int> per(10, 0);
    std::set<int> ids;
    for (const auto& s : c.samples) {
        ++per[static_cast<std::size_t>(s.class_id)];
        ids.insert(s.sample_id);
        EXPECT_EQ(s.image.size(), 64);
        EXPECT_TRUE(s.image.allFinite());
        EXPECT_LE(static_cast<int>(s.caption.size()), c.max_len);
        const int tok = c.class_tokens[static_cast<std::size_t>(s.class_id)];
        EXPECT_EQ(std::count(s.caption.begin(), s.caption.end(), tok), 1);
    }
    for (int n : per) EXPECT_EQ(n, 100);
    EXPECT_EQ(ids.size(), 1000u);
}

TEST(GenerateCorpus, Deterministic) {
    EXPECT_EQ(generate_corpus(10, 100, 64, 3), generate_corpus(10, 100, 64, 3));
    EXPECT_FALSE(generate_corpus(10, 100, 64, 3) == generate_corpus(10, 100, 64, 4));
}

TEST(GenerateCorpus, CaptionTemplate) {
    const auto c = generate_corpus(10, 20, 64, 1);
    for (const auto& s : c.samples) {
        ASSERT_GE(s.caption.size(), 5u);
        EXPECT_EQ(c.vocab[static_cast<std::size_t>(s.caption[0])], "a");
        EXPECT_EQ(c.vocab[static_cast<std::size_t>(s.caption[1])], "photo");
        EXPECT_EQ(c.vocab[static_cast<std::size_t>(s.caption[2])], "of");
        EXPECT_EQ(c.vocab[static_cast<std::size_t>(s.caption[3])], "a");
        EXPECT_EQ(s.caption.back(), c.class_tokens[static_cast<std::size_t>(s.class_id)]);
    }
    EXPECT_EQ(c.class_prompts()[2], (TokenSeq{1, 2, 3, 1, c.class_tokens[2]}));
}

// Nearest-centroid oracle: centroids from even-indexed samples, classify the odd ones.
TEST(GenerateCorpus, NearestCentroidSeparable) {
    for (std::uint64_t seed : {1, 2, 3, 7}) {
        const auto c = generate_corpus(10, 100, 64, seed);
        std::vector<Eigen::RowVectorXd> centroid(10, Eigen::RowVectorXd::Zero(64));
        std::vector<int> count(10, 0);
        for (std::size_t i = 0; i < c.size(); i += 2) {
            centroid[static_cast<std::size_t>(c.samples[i].class_id)] += c.samples[i].image;
            ++count[static_cast<std::size_t>(c.samples[i].class_id)];
        }
        for (int k = 0; k < 10; ++k) centroid[static_cast<std::size_t>(k)] /= count[static_cast<std::size_t>(k)];
        int correct = 0, total = 0;
        for (std::size_t i = 1; i < c.size(); i += 2) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (int k = 0; k < 10; ++k) {
                const double d = (c.samples[i].image - centroid[static_cast<std::size_t>(k)]).squaredNorm();
                if (d < best_d) best_d = d, best = k;
            }
            correct += best == c.samples[i].class_id;
            ++total;
        }
        EXPECT_GE(static_cast<double>(correct) / total, 0.99) << "seed " << seed;
    }
}

TEST(GenerateCorpus, ConfigErrors) {
    EXPECT_THROW(generate_corpus(1, 10, 64, 1), ConfigError);
    EXPECT_THROW(generate_corpus(10, 0, 64, 1), ConfigError);
    EXPECT_THROW(generate_corpus(60, 10, 64, 1), ConfigError);  // past the vocabulary capacity
    EXPECT_THROW(generate_corpus(20, 10, 8, 1), ConfigError);   // more classes than image dimensions
    CorpusConfig cfg;
    cfg.noise_sigma = -1.0;
    EXPECT_THROW(generate_corpus(cfg), ConfigError);
}

TEST(SplitByClass, CountsAndPartition) {
    const auto c = shared_corpus();
    const auto s = split_by_class(c, {0});
    EXPECT_EQ(s.forget_ids.size(), 100u);
    EXPECT_EQ(s.retain_ids.size(), 900u);
    expect_partition(s);
    for (int id : s.forget_ids) EXPECT_EQ(c->samples[static_cast<std::size_t>(id)].class_id, 0);
    for (int id : s.retain_ids) EXPECT_NE(c->samples[static_cast<std::size_t>(id)].class_id, 0);
    expect_partition(split_by_class(c, {1, 4, 9}));
}

TEST(SplitByClass, Errors) {
    const auto c = shared_corpus();
    EXPECT_THROW(split_by_class(c, {}), ConfigError);
    EXPECT_THROW(split_by_class(c, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9}), ConfigError);
    EXPECT_THROW(split_by_class(c, {10}), ConfigError);
    EXPECT_THROW(split_by_class(c, {-1}), ConfigError);
}

TEST(SplitByKeyword, ClassTokenMatchesClassSplitForEveryClass) {
    const auto c = shared_corpus();
    for (int k = 0; k < c->num_classes; ++k) {
        const auto by_kw = split_by_keyword(c, c->class_tokens[static_cast<std::size_t>(k)]);
        const auto by_cls = split_by_class(c, {k});
        EXPECT_EQ(by_kw.forget_ids, by_cls.forget_ids);
        EXPECT_EQ(by_kw.retain_ids, by_cls.retain_ids);
        EXPECT_EQ(by_kw.forget_classes, std::vector<int>{k});
    }
}

TEST(SplitByKeyword, DegenerateSplitsRejected) {
    const auto c = shared_corpus();
    EXPECT_THROW(split_by_keyword(c, c->token_id("a")), ConfigError);  // in every caption
    EXPECT_THROW(split_by_keyword(c, 0), ConfigError);                 // padding never appears
    EXPECT_THROW(split_by_keyword(c, 9999), ConfigError);
    const auto small = generate_corpus(3, 10, 64, 1);
    EXPECT_THROW(split_by_keyword(small, small.class_tokens.back() + 1), ConfigError);  // beyond the vocabulary
}

TEST(SplitByKeyword, FillerTokenPartition) {
    const auto c = shared_corpus();
    const int red = c->token_id("red");
    const auto s = split_by_keyword(c, red);
    expect_partition(s);
    EXPECT_TRUE(s.forget_classes.empty());
    for (int id : s.forget_ids) {
        const auto& cap = c->samples[static_cast<std::size_t>(id)].caption;
        EXPECT_NE(std::find(cap.begin(), cap.end(), red), cap.end());
    }
}

TEST(SplitByFraction, RoundsClassCount) {
    const auto c = shared_corpus(30, 10, 1);
    const auto s = split_by_fraction(c, 0.10, 5);
    EXPECT_EQ(s.forget_classes.size(), 3u);
    EXPECT_EQ(s.forget_ids.size(), 30u);
    expect_partition(s);
    EXPECT_EQ(split_by_fraction(c, 0.10, 5).forget_ids, s.forget_ids);
    EXPECT_THROW(split_by_fraction(c, 0.0, 5), ConfigError);
    EXPECT_THROW(split_by_fraction(c, 1.0, 5), ConfigError);
    EXPECT_THROW(split_by_fraction(c, 0.01, 5), ConfigError);
}

TEST(Batches, ArithmeticAndCoverage) {
    const auto s = split_by_class(shared_corpus(), {0});
    const auto b = batches(s, Subset::Retain, 32, 17);
    ASSERT_EQ(b.size(), 29u);
    EXPECT_EQ(b.back().size(), 4u);
    for (std::size_t i = 0; i + 1 < b.size(); ++i) EXPECT_EQ(b[i].size(), 32u);
    std::vector<int> seen;
    for (const auto& batch : b) seen.insert(seen.end(), batch.begin(), batch.end());
    std::sort(seen.begin(), seen.end());
    EXPECT_EQ(seen, s.retain_ids);
}

TEST(Batches, DeterministicPerSeedAndSubset) {
    const auto s = split_by_class(shared_corpus(), {0});
    EXPECT_EQ(batches(s, Subset::Retain, 32, 17), batches(s, Subset::Retain, 32, 17));
    EXPECT_NE(batches(s, Subset::Retain, 32, 17), batches(s, Subset::Retain, 32, 18));
    EXPECT_EQ(batches(s, Subset::All, 1000, 1).front().size(), 1000u);
    EXPECT_EQ(batches(s, Subset::Forget, 7, 1).size(), 15u);
}

TEST(Batches, Errors) {
    const auto s = split_by_class(shared_corpus(), {0});
    EXPECT_THROW(batches(s, Subset::Retain, 0, 1), ConfigError);
    SplitDataset empty = s;
    empty.forget_ids.clear();
    EXPECT_THROW(batches(empty, Subset::Forget, 8, 1), InputError);
}

TEST(BatchBuilder, GathersRowsInOrder) {
    const auto c = shared_corpus(3, 5, 2);
    const BatchBuilder gather(*c);
    const auto b = gather({4, 0, 11});
    ASSERT_EQ(b.size(), 3);
    EXPECT_TRUE(b.images.row(0) == c->samples[4].image);
    EXPECT_EQ(b.captions[2], c->samples[11].caption);
    EXPECT_THROW(gather({999}), InputError);
}

TEST(CorpusFile, RoundTrip) {
    const auto c = generate_corpus(5, 7, 16, 9);
    const auto path = temp_path("roundtrip.txt");
    save_corpus(c, path);
    EXPECT_EQ(load_corpus(path), c);
    std::filesystem::remove(path);
}

TEST(CorpusFile, TruncatedFileIsParseError) {
    const auto text = serialize_corpus(generate_corpus(3, 4, 8, 1));
    for (std::size_t cut : {text.size() / 3, text.size() / 2, text.size() - 5}) {
        std::istringstream in(text.substr(0, cut));
        EXPECT_THROW(parse_corpus(in), ParseError) << "cut at " << cut;
    }
    try {
        std::istringstream in(text.substr(0, text.size() - 5));
        parse_corpus(in);
    } catch (const ParseError& e) {
        EXPECT_GT(e.line(), 8u);
    }
}

TEST(CorpusFile, VersionMismatch) {
    auto text = serialize_corpus(generate_corpus(3, 4, 8, 1));
    text.replace(0, text.find('\n'), "cliperase-corpus 2");
    std::istringstream in(text);
    EXPECT_THROW(parse_corpus(in), FormatVersionError);
}

TEST(CorpusFile, MalformedRecords) {
    const auto base = serialize_corpus(generate_corpus(3, 4, 8, 1));
    auto corrupt = [&](const std::string& from, const std::string& to) {
        std::string t = base;
        const auto pos = t.find(from);
        t.replace(pos, from.size(), to);
        std::istringstream in(t);
        return in;
    };
    {
        auto in = corrupt("\nend\n", "\n");
        EXPECT_THROW(parse_corpus(in), ParseError);
    }
    {
        auto in = corrupt("samples 12", "samples 13");
        EXPECT_THROW(parse_corpus(in), ParseError);
    }
    EXPECT_THROW(load_corpus(temp_path("does_not_exist.txt")), IoError);
}
