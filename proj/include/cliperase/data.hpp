#pragma once

#include "cliperase/errors.hpp"
#include "cliperase/linalg.hpp"
#include "cliperase/losses.hpp"
#include "cliperase/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace cliperase {

/// One image/caption pair.
struct PairSample {
    int sample_id = 0;
    int class_id = 0;
    TokenSeq caption;
    Eigen::RowVectorXd image;

    friend bool operator==(const PairSample& a, const PairSample& b) {
        return a.sample_id == b.sample_id && a.class_id == b.class_id && a.caption == b.caption &&
               a.image.size() == b.image.size() && a.image == b.image;
    }
};

/// A paired corpus with its vocabulary. Token 0 is padding; class c is named
/// by token class_tokens[c]; the zero-shot prompt for class c is
/// prompt_prefix followed by that token ("a photo of a {class}").
struct Corpus {
    int num_classes = 0;
    int d_img = 0;
    int max_len = 0;
    std::vector<std::string> vocab;
    std::vector<int> class_tokens;
    TokenSeq prompt_prefix;
    std::vector<PairSample> samples;

    std::size_t size() const { return samples.size(); }

    int token_id(const std::string& word) const {
        auto it = std::find(vocab.begin(), vocab.end(), word);
        if (it == vocab.end()) throw ConfigError("word '" + word + "' is not in the corpus vocabulary");
        return static_cast<int>(it - vocab.begin());
    }

    std::string class_name(int c) const { return vocab.at(static_cast<std::size_t>(class_tokens.at(c))); }

    TokenBatch class_prompts() const {
        TokenBatch out;
        for (int c = 0; c < num_classes; ++c) {
            TokenSeq p = prompt_prefix;
            p.push_back(class_tokens[static_cast<std::size_t>(c)]);
            out.push_back(std::move(p));
        }
        return out;
    }

    /// Position of each sample id in `samples`.
    std::unordered_map<int, std::size_t> id_index() const {
        std::unordered_map<int, std::size_t> idx;
        idx.reserve(samples.size());
        for (std::size_t i = 0; i < samples.size(); ++i) {
            if (!idx.emplace(samples[i].sample_id, i).second)
                throw InputError("duplicate sample id " + std::to_string(samples[i].sample_id));
        }
        return idx;
    }

    friend bool operator==(const Corpus&, const Corpus&) = default;
};

struct CorpusConfig {
    int num_classes = 10;
    int pairs_per_class = 100;
    int d_img = 64;
    double noise_sigma = 0.1;
    int max_len = 8;
    int vocab_capacity = 64;
    std::uint64_t seed = 7;
};

namespace detail {

inline const std::vector<std::string>& class_name_pool() {
    static const std::vector<std::string> names = {
        "apple",   "car",      "dog",    "cat",    "bicycle", "tree",    "house",  "boat",   "bird",   "flower",
        "chair",   "clock",    "horse",  "train",  "truck",   "cup",     "lamp",   "bottle", "rabbit", "tiger",
        "whale",   "bridge",   "castle", "cloud",  "mountain","orange",  "pear",   "rose",   "snake",  "tank",
        "tractor", "mushroom", "forest", "lion",   "bear",    "bee",     "crab",   "fox",    "wolf",   "plate"};
    return names;
}

inline const std::vector<std::string>& filler_words() {
    static const std::vector<std::string> words = {"small", "large", "red", "blue", "bright", "dark", "old", "shiny"};
    return words;
}

}  // namespace detail

/// Synthetic corpus: images are orthonormal class prototypes plus isotropic
/// Gaussian noise; captions are "a photo of a [fillers] {class}" with up to
/// max_len - 5 random filler words.
inline Corpus generate_corpus(const CorpusConfig& cfg) {
    if (cfg.num_classes < 2) throw ConfigError("num_classes must be at least 2");
    if (cfg.pairs_per_class < 1) throw ConfigError("pairs_per_class must be at least 1");
    if (cfg.d_img < 1) throw ConfigError("d_img must be positive");
    if (cfg.max_len < 5) throw ConfigError("max_len must fit the 5-token caption template");
    if (!(cfg.noise_sigma >= 0.0) || !std::isfinite(cfg.noise_sigma))
        throw ConfigError("noise_sigma must be finite and nonnegative");
    const auto& names = detail::class_name_pool();
    const auto& fillers = detail::filler_words();
    const int base = 4 + static_cast<int>(fillers.size());
    if (cfg.num_classes > static_cast<int>(names.size()) || base + cfg.num_classes > cfg.vocab_capacity)
        throw ConfigError("num_classes " + std::to_string(cfg.num_classes) + " exceeds vocabulary capacity " +
                          std::to_string(cfg.vocab_capacity));
    if (cfg.num_classes > cfg.d_img) throw ConfigError("num_classes cannot exceed d_img (orthogonal prototypes)");

    Corpus c;
    c.num_classes = cfg.num_classes;
    c.d_img = cfg.d_img;
    c.max_len = cfg.max_len;
    c.vocab = {"<pad>", "a", "photo", "of"};
    c.vocab.insert(c.vocab.end(), fillers.begin(), fillers.end());
    for (int k = 0; k < cfg.num_classes; ++k) {
        c.class_tokens.push_back(static_cast<int>(c.vocab.size()));
        c.vocab.push_back(names[static_cast<std::size_t>(k)]);
    }
    c.prompt_prefix = {1, 2, 3, 1};

    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    Matrix g(cfg.d_img, cfg.num_classes);
    for (Index i = 0; i < g.size(); ++i) g.data()[i] = gauss(rng);
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    const Eigen::MatrixXd protos = qr.householderQ() * Eigen::MatrixXd::Identity(cfg.d_img, cfg.num_classes);

    const int max_fillers = cfg.max_len - 5;
    std::uniform_int_distribution<int> n_fill(0, max_fillers);
    std::uniform_int_distribution<int> pick_fill(0, static_cast<int>(fillers.size()) - 1);

    int next_id = 0;
    for (int k = 0; k < cfg.num_classes; ++k) {
        for (int i = 0; i < cfg.pairs_per_class; ++i) {
            PairSample s;
            s.sample_id = next_id++;
            s.class_id = k;
            s.image = protos.col(k).transpose();
            for (Index j = 0; j < s.image.size(); ++j) s.image(j) += cfg.noise_sigma * gauss(rng);
            s.caption = c.prompt_prefix;
            const int nf = n_fill(rng);
            for (int f = 0; f < nf; ++f) s.caption.push_back(4 + pick_fill(rng));
            s.caption.push_back(c.class_tokens[static_cast<std::size_t>(k)]);
            c.samples.push_back(std::move(s));
        }
    }
    return c;
}

inline Corpus generate_corpus(int num_classes, int pairs_per_class, int d_img, std::uint64_t seed) {
    CorpusConfig cfg;
    cfg.num_classes = num_classes;
    cfg.pairs_per_class = pairs_per_class;
    cfg.d_img = d_img;
    cfg.seed = seed;
    return generate_corpus(cfg);
}

// ---------------------------------------------------------------------------
// Forget / retain split

/// D, D_f and D_r = D - D_f. Id lists are sorted ascending.
struct SplitDataset {
    std::shared_ptr<const Corpus> all;
    std::vector<int> forget_ids;
    std::vector<int> retain_ids;
    std::string selector;
    std::vector<int> forget_classes;  // empty for keyword splits

    const Corpus& corpus() const { return *all; }
};

namespace detail {

template <class Pred>
SplitDataset partition(std::shared_ptr<const Corpus> corpus, Pred in_forget, std::string selector) {
    SplitDataset s;
    for (const auto& p : corpus->samples) (in_forget(p) ? s.forget_ids : s.retain_ids).push_back(p.sample_id);
    std::sort(s.forget_ids.begin(), s.forget_ids.end());
    std::sort(s.retain_ids.begin(), s.retain_ids.end());
    s.all = std::move(corpus);
    s.selector = std::move(selector);
    return s;
}

}  // namespace detail

inline SplitDataset split_by_class(std::shared_ptr<const Corpus> corpus, std::vector<int> forget_classes) {
    std::sort(forget_classes.begin(), forget_classes.end());
    forget_classes.erase(std::unique(forget_classes.begin(), forget_classes.end()), forget_classes.end());
    if (forget_classes.empty()) throw ConfigError("forget class set is empty");
    if (static_cast<int>(forget_classes.size()) >= corpus->num_classes)
        throw ConfigError("forget class set must be a proper subset of the classes");
    std::vector<bool> mask(static_cast<std::size_t>(corpus->num_classes), false);
    std::string sel = "class:";
    for (std::size_t i = 0; i < forget_classes.size(); ++i) {
        const int c = forget_classes[i];
        if (c < 0 || c >= corpus->num_classes) throw ConfigError("forget class " + std::to_string(c) + " does not exist");
        mask[static_cast<std::size_t>(c)] = true;
        sel += (i ? "," : "") + std::to_string(c);
    }
    auto s = detail::partition(
        std::move(corpus), [&](const PairSample& p) { return mask[static_cast<std::size_t>(p.class_id)]; }, sel);
    s.forget_classes = std::move(forget_classes);
    return s;
}

inline SplitDataset split_by_class(const Corpus& corpus, std::vector<int> forget_classes) {
    return split_by_class(std::make_shared<const Corpus>(corpus), std::move(forget_classes));
}

/// Every pair whose caption contains `token` is forgotten.
inline SplitDataset split_by_keyword(std::shared_ptr<const Corpus> corpus, int token) {
    if (token < 0 || token >= static_cast<int>(corpus->vocab.size()))
        throw ConfigError("token " + std::to_string(token) + " is not in the vocabulary");
    auto s = detail::partition(
        std::move(corpus),
        [&](const PairSample& p) { return std::find(p.caption.begin(), p.caption.end(), token) != p.caption.end(); },
        "keyword:" + std::to_string(token));
    if (s.forget_ids.empty()) throw ConfigError("keyword token " + std::to_string(token) + " matches no sample");
    if (s.retain_ids.empty()) throw ConfigError("keyword token " + std::to_string(token) + " matches every sample");
    // Keyword splits that coincide with whole classes still report them.
    for (int c = 0; c < s.all->num_classes; ++c)
        if (s.all->class_tokens[static_cast<std::size_t>(c)] == token) s.forget_classes.push_back(c);
    return s;
}

inline SplitDataset split_by_keyword(const Corpus& corpus, int token) {
    return split_by_keyword(std::make_shared<const Corpus>(corpus), token);
}

/// Forgets round(fraction * C) classes drawn uniformly without replacement.
inline SplitDataset split_by_fraction(std::shared_ptr<const Corpus> corpus, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("forget fraction must lie in (0, 1)");
    const int k = static_cast<int>(std::lround(fraction * corpus->num_classes));
    if (k == 0) throw ConfigError("forget fraction rounds to zero classes");
    std::vector<int> classes(static_cast<std::size_t>(corpus->num_classes));
    for (int c = 0; c < corpus->num_classes; ++c) classes[static_cast<std::size_t>(c)] = c;
    std::mt19937_64 rng(seed);
    std::shuffle(classes.begin(), classes.end(), rng);
    classes.resize(static_cast<std::size_t>(k));
    return split_by_class(std::move(corpus), classes);
}

// ---------------------------------------------------------------------------
// Batching

enum class Subset { Forget, Retain, All };

inline std::vector<int> subset_ids(const SplitDataset& split, Subset which) {
    switch (which) {
        case Subset::Forget: return split.forget_ids;
        case Subset::Retain: return split.retain_ids;
        case Subset::All: {
            std::vector<int> ids;
            for (const auto& p : split.all->samples) ids.push_back(p.sample_id);
            std::sort(ids.begin(), ids.end());
            return ids;
        }
    }
    return {};
}

/// Shuffles `ids` with (epoch_seed, salt) and chunks them; the final partial
/// chunk is kept.
inline std::vector<std::vector<int>> chunk_shuffled(std::vector<int> ids, std::size_t batch_size,
                                                    std::uint64_t epoch_seed, std::uint64_t salt) {
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (ids.empty()) throw InputError("cannot batch an empty subset");
    std::seed_seq seq{static_cast<std::uint32_t>(epoch_seed), static_cast<std::uint32_t>(epoch_seed >> 32),
                      static_cast<std::uint32_t>(salt)};
    std::mt19937_64 rng(seq);
    std::shuffle(ids.begin(), ids.end(), rng);
    std::vector<std::vector<int>> out;
    for (std::size_t i = 0; i < ids.size(); i += batch_size)
        out.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(i),
                         ids.begin() + static_cast<std::ptrdiff_t>(std::min(ids.size(), i + batch_size)));
    return out;
}

inline std::vector<std::vector<int>> batches(const SplitDataset& split, Subset which, std::size_t batch_size,
                                             std::uint64_t epoch_seed) {
    return chunk_shuffled(subset_ids(split, which), batch_size, epoch_seed, static_cast<std::uint64_t>(which) + 1);
}

/// Gathers samples by id into a PairBatch.
class BatchBuilder {
  public:
    explicit BatchBuilder(const Corpus& corpus) : corpus_(&corpus), index_(corpus.id_index()) {}

    PairBatch operator()(const std::vector<int>& ids) const {
        PairBatch b;
        b.images.resize(static_cast<Index>(ids.size()), corpus_->d_img);
        b.captions.reserve(ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const auto& s = sample(ids[i]);
            b.images.row(static_cast<Index>(i)) = s.image;
            b.captions.push_back(s.caption);
        }
        return b;
    }

    const PairSample& sample(int id) const {
        auto it = index_.find(id);
        if (it == index_.end()) throw InputError("unknown sample id " + std::to_string(id));
        return corpus_->samples[it->second];
    }

  private:
    const Corpus* corpus_;
    std::unordered_map<int, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Corpus file
//
//   cliperase-corpus <version>
//   classes <C>
//   d_img <d>
//   max_len <L>
//   vocab <V> <word_0> ... <word_V-1>
//   class_tokens <C> <tok_0> ... <tok_C-1>
//   prompt_prefix <n> <tok>...
//   samples <N>
//   <sample_id> <class_id> <n_tokens> <tok>... <d image values>     (N lines)
//   end
//
// Floats use the shortest representation that round-trips exactly.

inline constexpr int kCorpusFormatVersion = 1;

namespace detail {

inline void append_double(std::string& out, double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, ptr);
}

class LineReader {
  public:
    explicit LineReader(std::istream& in) : in_(in) {}

    std::istringstream next(const char* what) {
        std::string line;
        if (!std::getline(in_, line)) throw ParseError(line_no_ + 1, std::string("unexpected end of file, expected ") + what);
        ++line_no_;
        return std::istringstream(line);
    }
    std::size_t line() const { return line_no_; }

  private:
    std::istream& in_;
    std::size_t line_no_ = 0;
};

template <class T>
T read_field(std::istringstream& ss, std::size_t line, const char* what) {
    std::string tok;
    if (!(ss >> tok)) throw ParseError(line, std::string("missing ") + what);
    T v{};
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size())
        throw ParseError(line, std::string("bad ") + what + " '" + tok + "'");
    return v;
}

inline void expect_key(std::istringstream& ss, std::size_t line, const std::string& key) {
    std::string k;
    if (!(ss >> k) || k != key) throw ParseError(line, "expected '" + key + "'");
}

inline void expect_end_of_line(std::istringstream& ss, std::size_t line) {
    std::string extra;
    if (ss >> extra) throw ParseError(line, "unexpected trailing field '" + extra + "'");
}

}  // namespace detail

inline std::string serialize_corpus(const Corpus& c) {
    std::string out = "cliperase-corpus " + std::to_string(kCorpusFormatVersion) + "\n";
    out += "classes " + std::to_string(c.num_classes) + "\n";
    out += "d_img " + std::to_string(c.d_img) + "\n";
    out += "max_len " + std::to_string(c.max_len) + "\n";
    out += "vocab " + std::to_string(c.vocab.size());
    for (const auto& w : c.vocab) out += " " + w;
    out += "\nclass_tokens " + std::to_string(c.class_tokens.size());
    for (int t : c.class_tokens) out += " " + std::to_string(t);
    out += "\nprompt_prefix " + std::to_string(c.prompt_prefix.size());
    for (int t : c.prompt_prefix) out += " " + std::to_string(t);
    out += "\nsamples " + std::to_string(c.samples.size()) + "\n";
    for (const auto& s : c.samples) {
        out += std::to_string(s.sample_id) + " " + std::to_string(s.class_id) + " " + std::to_string(s.caption.size());
        for (int t : s.caption) out += " " + std::to_string(t);
        for (Index j = 0; j < s.image.size(); ++j) {
            out += ' ';
            detail::append_double(out, s.image(j));
        }
        out += '\n';
    }
    out += "end\n";
    return out;
}

inline Corpus parse_corpus(std::istream& in) {
    using detail::read_field;
    detail::LineReader r(in);
    Corpus c;
    {
        auto ss = r.next("header");
        detail::expect_key(ss, r.line(), "cliperase-corpus");
        const int version = read_field<int>(ss, r.line(), "format version");
        if (version != kCorpusFormatVersion)
            throw FormatVersionError("corpus format version " + std::to_string(version) + " is not supported (expected " +
                                     std::to_string(kCorpusFormatVersion) + ")");
    }
    auto scalar = [&](const char* key) {
        auto ss = r.next(key);
        detail::expect_key(ss, r.line(), key);
        const int v = read_field<int>(ss, r.line(), key);
        detail::expect_end_of_line(ss, r.line());
        return v;
    };
    c.num_classes = scalar("classes");
    c.d_img = scalar("d_img");
    c.max_len = scalar("max_len");
    if (c.num_classes < 1 || c.d_img < 1 || c.max_len < 1) throw ParseError(r.line(), "nonpositive dimension");
    {
        auto ss = r.next("vocab");
        detail::expect_key(ss, r.line(), "vocab");
        const int n = read_field<int>(ss, r.line(), "vocab size");
        if (n < 1) throw ParseError(r.line(), "empty vocabulary");
        for (int i = 0; i < n; ++i) {
            std::string w;
            if (!(ss >> w)) throw ParseError(r.line(), "vocabulary shorter than declared");
            c.vocab.push_back(std::move(w));
        }
        detail::expect_end_of_line(ss, r.line());
    }
    const int vocab_size = static_cast<int>(c.vocab.size());
    auto token_list = [&](const char* key) {
        auto ss = r.next(key);
        detail::expect_key(ss, r.line(), key);
        const int n = read_field<int>(ss, r.line(), "count");
        if (n < 0) throw ParseError(r.line(), "negative count");
        TokenSeq out;
        for (int i = 0; i < n; ++i) {
            const int t = read_field<int>(ss, r.line(), "token id");
            if (t < 0 || t >= vocab_size) throw ParseError(r.line(), "token id out of vocabulary");
            out.push_back(t);
        }
        detail::expect_end_of_line(ss, r.line());
        return out;
    };
    c.class_tokens = token_list("class_tokens");
    if (static_cast<int>(c.class_tokens.size()) != c.num_classes)
        throw ParseError(r.line(), "class_tokens count differs from classes");
    c.prompt_prefix = token_list("prompt_prefix");
    const int n_samples = scalar("samples");
    c.samples.reserve(static_cast<std::size_t>(std::max(0, n_samples)));
    for (int i = 0; i < n_samples; ++i) {
        auto ss = r.next("sample record");
        const std::size_t ln = r.line();
        PairSample s;
        s.sample_id = read_field<int>(ss, ln, "sample_id");
        s.class_id = read_field<int>(ss, ln, "class_id");
        if (s.class_id < 0 || s.class_id >= c.num_classes) throw ParseError(ln, "class_id out of range");
        const int nt = read_field<int>(ss, ln, "token count");
        if (nt < 1 || nt > c.max_len) throw ParseError(ln, "caption length out of range");
        for (int t = 0; t < nt; ++t) {
            const int tok = read_field<int>(ss, ln, "token id");
            if (tok < 0 || tok >= vocab_size) throw ParseError(ln, "token id out of vocabulary");
            s.caption.push_back(tok);
        }
        s.image.resize(c.d_img);
        for (int j = 0; j < c.d_img; ++j) {
            s.image(j) = read_field<double>(ss, ln, "image value");
            if (!std::isfinite(s.image(j))) throw ParseError(ln, "non-finite image value");
        }
        detail::expect_end_of_line(ss, ln);
        c.samples.push_back(std::move(s));
    }
    {
        auto ss = r.next("end marker");
        detail::expect_key(ss, r.line(), "end");
    }
    try {
        (void)c.id_index();
    } catch (const InputError& e) {
        throw ParseError(r.line(), e.what());
    }
    return c;
}

inline void save_corpus(const Corpus& c, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    const std::string text = serialize_corpus(c);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("failed writing '" + path + "'");
}

inline Corpus load_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    return parse_corpus(in);
}

}  // namespace cliperase
