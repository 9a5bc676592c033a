#pragma once

#include "cliperase/errors.hpp"
#include "cliperase/linalg.hpp"

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cliperase {

enum class Activation { Tanh, Relu };

inline std::string_view to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

inline Activation parse_activation(std::string_view s) {
    if (s == "tanh") return Activation::Tanh;
    if (s == "relu") return Activation::Relu;
    throw ConfigError("unknown activation '" + std::string(s) + "'");
}

/// Layer widths and fixed hyperparameters of the dual encoder.
///
/// Image path: d_img -> hidden (activation) -> d_emb -> L2 normalize.
/// Text path: token table (vocab_size x d_tok) -> mean over non-pad tokens
/// -> d_emb -> L2 normalize. Token id 0 is padding.
struct ArchConfig {
    int d_img = 64;
    int hidden = 64;
    int d_emb = 32;
    int vocab_size = 64;
    int max_len = 8;
    int d_tok = 32;
    Activation activation = Activation::Tanh;
    double temperature = 0.07;

    void validate() const {
        auto positive = [](int v, const char* name) {
            if (v <= 0) throw ConfigError(std::string("arch.") + name + " must be positive, got " + std::to_string(v));
        };
        positive(d_img, "d_img");
        positive(hidden, "hidden");
        positive(d_emb, "d_emb");
        positive(vocab_size, "vocab_size");
        positive(max_len, "max_len");
        positive(d_tok, "d_tok");
        if (vocab_size < 2) throw ConfigError("arch.vocab_size must leave room for padding plus one token");
        if (!(temperature > 0.0) || !std::isfinite(temperature))
            throw ConfigError("arch.temperature must be positive and finite");
    }

    friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

inline constexpr int kPadToken = 0;

using TokenSeq = std::vector<int>;
using TokenBatch = std::vector<TokenSeq>;

/// All trainable tensors. Also used (with T = double) for gradients and
/// optimizer moments, so every set shares one layout.
template <class T>
struct EncoderParams {
    RowMatrix<T> image_w1;     // hidden x d_img
    RowMatrix<T> image_b1;     // 1 x hidden
    RowMatrix<T> image_w2;     // d_emb x hidden
    RowMatrix<T> image_b2;     // 1 x d_emb
    RowMatrix<T> token_table;  // vocab_size x d_tok
    RowMatrix<T> text_w;       // d_emb x d_tok
    RowMatrix<T> text_b;       // 1 x d_emb

    static EncoderParams zeros(const ArchConfig& a) {
        EncoderParams p;
        p.image_w1 = RowMatrix<T>::Zero(a.hidden, a.d_img);
        p.image_b1 = RowMatrix<T>::Zero(1, a.hidden);
        p.image_w2 = RowMatrix<T>::Zero(a.d_emb, a.hidden);
        p.image_b2 = RowMatrix<T>::Zero(1, a.d_emb);
        p.token_table = RowMatrix<T>::Zero(a.vocab_size, a.d_tok);
        p.text_w = RowMatrix<T>::Zero(a.d_emb, a.d_tok);
        p.text_b = RowMatrix<T>::Zero(1, a.d_emb);
        return p;
    }

    friend bool operator==(const EncoderParams& a, const EncoderParams& b) {
        bool same = true;
        zip_params([&](std::string_view, const auto& x, const auto& y) {
            same = same && x.rows() == y.rows() && x.cols() == y.cols() && x == y;
        }, a, b);
        return same;
    }
};

using Gradients = EncoderParams<double>;

/// Calls fn(name, block_of_set_0, block_of_set_1, ...) for every tensor, in
/// a fixed order. The order is part of the checkpoint format.
template <class Fn, class... Sets>
void zip_params(Fn&& fn, Sets&... sets) {
    fn("image.w1", sets.image_w1...);
    fn("image.b1", sets.image_b1...);
    fn("image.w2", sets.image_w2...);
    fn("image.b2", sets.image_b2...);
    fn("text.token_table", sets.token_table...);
    fn("text.w", sets.text_w...);
    fn("text.b", sets.text_b...);
}

template <class T>
std::size_t parameter_count(const EncoderParams<T>& p) {
    std::size_t n = 0;
    zip_params([&](std::string_view, const auto& m) { n += static_cast<std::size_t>(m.size()); }, p);
    return n;
}

/// N x d matrix whose rows are unit vectors.
class EmbeddingMatrix {
  public:
    static constexpr double kNormTolerance = 1e-6;

    EmbeddingMatrix() = default;

    /// Normalizes each row; a zero row has no direction and is rejected.
    static EmbeddingMatrix normalize(Matrix raw) {
        for (Index r = 0; r < raw.rows(); ++r) {
            const double n = raw.row(r).norm();
            if (!(n > 0.0) || !std::isfinite(n)) throw InputError("cannot normalize a zero or non-finite embedding row");
            raw.row(r) /= n;
        }
        return EmbeddingMatrix(std::move(raw));
    }

    /// Wraps rows that are already unit-norm, checking the invariant.
    static EmbeddingMatrix from_unit_rows(Matrix rows) {
        for (Index r = 0; r < rows.rows(); ++r) {
            if (std::abs(rows.row(r).norm() - 1.0) > kNormTolerance)
                throw InputError("row " + std::to_string(r) + " is not unit-norm");
        }
        return EmbeddingMatrix(std::move(rows));
    }

    Index rows() const { return data_.rows(); }
    Index dim() const { return data_.cols(); }
    const Matrix& data() const { return data_; }
    auto row(Index i) const { return data_.row(i); }

  private:
    explicit EmbeddingMatrix(Matrix m) : data_(std::move(m)) {}
    Matrix data_;
};

/// Image encoder, text encoder and temperature. Parameters are stored as
/// Real (float in production, double for gradient checks); all forward and
/// backward arithmetic runs in double.
template <class Real>
class DualEncoder {
  public:
    using real_type = Real;

    DualEncoder(ArchConfig arch, EncoderParams<Real> params) : arch_(std::move(arch)), params_(std::move(params)) {
        arch_.validate();
        const auto expected = EncoderParams<Real>::zeros(arch_);
        zip_params([](std::string_view name, const auto& have, const auto& want) {
            if (have.rows() != want.rows() || have.cols() != want.cols())
                throw ShapeError("parameter " + std::string(name) + " has wrong shape");
        }, params_, expected);
    }

    const ArchConfig& arch() const { return arch_; }
    double temperature() const { return arch_.temperature; }
    const EncoderParams<Real>& params() const { return params_; }
    bool frozen() const { return frozen_; }

    EncoderParams<Real>& mutable_params() {
        if (frozen_) throw MutationError("parameters of a frozen model are read-only");
        return params_;
    }

    /// Unfrozen deep copy.
    DualEncoder thawed() const {
        DualEncoder copy(*this);
        copy.frozen_ = false;
        return copy;
    }

    template <class To>
    DualEncoder<To> cast() const {
        EncoderParams<To> out;
        zip_params([](std::string_view, auto& dst, const auto& src) { dst = src.template cast<To>(); }, out, params_);
        return DualEncoder<To>(arch_, std::move(out));
    }

    void freeze() { frozen_ = true; }

  private:
    ArchConfig arch_;
    EncoderParams<Real> params_;
    bool frozen_ = false;
};

/// Deterministic initialization: weights ~ N(0, 1/fan_in), biases zero,
/// token table ~ N(0, 1).
template <class Real = float>
DualEncoder<Real> init_model(const ArchConfig& arch, std::uint64_t seed) {
    arch.validate();
    std::mt19937_64 rng(seed);
    auto fill = [&rng](RowMatrix<Real>& m, double stddev) {
        std::normal_distribution<double> dist(0.0, stddev);
        for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Real>(dist(rng));
    };
    auto p = EncoderParams<Real>::zeros(arch);
    fill(p.image_w1, 1.0 / std::sqrt(static_cast<double>(arch.d_img)));
    fill(p.image_w2, 1.0 / std::sqrt(static_cast<double>(arch.hidden)));
    fill(p.token_table, 1.0);
    fill(p.text_w, 1.0 / std::sqrt(static_cast<double>(arch.d_tok)));
    p.token_table.row(kPadToken).setZero();
    return DualEncoder<Real>(arch, std::move(p));
}

// ---------------------------------------------------------------------------
// Forward / backward

struct ImageForward {
    Matrix hidden_pre;
    Matrix hidden;
    Vector norms;
    EmbeddingMatrix embeddings;
};

struct TextForward {
    TokenBatch tokens;  // truncated to max_len, padding stripped
    Matrix pooled;
    Vector norms;
    EmbeddingMatrix embeddings;
};

namespace detail {

inline Matrix activate(const Matrix& x, Activation a) {
    if (a == Activation::Tanh) return x.array().tanh().matrix();
    return x.array().max(0.0).matrix();
}

inline Matrix activation_grad(const Matrix& pre, const Matrix& post, Activation a) {
    if (a == Activation::Tanh) return (1.0 - post.array().square()).matrix();
    return (pre.array() > 0.0).cast<double>().matrix();
}

// x * w^T + b computed one dot product per entry, so each output row depends
// only on its own input row and never on the batch it was encoded with.
inline Matrix row_affine(const Matrix& x, const Matrix& w, const Matrix& b) {
    Matrix out(x.rows(), w.rows());
    for (Index n = 0; n < x.rows(); ++n)
        for (Index j = 0; j < w.rows(); ++j) out(n, j) = x.row(n).dot(w.row(j)) + b(0, j);
    return out;
}

// Final encoder step: y = z / |z|. Returns (y, |z| per row).
inline std::pair<EmbeddingMatrix, Vector> normalize_rows(const Matrix& raw) {
    Vector norms = raw.rowwise().norm();
    return {EmbeddingMatrix::normalize(raw), std::move(norms)};
}

// d/dz of z/|z| applied to upstream gradient g.
inline Matrix normalize_backward(const EmbeddingMatrix& y, const Vector& norms, const Matrix& g) {
    const Matrix& e = y.data();
    Vector proj = (e.array() * g.array()).rowwise().sum();
    Matrix out = (g.array() - e.array().colwise() * proj.array()).matrix();
    return (out.array().colwise() / norms.array()).matrix();
}

}  // namespace detail

template <class Real>
ImageForward image_forward(const DualEncoder<Real>& model, const Matrix& images) {
    const auto& a = model.arch();
    if (images.rows() == 0) throw InputError("image batch is empty");
    if (images.cols() != a.d_img)
        throw ShapeError("image feature dimension " + std::to_string(images.cols()) + " != d_img " +
                         std::to_string(a.d_img));
    if (!images.allFinite()) throw InputError("image batch contains non-finite values");
    const auto& p = model.params();
    ImageForward f;
    f.hidden_pre = detail::row_affine(images, as_double(p.image_w1), as_double(p.image_b1));
    f.hidden = detail::activate(f.hidden_pre, a.activation);
    Matrix raw = detail::row_affine(f.hidden, as_double(p.image_w2), as_double(p.image_b2));
    auto [emb, norms] = detail::normalize_rows(raw);
    f.embeddings = std::move(emb);
    f.norms = std::move(norms);
    return f;
}

template <class Real>
void image_backward(const DualEncoder<Real>& model, const Matrix& images, const ImageForward& f,
                    const Matrix& d_embeddings, Gradients& grads) {
    const auto& p = model.params();
    Matrix d_raw = detail::normalize_backward(f.embeddings, f.norms, d_embeddings);
    grads.image_w2 += d_raw.transpose() * f.hidden;
    grads.image_b2 += d_raw.colwise().sum();
    Matrix d_hidden = d_raw * as_double(p.image_w2);
    Matrix d_pre = (d_hidden.array() *
                    detail::activation_grad(f.hidden_pre, f.hidden, model.arch().activation).array())
                       .matrix();
    grads.image_w1 += d_pre.transpose() * images;
    grads.image_b1 += d_pre.colwise().sum();
}

template <class Real>
EmbeddingMatrix encode_image(const DualEncoder<Real>& model, const Matrix& images) {
    return image_forward(model, images).embeddings;
}

template <class Real>
TextForward text_forward(const DualEncoder<Real>& model, const TokenBatch& batch) {
    const auto& a = model.arch();
    if (batch.empty()) throw InputError("token batch is empty");
    const auto& p = model.params();
    const auto& table = p.token_table;
    TextForward f;
    f.tokens.reserve(batch.size());
    f.pooled = Matrix::Zero(static_cast<Index>(batch.size()), a.d_tok);
    for (std::size_t n = 0; n < batch.size(); ++n) {
        TokenSeq kept;
        const std::size_t len = std::min(batch[n].size(), static_cast<std::size_t>(a.max_len));
        for (std::size_t i = 0; i < len; ++i) {
            const int t = batch[n][i];
            if (t < 0 || t >= a.vocab_size)
                throw InputError("token id " + std::to_string(t) + " outside vocabulary of size " +
                                 std::to_string(a.vocab_size));
            if (t == kPadToken) continue;
            kept.push_back(t);
            f.pooled.row(static_cast<Index>(n)) += table.row(t).template cast<double>();
        }
        if (kept.empty()) throw InputError("caption " + std::to_string(n) + " has no non-padding tokens");
        f.pooled.row(static_cast<Index>(n)) /= static_cast<double>(kept.size());
        f.tokens.push_back(std::move(kept));
    }
    Matrix raw = detail::row_affine(f.pooled, as_double(p.text_w), as_double(p.text_b));
    auto [emb, norms] = detail::normalize_rows(raw);
    f.embeddings = std::move(emb);
    f.norms = std::move(norms);
    return f;
}

template <class Real>
void text_backward(const DualEncoder<Real>& model, const TextForward& f, const Matrix& d_embeddings,
                   Gradients& grads) {
    const auto& p = model.params();
    Matrix d_raw = detail::normalize_backward(f.embeddings, f.norms, d_embeddings);
    grads.text_w += d_raw.transpose() * f.pooled;
    grads.text_b += d_raw.colwise().sum();
    Matrix d_pooled = d_raw * as_double(p.text_w);
    for (std::size_t n = 0; n < f.tokens.size(); ++n) {
        const double inv = 1.0 / static_cast<double>(f.tokens[n].size());
        for (int t : f.tokens[n]) grads.token_table.row(t) += inv * d_pooled.row(static_cast<Index>(n));
    }
}

template <class Real>
EmbeddingMatrix encode_text(const DualEncoder<Real>& model, const TokenBatch& batch) {
    return text_forward(model, batch).embeddings;
}

/// Entry (n, k) = <img_n, txt_k>. Each entry is an independent dot product,
/// so identical rows produce bitwise-identical scores and ties stay ties
/// (a blocked GEMM may round equal columns differently).
inline Matrix similarity_matrix(const EmbeddingMatrix& img, const EmbeddingMatrix& txt) {
    if (img.dim() != txt.dim())
        throw ShapeError("embedding dims differ: " + std::to_string(img.dim()) + " vs " + std::to_string(txt.dim()));
    Matrix out(img.rows(), txt.rows());
    for (Index n = 0; n < img.rows(); ++n)
        for (Index k = 0; k < txt.rows(); ++k) out(n, k) = img.row(n).dot(txt.row(k));
    return out;
}

// ---------------------------------------------------------------------------
// Frozen reference model

/// Read-only deep copy of a model, shareable across threads.
template <class Real>
class FrozenModel {
  public:
    explicit FrozenModel(DualEncoder<Real> model) {
        model.freeze();
        model_ = std::make_shared<const DualEncoder<Real>>(std::move(model));
    }

    const DualEncoder<Real>& wrapped() const { return *model_; }
    static constexpr bool frozen_flag = true;

  private:
    std::shared_ptr<const DualEncoder<Real>> model_;
};

template <class Real>
FrozenModel<Real> snapshot(const DualEncoder<Real>& model) {
    return FrozenModel<Real>(model.thawed());
}

}  // namespace cliperase
