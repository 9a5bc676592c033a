#pragma once

#include "cliperase/errors.hpp"
#include "cliperase/linalg.hpp"
#include "cliperase/model.hpp"

#include <algorithm>
#include <cctype>
#include <string>
#include <string_view>

namespace cliperase {

/// Scalar loss plus its gradient with respect to the two embedding matrices.
struct EmbeddingLoss {
    double value = 0.0;
    Matrix d_img;
    Matrix d_txt;
};

struct LossOptions {
    double temperature = 0.07;
    bool symmetric = false;  // average image->text and text->image directions
};

/// lambda1 weights retention, lambda2 forgetting, lambda3 consistency.
struct LossWeights {
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    double lambda3 = 1.0;

    void validate() const {
        for (double l : {lambda1, lambda2, lambda3})
            if (!(l >= 0.0) || !std::isfinite(l)) throw ConfigError("loss weights must be finite and nonnegative");
    }
};

struct LossBreakdown {
    double l_fm = 0.0;
    double l_rm = 0.0;
    double l_cm = 0.0;
    double total = 0.0;
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    double lambda3 = 0.0;

    double reassembled() const { return lambda1 * l_rm + lambda2 * l_fm + lambda3 * l_cm; }
    friend bool operator==(const LossBreakdown&, const LossBreakdown&) = default;
};

enum class Method { CLIPErase, GA, GradDiff, KLMin };

inline std::string_view to_string(Method m) {
    switch (m) {
        case Method::CLIPErase: return "CLIPERASE";
        case Method::GA: return "GA";
        case Method::GradDiff: return "GRADDIFF";
        case Method::KLMin: return "KLMIN";
    }
    return "?";
}

inline Method parse_method(std::string_view s) {
    std::string up(s);
    std::transform(up.begin(), up.end(), up.begin(), [](unsigned char c) { return std::toupper(c); });
    if (up == "CLIPERASE") return Method::CLIPErase;
    if (up == "GA") return Method::GA;
    if (up == "GRADDIFF") return Method::GradDiff;
    if (up == "KLMIN") return Method::KLMin;
    throw ConfigError("unknown method '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Embedding-level losses

namespace detail {

inline void check_paired(const EmbeddingMatrix& img, const EmbeddingMatrix& txt) {
    if (img.rows() != txt.rows())
        throw ShapeError("paired batches differ in length: " + std::to_string(img.rows()) + " vs " +
                         std::to_string(txt.rows()));
    if (img.dim() != txt.dim()) throw ShapeError("embedding dims differ");
    if (img.rows() == 0) throw InputError("empty batch");
}

// Cross-entropy of each row of `logits` against its diagonal entry, averaged.
// Returns (loss, d loss / d logits).
inline std::pair<double, Matrix> diagonal_cross_entropy(const Matrix& logits) {
    const Index n = logits.rows();
    const Vector lse = row_logsumexp(logits);
    const double loss = (lse - logits.diagonal()).sum() / static_cast<double>(n);
    Matrix grad = row_softmax(logits);
    grad.diagonal().array() -= 1.0;
    grad /= static_cast<double>(n);
    return {loss, std::move(grad)};
}

}  // namespace detail

/// Image-to-text InfoNCE: -(1/N) sum_n log softmax_k(s_nk / tau)[n].
inline EmbeddingLoss contrastive_loss_grad(const EmbeddingMatrix& img, const EmbeddingMatrix& txt,
                                           const LossOptions& opts) {
    detail::check_paired(img, txt);
    if (!(opts.temperature > 0.0)) throw ConfigError("temperature must be positive");
    const Matrix logits = similarity_matrix(img, txt) / opts.temperature;
    auto [loss, d_logits] = detail::diagonal_cross_entropy(logits);
    if (opts.symmetric) {
        auto [loss_t, d_logits_t] = detail::diagonal_cross_entropy(logits.transpose());
        loss = 0.5 * (loss + loss_t);
        d_logits = 0.5 * (d_logits + d_logits_t.transpose());
    }
    const Matrix d_sim = d_logits / opts.temperature;
    return {loss, d_sim * txt.data(), d_sim.transpose() * img.data()};
}

inline double contrastive_loss(const EmbeddingMatrix& img, const EmbeddingMatrix& txt, const LossOptions& opts) {
    return contrastive_loss_grad(img, txt, opts).value;
}

inline double contrastive_loss(const EmbeddingMatrix& img, const EmbeddingMatrix& txt, double tau) {
    return contrastive_loss(img, txt, LossOptions{tau, false});
}

/// Retention is the contrastive objective restricted to retain-set batches.
inline EmbeddingLoss retention_loss_grad(const EmbeddingMatrix& img_r, const EmbeddingMatrix& txt_r,
                                         const LossOptions& opts) {
    return contrastive_loss_grad(img_r, txt_r, opts);
}

inline double retention_loss(const EmbeddingMatrix& img_r, const EmbeddingMatrix& txt_r, double tau) {
    return contrastive_loss(img_r, txt_r, tau);
}

/// Mean matched-pair similarity (1/N_f) sum_n <img_n, txt_n>.
inline EmbeddingLoss forgetting_loss_grad(const EmbeddingMatrix& img_f, const EmbeddingMatrix& txt_f) {
    detail::check_paired(img_f, txt_f);
    const double n = static_cast<double>(img_f.rows());
    const double value = (img_f.data().array() * txt_f.data().array()).sum() / n;
    return {value, txt_f.data() / n, img_f.data() / n};
}

inline double forgetting_loss(const EmbeddingMatrix& img_f, const EmbeddingMatrix& txt_f) {
    return forgetting_loss_grad(img_f, txt_f).value;
}

/// Mean over rows of KL(softmax(reference_row) || softmax(current_row)).
/// Returns the value and the gradient with respect to `current`.
inline std::pair<double, Matrix> softmax_kl(const Matrix& reference, const Matrix& current) {
    if (reference.rows() != current.rows() || reference.cols() != current.cols())
        throw ShapeError("consistency inputs differ in shape");
    if (reference.rows() == 0) throw InputError("empty batch");
    const double n = static_cast<double>(reference.rows());
    const Vector lse_ref = row_logsumexp(reference);
    const Vector lse_cur = row_logsumexp(current);
    const Matrix log_ref = reference.colwise() - lse_ref;
    const Matrix log_cur = current.colwise() - lse_cur;
    const Matrix p_ref = log_ref.array().exp().matrix();
    double total = 0.0;
    for (Index r = 0; r < reference.rows(); ++r)
        total += (p_ref.row(r).array() * (log_ref.row(r) - log_cur.row(r)).array()).sum();
    Matrix grad = (log_cur.array().exp().matrix() - p_ref) / n;
    return {std::max(0.0, total / n), std::move(grad)};
}

// ---------------------------------------------------------------------------
// Model-level objectives

/// Images and captions for one batch; row n of `images` pairs with captions[n].
struct PairBatch {
    Matrix images;
    TokenBatch captions;

    Index size() const { return images.rows(); }
};

namespace detail {

template <class Real>
struct PairForward {
    ImageForward image;
    TextForward text;
};

template <class Real>
PairForward<Real> pair_forward(const DualEncoder<Real>& model, const PairBatch& batch) {
    if (batch.images.rows() != static_cast<Index>(batch.captions.size()))
        throw ShapeError("batch has " + std::to_string(batch.images.rows()) + " images but " +
                         std::to_string(batch.captions.size()) + " captions");
    return {image_forward(model, batch.images), text_forward(model, batch.captions)};
}

template <class Real>
void pair_backward(const DualEncoder<Real>& model, const PairBatch& batch, const PairForward<Real>& f,
                   const Matrix& d_img, const Matrix& d_txt, Gradients& grads) {
    image_backward(model, batch.images, f.image, d_img, grads);
    text_backward(model, f.text, d_txt, grads);
}

template <class Real>
void check_compatible(const DualEncoder<Real>& a, const DualEncoder<Real>& b) {
    if (a.arch().d_emb != b.arch().d_emb)
        throw ShapeError("models differ in embedding dimension: " + std::to_string(a.arch().d_emb) + " vs " +
                         std::to_string(b.arch().d_emb));
}

struct ConsistencyTerm {
    double value;
    Matrix d_img;
    Matrix d_txt;
};

template <class Real>
ConsistencyTerm consistency_term(const FrozenModel<Real>& orig, const PairBatch& batch,
                                       const PairForward<Real>& current) {
    const auto ref = pair_forward(orig.wrapped(), batch);
    auto [kl_img, g_img] = softmax_kl(ref.image.embeddings.data(), current.image.embeddings.data());
    auto [kl_txt, g_txt] = softmax_kl(ref.text.embeddings.data(), current.text.embeddings.data());
    return {kl_img + kl_txt, std::move(g_img), std::move(g_txt)};
}

}  // namespace detail

/// Contrastive loss of the model on one batch; accumulates parameter
/// gradients into `grads` when given.
template <class Real>
double pretrain_loss(const DualEncoder<Real>& model, const PairBatch& batch, const LossOptions& opts,
                     Gradients* grads = nullptr) {
    const auto f = detail::pair_forward(model, batch);
    auto l = contrastive_loss_grad(f.image.embeddings, f.text.embeddings, opts);
    if (grads) detail::pair_backward(model, batch, f, l.d_img, l.d_txt, *grads);
    return l.value;
}

/// (1/N_r) sum_n [KL(p_o^img || p_u^img) + KL(p_o^txt || p_u^txt)] with p the
/// softmax over embedding coordinates. Only `current` receives gradients.
template <class Real>
double consistency_loss(const FrozenModel<Real>& orig, const DualEncoder<Real>& current, const PairBatch& batch,
                        Gradients* grads = nullptr) {
    detail::check_compatible(orig.wrapped(), current);
    const auto f = detail::pair_forward(current, batch);
    auto term = detail::consistency_term(orig, batch, f);
    if (grads) detail::pair_backward(current, batch, f, term.d_img, term.d_txt, *grads);
    return term.value;
}

/// L = lambda1 * L_RM + lambda2 * L_FM + lambda3 * L_CM.
template <class Real>
LossBreakdown total_unlearn_loss(const DualEncoder<Real>& model, const FrozenModel<Real>& orig,
                                 const PairBatch& forget, const PairBatch& retain, const LossWeights& w,
                                 const LossOptions& opts, Gradients* grads = nullptr) {
    w.validate();
    detail::check_compatible(orig.wrapped(), model);
    if (forget.size() == 0) throw InputError("forget batch is empty");

    const auto ff = detail::pair_forward(model, forget);
    const auto fr = detail::pair_forward(model, retain);
    const auto fm = forgetting_loss_grad(ff.image.embeddings, ff.text.embeddings);
    const auto rm = retention_loss_grad(fr.image.embeddings, fr.text.embeddings, opts);
    const auto cm = detail::consistency_term(orig, retain, fr);

    LossBreakdown out;
    out.l_fm = fm.value;
    out.l_rm = rm.value;
    out.l_cm = cm.value;
    out.lambda1 = w.lambda1;
    out.lambda2 = w.lambda2;
    out.lambda3 = w.lambda3;
    out.total = out.reassembled();

    if (grads) {
        detail::pair_backward(model, forget, ff, w.lambda2 * fm.d_img, w.lambda2 * fm.d_txt, *grads);
        detail::pair_backward(model, retain, fr, w.lambda1 * rm.d_img + w.lambda3 * cm.d_img,
                              w.lambda1 * rm.d_txt + w.lambda3 * cm.d_txt, *grads);
    }
    return out;
}

/// Reimplemented unlearning baselines:
///   GA       = -L_con(D_f)
///   GRADDIFF = -L_con(D_f) + L_con(D_r)
///   KLMIN    = -L_con(D_f) + L_CM(D_r)
template <class Real>
double baseline_loss(Method method, const DualEncoder<Real>& model, const FrozenModel<Real>& orig,
                     const PairBatch& forget, const PairBatch& retain, const LossOptions& opts,
                     Gradients* grads = nullptr) {
    if (method == Method::CLIPErase) throw ConfigError("CLIPERASE is not a baseline method");
    if (forget.size() == 0) throw InputError("forget batch is empty");
    detail::check_compatible(orig.wrapped(), model);

    const auto ff = detail::pair_forward(model, forget);
    const auto lf = contrastive_loss_grad(ff.image.embeddings, ff.text.embeddings, opts);
    double value = -lf.value;
    if (grads) detail::pair_backward(model, forget, ff, -lf.d_img, -lf.d_txt, *grads);

    if (method == Method::GA) return value;

    const auto fr = detail::pair_forward(model, retain);
    if (method == Method::GradDiff) {
        const auto lr = contrastive_loss_grad(fr.image.embeddings, fr.text.embeddings, opts);
        value += lr.value;
        if (grads) detail::pair_backward(model, retain, fr, lr.d_img, lr.d_txt, *grads);
    } else {
        const auto cm = detail::consistency_term(orig, retain, fr);
        value += cm.value;
        if (grads) detail::pair_backward(model, retain, fr, cm.d_img, cm.d_txt, *grads);
    }
    return value;
}

}  // namespace cliperase
