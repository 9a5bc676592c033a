#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <type_traits>

namespace cliperase {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Matrix = RowMatrix<double>;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// View a parameter block as double without copying when it already is.
template <class T>
decltype(auto) as_double(const RowMatrix<T>& m) {
    if constexpr (std::is_same_v<T, double>) {
        return (m);
    } else {
        return Matrix(m.template cast<double>());
    }
}

// Numerically stable log(sum(exp(row))) per row.
inline Vector row_logsumexp(const Matrix& logits) {
    Vector out(logits.rows());
    for (Index r = 0; r < logits.rows(); ++r) {
        const double mx = logits.row(r).maxCoeff();
        out(r) = mx + std::log((logits.row(r).array() - mx).exp().sum());
    }
    return out;
}

// Row-wise softmax with max subtraction.
inline Matrix row_softmax(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Index r = 0; r < logits.rows(); ++r) {
        const double mx = logits.row(r).maxCoeff();
        out.row(r) = (logits.row(r).array() - mx).exp().matrix();
        out.row(r) /= out.row(r).sum();
    }
    return out;
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace cliperase
