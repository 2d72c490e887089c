#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <variant>

#include "pvga/linalg.hpp"

namespace pvga {

/// A_ij = taps[(i - j) - min_offset] for min_offset <= i - j <= max_offset, zero
/// elsewhere. Covers banded Toeplitz kernels such as 1D convolutions.
struct ToeplitzKernel {
  Index n = 0;
  Index m = 0;
  Index min_offset = 0;
  Index max_offset = 0;
  Vector taps;

  double at(Index i, Index j) const {
    const Index k = i - j;
    if (k < min_offset || k > max_offset) return 0.0;
    return taps(k - min_offset);
  }
};

/// Separable Gaussian blur on a side-by-side image with circular boundary.
/// Pixels are stored column-major (index = iy * side + ix).
struct Blur2dKernel {
  Index side = 0;
  Index width = 0;      // taps kept for |offset| <= width - 1, before wrapping
  double variance = 0;  // of the Gaussian, in pixels²
  Vector circular;      // length side, unit sum, circular[k] = weight of offset k mod side
  Matrix circulant;     // K(i, j) = circular[(i − j) mod side]; the blur is X ↦ K X Kᵗ

  static Blur2dKernel make(Index side, Index width, double variance) {
    require(side >= 1 && width >= 1 && variance > 0.0, ErrorKind::InvalidConfig,
            "blur kernel needs side >= 1, width >= 1, variance > 0");
    Blur2dKernel k{side, width, variance, Vector::Zero(side), Matrix()};
    for (Index d = -(width - 1); d <= width - 1; ++d) {
      const Index wrapped = ((d % side) + side) % side;
      k.circular(wrapped) += std::exp(-static_cast<double>(d * d) / (2.0 * variance));
    }
    k.circular /= k.circular.sum();
    k.circulant.resize(side, side);
    for (Index i = 0; i < side; ++i)
      for (Index j = 0; j < side; ++j) k.circulant(i, j) = k.circular((i - j + side) % side);
    return k;
  }
};

/// The matrix A ∈ R^{n×m} behind the Poisson rates e^{Ax}. Immutable.
class ForwardOperator {
 public:
  enum class Kind { Dense, LowRank, Toeplitz, Blur2d };

  static ForwardOperator dense(Matrix a) { return ForwardOperator(std::move(a)); }
  static ForwardOperator low_rank(LowRankFactor f) { return ForwardOperator(std::move(f)); }
  static ForwardOperator toeplitz(ToeplitzKernel k) { return ForwardOperator(std::move(k)); }
  static ForwardOperator blur2d(Blur2dKernel k) { return ForwardOperator(std::move(k)); }

  Kind kind() const { return static_cast<Kind>(rep_.index()); }
  Index rows() const { return rows_; }
  Index cols() const { return cols_; }

  const LowRankFactor* factor() const { return std::get_if<LowRankFactor>(&rep_); }
  const ToeplitzKernel* toeplitz_kernel() const { return std::get_if<ToeplitzKernel>(&rep_); }
  const Blur2dKernel* blur_kernel() const { return std::get_if<Blur2dKernel>(&rep_); }

  /// Dense form if it is stored or was cached at construction, else nullptr.
  const Matrix* dense_view() const {
    if (const auto* a = std::get_if<Matrix>(&rep_)) return a;
    return cache_.get();
  }

  Vector apply(const Vector& x) const {
    require(x.size() == cols_, ErrorKind::DimensionMismatch, "apply: x has wrong length");
    return apply_block(x);
  }

  Vector apply_transpose(const Vector& y) const {
    require(y.size() == rows_, ErrorKind::DimensionMismatch, "apply_transpose: y has wrong length");
    return apply_transpose_block(y);
  }

  Matrix apply_block(const Matrix& x) const {
    require(x.rows() == cols_, ErrorKind::DimensionMismatch, "apply_block: wrong row count");
    if (const Matrix* a = dense_view()) return (*a) * x;
    return apply_block_uncached(x);
  }

  Matrix apply_transpose_block(const Matrix& y) const {
    require(y.rows() == rows_, ErrorKind::DimensionMismatch, "apply_transpose_block: wrong row count");
    if (const Matrix* a = dense_view()) return a->transpose() * y;
    return apply_transpose_block_uncached(y);
  }

  /// Products through the native representation, ignoring any dense cache.
  Matrix apply_block_uncached(const Matrix& x) const {
    require(x.rows() == cols_, ErrorKind::DimensionMismatch, "apply_block: wrong row count");
    return std::visit(
        [&](const auto& rep) -> Matrix {
          using T = std::decay_t<decltype(rep)>;
          if constexpr (std::is_same_v<T, LowRankFactor>) {
            return rep.U * (rep.S.asDiagonal() * (rep.V.transpose() * x));
          } else if constexpr (std::is_same_v<T, ToeplitzKernel>) {
            return toeplitz_apply(rep, x, false);
          } else if constexpr (std::is_same_v<T, Blur2dKernel>) {
            return blur_apply(rep, x);
          } else {
            return rep * x;
          }
        },
        rep_);
  }

  Matrix apply_transpose_block_uncached(const Matrix& y) const {
    require(y.rows() == rows_, ErrorKind::DimensionMismatch, "apply_transpose_block: wrong row count");
    return std::visit(
        [&](const auto& rep) -> Matrix {
          using T = std::decay_t<decltype(rep)>;
          if constexpr (std::is_same_v<T, LowRankFactor>) {
            return rep.V * (rep.S.asDiagonal() * (rep.U.transpose() * y));
          } else if constexpr (std::is_same_v<T, ToeplitzKernel>) {
            return toeplitz_apply(rep, y, true);
          } else if constexpr (std::is_same_v<T, Blur2dKernel>) {
            return blur_apply(rep, y);  // symmetric kernel
          } else {
            return rep.transpose() * y;
          }
        },
        rep_);
  }

  /// Row a_i of A as a vector of length m.
  Vector row(Index i) const {
    require(i >= 0 && i < rows_, ErrorKind::DimensionMismatch, "row index out of range");
    if (const Matrix* a = dense_view()) return a->row(i).transpose();
    return std::visit(
        [&](const auto& rep) -> Vector {
          using T = std::decay_t<decltype(rep)>;
          if constexpr (std::is_same_v<T, LowRankFactor>) {
            return rep.V * (rep.S.asDiagonal() * rep.U.row(i).transpose());
          } else if constexpr (std::is_same_v<T, ToeplitzKernel>) {
            Vector r = Vector::Zero(cols_);
            for (Index j = std::max<Index>(0, i - rep.max_offset);
                 j <= std::min(cols_ - 1, i - rep.min_offset); ++j) {
              r(j) = rep.at(i, j);
            }
            return r;
          } else if constexpr (std::is_same_v<T, Blur2dKernel>) {
            // A is symmetric, so row i equals column i = A e_i.
            Vector e = Vector::Zero(cols_);
            e(i) = 1.0;
            return blur_apply(rep, e);
          } else {
            return rep.row(i).transpose();
          }
        },
        rep_);
  }

  double row_dot(Index i, const Vector& x) const {
    require(x.size() == cols_, ErrorKind::DimensionMismatch, "row_dot: x has wrong length");
    if (const Matrix* a = dense_view()) return a->row(i).dot(x);
    if (const auto* f = factor()) {
      return f->U.row(i).dot(f->S.cwiseProduct(f->V.transpose() * x));
    }
    if (const auto* t = toeplitz_kernel()) {
      double s = 0.0;
      for (Index j = std::max<Index>(0, i - t->max_offset);
           j <= std::min(cols_ - 1, i - t->min_offset); ++j) {
        s += t->at(i, j) * x(j);
      }
      return s;
    }
    return row(i).dot(x);
  }

  Matrix materialize() const {
    if (const Matrix* a = dense_view()) return *a;
    return apply_block(Matrix::Identity(cols_, cols_));
  }

  /// Largest n*m for which structured operators keep a dense copy.
  static constexpr Index kDenseCacheLimit = 4'000'000;

 private:
  using Rep = std::variant<Matrix, LowRankFactor, ToeplitzKernel, Blur2dKernel>;

  explicit ForwardOperator(Matrix a) : rep_(std::move(a)) {
    const auto& m = std::get<Matrix>(rep_);
    rows_ = m.rows();
    cols_ = m.cols();
  }
  explicit ForwardOperator(LowRankFactor f) : rep_(std::move(f)) {
    const auto& lr = std::get<LowRankFactor>(rep_);
    require(lr.U.cols() == lr.S.size() && lr.V.cols() == lr.S.size(), ErrorKind::DimensionMismatch,
            "low-rank factor shapes disagree");
    rows_ = lr.rows();
    cols_ = lr.cols();
  }
  explicit ForwardOperator(ToeplitzKernel k) : rep_(std::move(k)) {
    const auto& t = std::get<ToeplitzKernel>(rep_);
    require(t.taps.size() == t.max_offset - t.min_offset + 1, ErrorKind::DimensionMismatch,
            "toeplitz taps length must match offset range");
    rows_ = t.n;
    cols_ = t.m;
    build_cache();
  }
  explicit ForwardOperator(Blur2dKernel k) : rep_(std::move(k)) {
    const auto& b = std::get<Blur2dKernel>(rep_);
    rows_ = cols_ = b.side * b.side;
    build_cache();
  }

  void build_cache() {
    if (rows_ * cols_ <= kDenseCacheLimit) {
      cache_ = std::make_shared<const Matrix>(apply_block_uncached(Matrix::Identity(cols_, cols_)));
    }
  }

  Matrix toeplitz_apply(const ToeplitzKernel& t, const Matrix& x, bool transpose) const {
    const Index out_rows = transpose ? cols_ : rows_;
    Matrix out = Matrix::Zero(out_rows, x.cols());
    for (Index i = 0; i < rows_; ++i) {
      for (Index j = std::max<Index>(0, i - t.max_offset); j <= std::min(cols_ - 1, i - t.min_offset);
           ++j) {
        const double a = t.at(i, j);
        if (transpose) {
          out.row(j) += a * x.row(i);
        } else {
          out.row(i) += a * x.row(j);
        }
      }
    }
    return out;
  }

  static Matrix blur_apply(const Blur2dKernel& b, const Matrix& x) {
    const Index s = b.side;
    // Column c of x is an s×s image, so x is also the s × (s·cols) strip [X₁ | X₂ | ...].
    Matrix strip(s, s * x.cols());
    strip.noalias() = b.circulant * Eigen::Map<const Matrix>(x.data(), s, s * x.cols());
    Matrix out(x.rows(), x.cols());
    for (Index c = 0; c < x.cols(); ++c) {
      Eigen::Map<Matrix>(out.col(c).data(), s, s).noalias() = strip.middleCols(c * s, s) * b.circulant.transpose();
    }
    return out;
  }

  Rep rep_;
  Index rows_ = 0;
  Index cols_ = 0;
  std::shared_ptr<const Matrix> cache_;
};

}  // namespace pvga
