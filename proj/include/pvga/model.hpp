#pragma once

// Poisson observation model with log link and the Gaussian prior
// N(μ0, α⁻¹C̄0), where C̄0⁻¹ = LᵗL for a lower-triangular sparse factor L.

#include <Eigen/SparseCore>

#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "pvga/forward_operator.hpp"
#include "pvga/linalg.hpp"

namespace pvga {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor>;

/// splitmix64 finalizer; derives independent named substreams from one seed.
inline std::uint64_t substream_seed(std::uint64_t seed, std::string_view stream) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : stream) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (h | 1ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------

class PoissonData {
 public:
  PoissonData() = default;

  explicit PoissonData(Vector counts) : y_(std::move(counts)) {
    log_factorial_ = 0.0;
    for (Index i = 0; i < y_.size(); ++i) {
      const double v = y_(i);
      if (!(v >= 0.0) || std::floor(v) != v || !std::isfinite(v)) {
        throw Error(ErrorKind::InvalidData,
                    "count " + std::to_string(i) + " is not a nonnegative integer");
      }
      log_factorial_ += std::lgamma(v + 1.0);
    }
  }

  explicit PoissonData(const std::vector<std::int64_t>& counts)
      : PoissonData(to_vector(counts)) {}

  const Vector& counts() const { return y_; }
  Index size() const { return y_.size(); }
  /// Σ ln(yᵢ!) computed with lgamma.
  double log_factorial_term() const { return log_factorial_; }

 private:
  static Vector to_vector(const std::vector<std::int64_t>& c) {
    Vector v(static_cast<Index>(c.size()));
    for (std::size_t i = 0; i < c.size(); ++i) v(static_cast<Index>(i)) = static_cast<double>(c[i]);
    return v;
  }

  Vector y_;
  double log_factorial_ = 0.0;
};

// ---------------------------------------------------------------------------

enum class PriorKind { L2, H1, H1_2D, Custom };

inline const char* to_string(PriorKind k) {
  switch (k) {
    case PriorKind::L2: return "L2";
    case PriorKind::H1: return "H1";
    case PriorKind::H1_2D: return "H1_2D";
    case PriorKind::Custom: return "custom";
  }
  return "custom";
}

class PriorSpec;

/// Covariance services of C0 = α⁻¹ (LᵗL)⁻¹, for the Woodbury update.
class PriorCovariance {
 public:
  explicit PriorCovariance(const PriorSpec& prior) : prior_(&prior) {}
  Index dim() const;
  Matrix apply_block(const Matrix& x) const;
  double entry(Index i, Index j) const;

 private:
  const PriorSpec* prior_;
  mutable Index memo_col_ = -1;
  mutable Vector memo_;
};

class PriorSpec {
 public:
  /// Dense caches of LᵗL and (LᵗL)⁻¹ are built up to this dimension.
  static constexpr Index kDenseLimit = 4096;

  PriorSpec(Vector mu0, SparseMatrix precision_factor, double alpha,
            PriorKind kind = PriorKind::Custom)
      : mu0_(std::move(mu0)), alpha_(alpha), kind_(kind) {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) {
      throw Error(ErrorKind::InvalidAlpha, "prior strength alpha must be positive");
    }
    auto s = std::make_shared<Structure>();
    s->l = std::move(precision_factor);
    s->l.makeCompressed();
    const Index m = s->l.rows();
    require(s->l.cols() == m && mu0_.size() == m, ErrorKind::DimensionMismatch,
            "precision factor must be square and match the prior mean");
    Vector diag = Vector::Zero(m);
    for (Index j = 0; j < m; ++j) {
      for (SparseMatrix::InnerIterator it(s->l, j); it; ++it) {
        require(it.row() >= j, ErrorKind::InvalidData, "precision factor must be lower triangular");
        if (it.row() == j) diag(j) = it.value();
      }
    }
    require((diag.array().abs() > 0.0).all(), ErrorKind::NotPositiveDefinite,
            "precision factor has a zero diagonal entry");
    s->logdet_precision = 2.0 * diag.array().abs().log().sum();
    s->lt = s->l.transpose();
    if (m <= kDenseLimit) {
      const Matrix ld = Matrix(s->l);
      s->precision = ld.transpose() * ld;
      const Matrix linv = ld.triangularView<Eigen::Lower>().solve(Matrix::Identity(m, m));
      s->covariance = linv * linv.transpose();
      symmetrize(s->covariance);
      s->has_dense = true;
    }
    structure_ = std::move(s);
  }

  /// Build from a dense SPD structure precision P = C̄0⁻¹ by factoring P = LᵗL.
  static PriorSpec from_structure_precision(Vector mu0, const Matrix& precision, double alpha) {
    const Index m = precision.rows();
    // Cholesky of the index-reversed matrix gives P = LᵗL with L lower triangular.
    const Matrix rev = precision.reverse();
    const Matrix r = cholesky(rev);
    const Matrix l = r.reverse().transpose();
    SparseMatrix sl = l.sparseView();
    require(sl.rows() == m, ErrorKind::DimensionMismatch, "structure precision shape");
    return PriorSpec(std::move(mu0), std::move(sl), alpha);
  }

  Index dim() const { return mu0_.size(); }
  double alpha() const { return alpha_; }
  const Vector& mean() const { return mu0_; }
  PriorKind kind() const { return kind_; }
  const SparseMatrix& precision_factor() const { return structure_->l; }
  bool has_dense() const { return structure_->has_dense; }

  /// Same structure and mean, different strength; shares the cached factor data.
  PriorSpec with_alpha(double alpha) const {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) {
      throw Error(ErrorKind::InvalidAlpha, "prior strength alpha must be positive");
    }
    PriorSpec p = *this;
    p.alpha_ = alpha;
    return p;
  }

  PriorSpec with_mean(Vector mu0) const {
    require(mu0.size() == dim(), ErrorKind::DimensionMismatch, "prior mean size");
    PriorSpec p = *this;
    p.mu0_ = std::move(mu0);
    return p;
  }

  // α-free structure C̄0⁻¹ = LᵗL.
  double structure_quad(const Vector& v) const { return (structure_->l * v).squaredNorm(); }
  double structure_logdet_precision() const { return structure_->logdet_precision; }
  Vector apply_structure_precision(const Vector& v) const {
    return structure_->lt * (structure_->l * v);
  }
  Matrix apply_structure_precision(const Matrix& x) const {
    return structure_->lt * (structure_->l * x);
  }
  /// tr(C̄0⁻¹ C) = Σ (L C Lᵗ)_ii, computed as ‖·‖ sums of L applied to C.
  double structure_trace(const Matrix& c) const {
    const Matrix lc = structure_->l * c;
    double t = 0.0;
    for (Index j = 0; j < c.cols(); ++j) {
      for (SparseMatrix::InnerIterator it(structure_->l, j); it; ++it) {
        t += it.value() * lc(it.row(), j);
      }
    }
    return t;
  }
  const Matrix& structure_precision_dense() const {
    require(has_dense(), ErrorKind::DimensionTooLarge, "no dense structure precision at this size");
    return structure_->precision;
  }
  const Matrix& structure_covariance_dense() const {
    require(has_dense(), ErrorKind::DimensionTooLarge, "no dense structure covariance at this size");
    return structure_->covariance;
  }

  // Scaled prior C0 = α⁻¹ C̄0.
  Vector apply_precision(const Vector& v) const { return alpha_ * apply_structure_precision(v); }
  Matrix apply_precision(const Matrix& x) const { return alpha_ * apply_structure_precision(x); }
  Matrix apply_covariance(const Matrix& x) const {
    Matrix y = structure_->lt.triangularView<Eigen::Upper>().solve(x);
    y = structure_->l.triangularView<Eigen::Lower>().solve(y);
    return y / alpha_;
  }
  Vector apply_covariance(const Vector& v) const { return apply_covariance(Matrix(v)).col(0); }
  Matrix precision_dense() const { return alpha_ * structure_precision_dense(); }
  Matrix covariance_dense() const { return structure_covariance_dense() / alpha_; }
  /// ln|C0⁻¹| = m ln α + ln|C̄0⁻¹|.
  double logdet_precision() const {
    return static_cast<double>(dim()) * std::log(alpha_) + structure_->logdet_precision;
  }
  double quad(const Vector& v) const { return alpha_ * structure_quad(v); }
  double trace_precision_times(const Matrix& c) const { return alpha_ * structure_trace(c); }

  PriorCovariance covariance() const { return PriorCovariance(*this); }

 private:
  struct Structure {
    SparseMatrix l;
    SparseMatrix lt;
    double logdet_precision = 0.0;
    bool has_dense = false;
    Matrix precision;
    Matrix covariance;
  };

  Vector mu0_;
  double alpha_ = 1.0;
  PriorKind kind_ = PriorKind::Custom;
  std::shared_ptr<const Structure> structure_;
};

inline Index PriorCovariance::dim() const { return prior_->dim(); }

inline Matrix PriorCovariance::apply_block(const Matrix& x) const {
  if (prior_->has_dense()) return prior_->covariance_dense() * x;
  return prior_->apply_covariance(x);
}

inline double PriorCovariance::entry(Index i, Index j) const {
  if (prior_->has_dense()) {
    return prior_->structure_covariance_dense()(i, j) / prior_->alpha();
  }
  if (memo_col_ != j) {
    Vector e = Vector::Zero(prior_->dim());
    e(j) = 1.0;
    memo_ = prior_->apply_covariance(e);
    memo_col_ = j;
  }
  return memo_(i);
}

/// m×m lower bidiagonal forward difference with an anchored first row.
inline SparseMatrix forward_difference(Index m) {
  std::vector<Eigen::Triplet<double>> t;
  for (Index i = 0; i < m; ++i) {
    t.emplace_back(i, i, 1.0);
    if (i > 0) t.emplace_back(i, i - 1, -1.0);
  }
  SparseMatrix l(m, m);
  l.setFromTriplets(t.begin(), t.end());
  return l;
}

/// I⊗L₁ + L₁⊗I on a side×side grid.
inline SparseMatrix forward_difference_2d(Index side) {
  const SparseMatrix l1 = forward_difference(side);
  std::vector<Eigen::Triplet<double>> t;
  for (Index b = 0; b < side; ++b) {
    for (Index k = 0; k < l1.outerSize(); ++k) {
      for (SparseMatrix::InnerIterator it(l1, k); it; ++it) {
        // I ⊗ L₁: block b holds L₁.
        t.emplace_back(b * side + it.row(), b * side + it.col(), it.value());
        // L₁ ⊗ I: entry (r,c) of L₁ scales an identity block.
        t.emplace_back(it.row() * side + b, it.col() * side + b, it.value());
      }
    }
  }
  SparseMatrix l(side * side, side * side);
  l.setFromTriplets(t.begin(), t.end());
  return l;
}

inline PriorSpec make_prior(PriorKind kind, double alpha, Index m, Vector mu0 = {}) {
  if (!(alpha > 0.0)) throw Error(ErrorKind::InvalidAlpha, "prior strength alpha must be positive");
  require(m >= 1, ErrorKind::DimensionMismatch, "prior dimension must be positive");
  if (mu0.size() == 0) mu0 = Vector::Zero(m);
  switch (kind) {
    case PriorKind::L2: {
      SparseMatrix l(m, m);
      l.setIdentity();
      return PriorSpec(std::move(mu0), std::move(l), alpha, kind);
    }
    case PriorKind::H1:
      return PriorSpec(std::move(mu0), forward_difference(m), alpha, kind);
    case PriorKind::H1_2D: {
      const auto side = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(m))));
      require(side * side == m, ErrorKind::DimensionMismatch, "H1_2D prior needs a square grid");
      return PriorSpec(std::move(mu0), forward_difference_2d(side), alpha, kind);
    }
    case PriorKind::Custom:
      break;
  }
  throw Error(ErrorKind::InvalidConfig, "make_prior needs L2, H1 or H1_2D");
}

// ---------------------------------------------------------------------------

/// (Ax, y) − (e^{Ax}, 1) − Σ ln(yᵢ!).
inline double log_likelihood(const Vector& x, const ForwardOperator& a, const PoissonData& data) {
  require(a.cols() == x.size() && a.rows() == data.size(), ErrorKind::DimensionMismatch,
          "log_likelihood: dimensions of A, x, y disagree");
  const Vector ax = a.apply(x);
  return ax.dot(data.counts()) - ax.array().exp().sum() - data.log_factorial_term();
}

/// Normalized Gaussian log density of the prior.
inline double log_prior(const Vector& x, const PriorSpec& prior) {
  require(x.size() == prior.dim(), ErrorKind::DimensionMismatch, "log_prior: x has wrong length");
  const double m = static_cast<double>(prior.dim());
  return -0.5 * prior.quad(x - prior.mean()) - 0.5 * m * std::log(2.0 * std::numbers::pi) +
         0.5 * prior.logdet_precision();
}

inline double log_joint(const Vector& x, const ForwardOperator& a, const PoissonData& data,
                        const PriorSpec& prior) {
  return log_likelihood(x, a, data) + log_prior(x, prior);
}

/// Independent draws yᵢ ~ Pois(e^{(aᵢ,x)}).
inline PoissonData sample_poisson_data(const ForwardOperator& a, const Vector& x_true,
                                       std::uint64_t seed) {
  const Vector ax = a.apply(x_true);
  for (Index i = 0; i < ax.size(); ++i) {
    if (!(ax(i) <= 700.0)) {
      throw Error(ErrorKind::RateOverflow, "log-rate " + std::to_string(ax(i)) + " exceeds 700");
    }
  }
  std::mt19937_64 rng(seed);
  Vector y(ax.size());
  for (Index i = 0; i < ax.size(); ++i) {
    const double rate = std::exp(ax(i));
    if (rate <= 0.0) {
      y(i) = 0.0;
      continue;
    }
    std::poisson_distribution<std::int64_t> pois(rate);
    y(i) = static_cast<double>(pois(rng));
  }
  return PoissonData(std::move(y));
}

}  // namespace pvga
