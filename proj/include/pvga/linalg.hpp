#pragma once

// Dense SPD linear algebra, PCG, randomized SVD and the low-rank Woodbury
// covariance update. Everything here is a pure function of its arguments.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "pvga/error.hpp"

namespace pvga {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline void symmetrize(Matrix& m) { m = 0.5 * (m + m.transpose()).eval(); }

inline bool is_symmetric(const Matrix& m, double rel_tol = 1e-12) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

/// Lower-triangular L with L Lᵗ = m. Only the lower triangle of m is read.
inline Matrix cholesky(const Matrix& m) {
  require(m.rows() == m.cols(), ErrorKind::DimensionMismatch, "cholesky needs a square matrix");
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorKind::NotPositiveDefinite, "Cholesky pivot <= 0");
  }
  Matrix l = llt.matrixL();
  for (Index i = 0; i < l.rows(); ++i) {
    if (!(l(i, i) > 0.0) || !std::isfinite(l(i, i))) {
      throw Error(ErrorKind::NotPositiveDefinite, "Cholesky pivot <= 0");
    }
  }
  return l;
}

inline double logdet_from_cholesky(const Matrix& l) {
  return 2.0 * l.diagonal().array().log().sum();
}

inline double logdet(const Matrix& m) { return logdet_from_cholesky(cholesky(m)); }

/// Inverse of an SPD matrix via its Cholesky factor, symmetrized.
inline Matrix spd_inverse(const Matrix& m) {
  const Matrix l = cholesky(m);
  Matrix linv = l.triangularView<Eigen::Lower>().solve(Matrix::Identity(m.rows(), m.cols()));
  Matrix inv = linv.transpose() * linv;
  symmetrize(inv);
  return inv;
}

inline Vector sym_eigenvalues(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

inline double min_eigenvalue(const Matrix& m) { return sym_eigenvalues(m).minCoeff(); }

inline double spectral_norm_sym(const Matrix& m) {
  const Vector ev = sym_eigenvalues(0.5 * (m + m.transpose()));
  return std::max(std::abs(ev.minCoeff()), std::abs(ev.maxCoeff()));
}

/// a ⪯ b in Loewner order, up to an absolute eigenvalue slack.
inline bool loewner_le(const Matrix& a, const Matrix& b, double slack = 1e-10) {
  return min_eigenvalue(0.5 * ((b - a) + (b - a).transpose())) >= -slack;
}

// ---------------------------------------------------------------------------
// Sparsity patterns for the covariance

class SparsityMask {
 public:
  SparsityMask() = default;

  /// At most s entries per row centred on the diagonal (half-width (s-1)/2).
  static SparsityMask banded(Index m, Index s) {
    require(m >= 1 && s >= 1, ErrorKind::InvalidConfig, "banded mask needs m >= 1 and s >= 1");
    const Index hw = (s - 1) / 2;
    SparsityMask mask(m);
    for (Index i = 0; i < m; ++i) {
      for (Index j = std::max<Index>(0, i - hw); j <= std::min(m - 1, i + hw); ++j) {
        mask.rows_[i].push_back(j);
      }
    }
    mask.bandwidth_ = s;
    return mask;
  }

  /// Diagonal plus the 4-neighbourhood on an nx-by-ny grid (column-major pixel order).
  static SparsityMask grid_neighbors(Index nx, Index ny) {
    require(nx >= 1 && ny >= 1, ErrorKind::InvalidConfig, "grid mask needs positive sides");
    SparsityMask mask(nx * ny);
    auto id = [nx](Index ix, Index iy) { return iy * nx + ix; };
    for (Index iy = 0; iy < ny; ++iy) {
      for (Index ix = 0; ix < nx; ++ix) {
        auto& row = mask.rows_[id(ix, iy)];
        if (iy > 0) row.push_back(id(ix, iy - 1));
        if (ix > 0) row.push_back(id(ix - 1, iy));
        row.push_back(id(ix, iy));
        if (ix + 1 < nx) row.push_back(id(ix + 1, iy));
        if (iy + 1 < ny) row.push_back(id(ix, iy + 1));
      }
    }
    mask.bandwidth_ = 5;
    return mask;
  }

  /// Symmetric closure of the given pairs, with the diagonal always added.
  static SparsityMask from_pairs(Index m, const std::vector<std::pair<Index, Index>>& pairs) {
    SparsityMask mask(m);
    for (Index i = 0; i < m; ++i) mask.rows_[i].push_back(i);
    for (const auto& [i, j] : pairs) {
      require(i >= 0 && j >= 0 && i < m && j < m, ErrorKind::DimensionMismatch,
              "mask index out of range");
      mask.rows_[i].push_back(j);
      mask.rows_[j].push_back(i);
    }
    for (auto& row : mask.rows_) {
      std::sort(row.begin(), row.end());
      row.erase(std::unique(row.begin(), row.end()), row.end());
    }
    mask.bandwidth_ = mask.max_row_nnz();
    return mask;
  }

  Index dim() const { return static_cast<Index>(rows_.size()); }
  const std::vector<Index>& row(Index i) const { return rows_[static_cast<std::size_t>(i)]; }
  Index bandwidth() const { return bandwidth_; }

  bool contains(Index i, Index j) const {
    const auto& r = row(i);
    return std::binary_search(r.begin(), r.end(), j);
  }

  Index max_row_nnz() const {
    std::size_t best = 0;
    for (const auto& r : rows_) best = std::max(best, r.size());
    return static_cast<Index>(best);
  }

  Index nnz() const {
    std::size_t total = 0;
    for (const auto& r : rows_) total += r.size();
    return static_cast<Index>(total);
  }

  bool is_symmetric() const {
    for (Index i = 0; i < dim(); ++i) {
      for (Index j : row(i)) {
        if (!contains(j, i)) return false;
      }
    }
    return true;
  }

  /// Zero every entry of c outside the pattern.
  void project(Matrix& c) const {
    require(c.rows() == dim() && c.cols() == dim(), ErrorKind::DimensionMismatch,
            "mask/matrix dimension mismatch");
    Matrix out = Matrix::Zero(dim(), dim());
    for (Index i = 0; i < dim(); ++i) {
      for (Index j : row(i)) out(i, j) = c(i, j);
    }
    c.swap(out);
  }

  /// (masked c) * x touching only pattern entries.
  Matrix multiply(const Matrix& c, const Matrix& x) const {
    require(x.rows() == dim(), ErrorKind::DimensionMismatch, "mask multiply dimension mismatch");
    Matrix out = Matrix::Zero(dim(), x.cols());
    for (Index i = 0; i < dim(); ++i) {
      for (Index j : row(i)) out.row(i) += c(i, j) * x.row(j);
    }
    return out;
  }

  friend bool operator==(const SparsityMask& a, const SparsityMask& b) {
    return a.rows_ == b.rows_;
  }

 private:
  explicit SparsityMask(Index m) : rows_(static_cast<std::size_t>(m)) {}

  std::vector<std::vector<Index>> rows_;
  Index bandwidth_ = 0;
};

// ---------------------------------------------------------------------------
// Preconditioned conjugate gradients

struct PcgResult {
  Vector x;
  int iterations = 0;
  bool converged = false;
  double relative_residual = 0.0;
};

/// Solves M x = b for SPD M given only as an operator. Stops when
/// ‖r‖ <= tol ‖b‖ or after maxit iterations.
template <class ApplyM, class Precond>
PcgResult pcg_solve(const ApplyM& apply_m, const Vector& b, const Precond& precond, double tol,
                    int maxit, std::optional<Vector> x0 = std::nullopt) {
  PcgResult res;
  res.x = x0 ? *x0 : Vector::Zero(b.size());
  require(res.x.size() == b.size(), ErrorKind::DimensionMismatch, "pcg initial guess size");
  const double bnorm = b.norm();
  if (bnorm == 0.0) {
    res.x.setZero();
    res.converged = maxit > 0;
    return res;
  }
  Vector r = b - apply_m(res.x);
  res.relative_residual = r.norm() / bnorm;
  if (maxit <= 0) return res;
  if (res.relative_residual <= tol) {
    res.converged = true;
    return res;
  }
  Vector z = precond(r);
  double rz = r.dot(z);
  if (!(rz > 0.0)) throw Error(ErrorKind::Breakdown, "preconditioner is not positive definite");
  Vector p = z;
  for (int k = 1; k <= maxit; ++k) {
    const Vector q = apply_m(p);
    const double pq = p.dot(q);
    if (!(pq > 0.0)) throw Error(ErrorKind::Breakdown, "operator is not positive definite");
    const double step = rz / pq;
    res.x.noalias() += step * p;
    r.noalias() -= step * q;
    res.iterations = k;
    res.relative_residual = r.norm() / bnorm;
    if (res.relative_residual <= tol) {
      res.converged = true;
      return res;
    }
    z = precond(r);
    const double rz_next = r.dot(z);
    if (!(rz_next > 0.0)) throw Error(ErrorKind::Breakdown, "preconditioner is not positive definite");
    p = z + (rz_next / rz) * p;
    rz = rz_next;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Randomized SVD

/// A ≈ U diag(S) Vᵗ with orthonormal columns in U (n×r) and V (m×r).
struct LowRankFactor {
  Matrix U;
  Vector S;
  Matrix V;

  Index rank() const { return S.size(); }
  Index rows() const { return U.rows(); }
  Index cols() const { return V.rows(); }

  Matrix materialize() const { return U * S.asDiagonal() * V.transpose(); }

  /// Orthonormality to tol and sorted nonnegative singular values.
  bool is_valid(double tol = 1e-10) const {
    const Index r = rank();
    if (U.cols() != r || V.cols() != r) return false;
    const Matrix eye = Matrix::Identity(r, r);
    if ((U.transpose() * U - eye).cwiseAbs().maxCoeff() > tol) return false;
    if ((V.transpose() * V - eye).cwiseAbs().maxCoeff() > tol) return false;
    for (Index i = 0; i < r; ++i) {
      if (S(i) < 0.0) return false;
      if (i > 0 && S(i) > S(i - 1)) return false;
    }
    return true;
  }
};

template <class Op>
concept BlockOperator = requires(const Op& op, const Matrix& x) {
  { op.rows() } -> std::convertible_to<Index>;
  { op.cols() } -> std::convertible_to<Index>;
  { op.apply_block(x) } -> std::convertible_to<Matrix>;
  { op.apply_transpose_block(x) } -> std::convertible_to<Matrix>;
};

/// Adapter so a plain dense matrix can be handed to rsvd.
struct DenseBlockOperator {
  const Matrix& a;
  Index rows() const { return a.rows(); }
  Index cols() const { return a.cols(); }
  Matrix apply_block(const Matrix& x) const { return a * x; }
  Matrix apply_transpose_block(const Matrix& y) const { return a.transpose() * y; }
};

struct RsvdOptions {
  Index oversample = 10;
  int power_iters = 2;
  std::uint64_t seed = 0;
};

namespace detail {

inline Matrix orthonormal_basis(const Matrix& y) {
  Eigen::HouseholderQR<Matrix> qr(y);
  return qr.householderQ() * Matrix::Identity(y.rows(), y.cols());
}

}  // namespace detail

/// Gaussian sketch, power iterations with re-orthonormalization, then a dense
/// SVD of the small projected matrix.
template <BlockOperator Op>
LowRankFactor rsvd(const Op& a, Index r, const RsvdOptions& opts = {}) {
  const Index n = a.rows();
  const Index m = a.cols();
  require(r >= 1, ErrorKind::RankTooLarge, "rank must be at least 1");
  if (r > std::min(n, m)) {
    throw Error(ErrorKind::RankTooLarge,
                "rank " + std::to_string(r) + " exceeds min(n,m) = " + std::to_string(std::min(n, m)));
  }
  const Index k = std::min(r + std::max<Index>(0, opts.oversample), std::min(n, m));

  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix omega(m, k);
  for (Index j = 0; j < k; ++j) {
    for (Index i = 0; i < m; ++i) omega(i, j) = normal(rng);
  }

  Matrix q = detail::orthonormal_basis(a.apply_block(omega));
  for (int it = 0; it < opts.power_iters; ++it) {
    const Matrix w = detail::orthonormal_basis(a.apply_transpose_block(q));
    q = detail::orthonormal_basis(a.apply_block(w));
  }
  // B = Qᵗ A, formed as (Aᵗ Q)ᵗ.
  const Matrix b = a.apply_transpose_block(q).transpose();
  Eigen::JacobiSVD<Matrix> svd(b, Eigen::ComputeThinU | Eigen::ComputeThinV);

  LowRankFactor f;
  f.U = q * svd.matrixU().leftCols(r);
  f.S = svd.singularValues().head(r);
  f.V = svd.matrixV().leftCols(r);
  return f;
}

inline LowRankFactor rsvd(const Matrix& a, Index r, const RsvdOptions& opts = {}) {
  return rsvd(DenseBlockOperator{a}, r, opts);
}

/// Number of leading singular values with σ_i / σ_1 >= rel_threshold.
inline Index rank_from_threshold(const Vector& singular_values, double rel_threshold = 1e-6) {
  if (singular_values.size() == 0 || singular_values(0) <= 0.0) return 0;
  Index r = 0;
  while (r < singular_values.size() && singular_values(r) >= rel_threshold * singular_values(0)) ++r;
  return r;
}

// ---------------------------------------------------------------------------
// Woodbury covariance update

/// Covariance services over a dense SPD matrix.
struct DenseCovariance {
  Matrix c;
  Index dim() const { return c.rows(); }
  Matrix apply_block(const Matrix& x) const { return c * x; }
  double entry(Index i, Index j) const { return c(i, j); }
};

template <class Cov>
concept CovarianceServices = requires(const Cov& c, const Matrix& x, Index i) {
  { c.dim() } -> std::convertible_to<Index>;
  { c.apply_block(x) } -> std::convertible_to<Matrix>;
  { c.entry(i, i) } -> std::convertible_to<double>;
};

/// (C0⁻¹ + Aᵗ diag(d) A)⁻¹ with A ≈ U S Vᵗ, via
///   C = C0 − C0 V S Uᵗ D U S (I + Vᵗ C0 V S Uᵗ D U S)⁻¹ Vᵗ C0.
/// Only the r×r system is inverted. With a mask, only pattern entries are
/// formed (others are zero); each returned entry is computed exactly as in
/// the unmasked path.
template <CovarianceServices Cov>
Matrix woodbury_cov(const Cov& c0, const LowRankFactor& f, const Vector& d,
                    const SparsityMask* mask = nullptr) {
  const Index m = c0.dim();
  const Index r = f.rank();
  require(f.cols() == m, ErrorKind::DimensionMismatch, "factor V rows must equal prior dimension");
  require(d.size() == f.rows(), ErrorKind::DimensionMismatch, "weight vector must have n entries");
  require((d.array() > 0.0).all(), ErrorKind::InvalidData, "woodbury weights must be positive");
  if (mask) require(mask->dim() == m, ErrorKind::DimensionMismatch, "mask dimension");

  const Matrix w = c0.apply_block(f.V);                      // C0 V
  const Matrix utdu = f.U.transpose() * d.asDiagonal() * f.U;
  const Matrix k = f.S.asDiagonal() * utdu * f.S.asDiagonal();  // S Uᵗ D U S
  const Matrix inner = Matrix::Identity(r, r) + f.V.transpose() * w * k;

  Eigen::FullPivLU<Matrix> lu(inner.transpose());
  if (!lu.isInvertible() || lu.rcond() < 1e-14) {
    throw Error(ErrorKind::SingularInnerSystem, "inner r x r system is numerically singular");
  }
  const Matrix z = lu.solve(k.transpose()).transpose();  // K (I + P K)⁻¹

  const RowMatrix wz = w * z;
  const RowMatrix wr = w;
  auto raw = [&](Index i, Index j) { return c0.entry(i, j) - wz.row(i).dot(wr.row(j)); };

  Matrix c = Matrix::Zero(m, m);
  if (mask) {
    for (Index i = 0; i < m; ++i) {
      for (Index j : mask->row(i)) {
        if (j < i) continue;
        const double v = 0.5 * (raw(i, j) + raw(j, i));
        c(i, j) = v;
        c(j, i) = v;
      }
    }
  } else {
    for (Index i = 0; i < m; ++i) {
      for (Index j = i; j < m; ++j) {
        const double v = 0.5 * (raw(i, j) + raw(j, i));
        c(i, j) = v;
        c(j, i) = v;
      }
    }
  }
  return c;
}

}  // namespace pvga
