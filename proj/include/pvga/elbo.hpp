#pragma once

// Closed-form evidence lower bound F(x̄, C) for q = N(x̄, C), its gradients,
// Gaussian divergences, and a quadrature reference for ln Z at tiny sizes.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "pvga/forward_operator.hpp"
#include "pvga/linalg.hpp"
#include "pvga/map.hpp"
#include "pvga/model.hpp"

namespace pvga {

/// Variational pair (x̄, C). With a mask, entries of cov outside the pattern
/// are zero and the masked matrix is what enters every formula.
struct GaussianState {
  Vector mean;
  Matrix cov;
  std::optional<SparsityMask> mask;

  Index dim() const { return mean.size(); }

  void validate() const {
    require(cov.rows() == mean.size() && cov.cols() == mean.size(), ErrorKind::DimensionMismatch,
            "state covariance must be m x m");
    if (mask) require(mask->dim() == mean.size(), ErrorKind::DimensionMismatch, "state mask dimension");
  }

  Matrix apply_cov(const Matrix& x) const { return mask ? mask->multiply(cov, x) : Matrix(cov * x); }
};

struct ElboBreakdown {
  double fit = 0.0;                  // (y, Ax̄) − (1, e^d)
  double mean_penalty = 0.0;         // −½ (x̄−μ0)ᵗ C0⁻¹ (x̄−μ0)
  double cov_penalty_bregman = 0.0;  // d(C, C0) ≥ 0
  double constant = 0.0;             // −Σ ln yᵢ!
  double total = 0.0;
  bool saturated = false;            // some dᵢ was clamped at kRateClamp
};

inline constexpr double kRateClamp = 700.0;

/// diag(A C Aᵗ) computed row by row, touching only mask entries if a mask is given.
inline Vector quad_diag(const ForwardOperator& a, const Matrix& c, const SparsityMask* mask = nullptr) {
  const Index n = a.rows();
  const Index m = a.cols();
  require(c.rows() == m && c.cols() == m, ErrorKind::DimensionMismatch, "quad_diag: C must be m x m");
  if (!mask) {
    if (const Matrix* av = a.dense_view()) return ((*av) * c).cwiseProduct(*av).rowwise().sum();
    if (const auto* f = a.factor()) {
      const Matrix b = f->S.asDiagonal() * (f->V.transpose() * c * f->V) * f->S.asDiagonal();
      return (f->U * b).cwiseProduct(f->U).rowwise().sum();
    }
  }
  if (const auto* f = a.factor(); f && mask) {
    const Matrix b = f->S.asDiagonal() * (f->V.transpose() * mask->multiply(c, f->V)) * f->S.asDiagonal();
    return (f->U * b).cwiseProduct(f->U).rowwise().sum();
  }
  // Blocks of rows of A, as columns of Aᵗ.
  Vector out(n);
  constexpr Index kChunk = 256;
  const Matrix* av = a.dense_view();
  for (Index i0 = 0; i0 < n; i0 += kChunk) {
    const Index len = std::min(kChunk, n - i0);
    Matrix at_block;
    if (av) {
      at_block = av->middleRows(i0, len).transpose();
    } else {
      Matrix sel = Matrix::Zero(n, len);
      for (Index k = 0; k < len; ++k) sel(i0 + k, k) = 1.0;
      at_block = a.apply_transpose_block(sel);
    }
    const Matrix cat = mask ? mask->multiply(c, at_block) : Matrix(c * at_block);
    out.segment(i0, len) = cat.cwiseProduct(at_block).colwise().sum().transpose();
  }
  return out;
}

/// d = Ax̄ + ½ diag(A C Aᵗ).
inline Vector rate_vector(const GaussianState& s, const ForwardOperator& a) {
  require(a.cols() == s.dim(), ErrorKind::DimensionMismatch, "rate_vector: A and x̄ disagree");
  s.validate();
  const SparsityMask* mask = s.mask ? &*s.mask : nullptr;
  return a.apply(s.mean) + 0.5 * quad_diag(a, s.cov, mask);
}

/// e^{min(d, kRateClamp)}; sets *saturated if any entry was clamped.
inline Vector clamped_exp(const Vector& d, bool* saturated = nullptr) {
  Vector e(d.size());
  bool sat = false;
  for (Index i = 0; i < d.size(); ++i) {
    if (d(i) > kRateClamp) {
      sat = true;
      e(i) = std::exp(kRateClamp);
    } else {
      e(i) = std::exp(d(i));
    }
  }
  if (saturated) *saturated = sat;
  return e;
}

/// tr(C0⁻¹C) − ln|C0⁻¹C| − m for dense SPD matrices.
inline double bregman_divergence(const Matrix& c, const Matrix& c0) {
  require(c.rows() == c0.rows() && c.cols() == c0.cols() && c.rows() == c.cols(),
          ErrorKind::DimensionMismatch, "bregman_divergence: shapes disagree");
  const Matrix l0 = cholesky(c0);
  const Matrix l = cholesky(c);
  // tr(C0⁻¹C) = ‖L0⁻¹ L‖_F².
  const Matrix x = l0.triangularView<Eigen::Lower>().solve(l);
  const double tr = x.squaredNorm();
  return tr - (logdet_from_cholesky(l) - logdet_from_cholesky(l0)) - static_cast<double>(c.rows());
}

inline void check_problem(const GaussianState& s, const ForwardOperator& a, const PoissonData& data,
                          const PriorSpec& prior) {
  s.validate();
  require(a.cols() == s.dim() && a.rows() == data.size() && prior.dim() == s.dim(),
          ErrorKind::DimensionMismatch, "dimensions of state, A, y and prior disagree");
}

inline ElboBreakdown elbo(const GaussianState& s, const ForwardOperator& a, const PoissonData& data,
                          const PriorSpec& prior) {
  check_problem(s, a, data, prior);
  ElboBreakdown out;
  const Vector ax = a.apply(s.mean);
  const SparsityMask* mask = s.mask ? &*s.mask : nullptr;
  const Vector d = ax + 0.5 * quad_diag(a, s.cov, mask);
  out.fit = data.counts().dot(ax) - clamped_exp(d, &out.saturated).sum();
  out.mean_penalty = -0.5 * prior.quad(s.mean - prior.mean());
  const double ldc = logdet(s.cov);
  out.cov_penalty_bregman = prior.trace_precision_times(s.cov) - prior.logdet_precision() - ldc -
                            static_cast<double>(s.dim());
  out.constant = -data.log_factorial_term();
  out.total = out.fit + out.mean_penalty - 0.5 * out.cov_penalty_bregman + out.constant;
  return out;
}

/// The ELBO, or nothing when C is not positive definite (possible for a masked C).
inline std::optional<ElboBreakdown> elbo_if_defined(const GaussianState& s, const ForwardOperator& a,
                                                    const PoissonData& data, const PriorSpec& prior) {
  try {
    return elbo(s, a, data, prior);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::NotPositiveDefinite) throw;
    return std::nullopt;
  }
}

/// Aᵗy − Aᵗe^d − C0⁻¹(x̄−μ0).
inline Vector grad_mean(const GaussianState& s, const ForwardOperator& a, const PoissonData& data,
                        const PriorSpec& prior) {
  check_problem(s, a, data, prior);
  const Vector e = clamped_exp(rate_vector(s, a));
  return a.apply_transpose(data.counts() - e) - prior.apply_precision(Vector(s.mean - prior.mean()));
}

/// ½(−AᵗDA − C0⁻¹ + C⁻¹) with D = diag(e^d).
inline Matrix grad_cov(const GaussianState& s, const ForwardOperator& a, const PoissonData& data,
                       const PriorSpec& prior) {
  check_problem(s, a, data, prior);
  const Vector e = clamped_exp(rate_vector(s, a));
  Matrix g = 0.5 * (spd_inverse(s.cov) - detail::weighted_gram(a, e) - prior.precision_dense());
  symmetrize(g);
  return g;
}

struct OptimalityResidual {
  double mean = 0.0;  // ‖∂F/∂x̄‖₂
  double cov = 0.0;   // ‖C⁻¹ − AᵗDA − C0⁻¹‖_F
};

inline OptimalityResidual optimality_residual(const GaussianState& s, const ForwardOperator& a,
                                              const PoissonData& data, const PriorSpec& prior) {
  return {grad_mean(s, a, data, prior).norm(), 2.0 * grad_cov(s, a, data, prior).norm()};
}

/// KL(q1 ‖ q2) = ½[d(C1, C2) + (x̄1−x̄2)ᵗC2⁻¹(x̄1−x̄2)].
inline double gaussian_kl(const GaussianState& q1, const GaussianState& q2) {
  require(q1.dim() == q2.dim(), ErrorKind::DimensionMismatch, "gaussian_kl: dimensions differ");
  const Matrix l2 = cholesky(q2.cov);
  const Vector z = l2.triangularView<Eigen::Lower>().solve(q1.mean - q2.mean);
  return 0.5 * (bregman_divergence(q1.cov, q2.cov) + z.squaredNorm());
}

// ---------------------------------------------------------------------------
// ln Z by tensor trapezoid quadrature in Laplace-whitened coordinates

struct QuadratureOptions {
  double initial_step = 0.5;
  double initial_radius = 8.0;
  double tol = 1e-10;  // on successive ln Z refinements
  int max_refinements = 6;
};

namespace detail {

/// ln Σ_{z ∈ hℤ^m, |z|∞ ≤ radius} e^{f(z) − f0}, plus the largest value of
/// f − f0 seen on the outer shell of the grid.
template <class F>
std::pair<double, double> grid_logsum(const F& f, double f0, Index m, double h, double radius) {
  const Index half = static_cast<Index>(std::ceil(radius / h));
  const Index per = 2 * half + 1;
  Index total = 1;
  for (Index k = 0; k < m; ++k) total *= per;
  std::vector<Index> idx(static_cast<std::size_t>(m), 0);
  Vector z(m);
  double sum = 0.0;
  double shell = -std::numeric_limits<double>::infinity();
  for (Index flat = 0; flat < total; ++flat) {
    Index rem = flat;
    bool on_shell = false;
    for (Index k = 0; k < m; ++k) {
      const Index i = rem % per - half;
      rem /= per;
      z(k) = static_cast<double>(i) * h;
      on_shell = on_shell || (i == -half || i == half);
    }
    const double v = f(z) - f0;
    if (std::isfinite(v)) sum += std::exp(v);
    if (on_shell) shell = std::max(shell, v);
  }
  return {std::log(sum) + static_cast<double>(m) * std::log(h), shell};
}

}  // namespace detail

/// ln ∫ p(x, y) dx for m ≤ 3. The grid is centred at the posterior mode and
/// whitened with the Laplace covariance; the step is halved until ln Z
/// settles and the box grows until the integrand is negligible on its edge.
inline double evidence_quadrature(const ForwardOperator& a, const PoissonData& data, const PriorSpec& prior,
                                  const QuadratureOptions& opts = {}) {
  const Index m = prior.dim();
  if (m > 3) throw Error(ErrorKind::DimensionTooLarge, "evidence_quadrature supports m <= 3");
  const LaplaceResult lap = laplace_approximation(a, data, prior);
  const Matrix r = cholesky(lap.cov);
  const double log_jac = logdet_from_cholesky(r) * 0.5;
  auto f = [&](const Vector& z) { return log_joint(Vector(lap.mean + r * z), a, data, prior); };
  const double f0 = f(Vector::Zero(m));

  double radius = opts.initial_radius;
  double h = opts.initial_step;
  for (int grow = 0; grow < 8; ++grow) {
    if (detail::grid_logsum(f, f0, m, h, radius).second < -45.0) break;
    radius *= 1.5;
  }
  double prev = detail::grid_logsum(f, f0, m, h, radius).first;
  for (int k = 0; k < opts.max_refinements; ++k) {
    h *= 0.5;
    const double cur = detail::grid_logsum(f, f0, m, h, radius).first;
    const bool done = std::abs(cur - prev) < opts.tol;
    prev = cur;
    if (done) break;
  }
  return f0 + log_jac + prev;
}

}  // namespace pvga
