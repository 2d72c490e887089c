#pragma once

// Posterior mode and the Gaussian fitted by second-order expansion there.

#include <cmath>

#include "pvga/linalg.hpp"
#include "pvga/model.hpp"

namespace pvga {

struct MapResult {
  Vector x;
  double grad_norm = 0.0;
  int iterations = 0;
};

namespace detail {

/// Aᵗ diag(w) A, dense.
inline Matrix weighted_gram(const ForwardOperator& a, const Vector& w) {
  if (const Matrix* av = a.dense_view()) return av->transpose() * w.asDiagonal() * (*av);
  if (const auto* f = a.factor()) {
    const Matrix vs = f->V * f->S.asDiagonal();
    return vs * (f->U.transpose() * w.asDiagonal() * f->U) * vs.transpose();
  }
  const Matrix ad = a.materialize();
  return ad.transpose() * w.asDiagonal() * ad;
}

inline double neg_log_posterior(const Vector& x, const ForwardOperator& a, const PoissonData& data,
                                const PriorSpec& prior) {
  const Vector ax = a.apply(x);
  return ax.array().exp().sum() - ax.dot(data.counts()) + 0.5 * prior.quad(x - prior.mean());
}

}  // namespace detail

/// Newton iteration with backtracking on g(x) = −ln p(x|y) up to constants.
inline MapResult map_estimate(const ForwardOperator& a, const PoissonData& data, const PriorSpec& prior,
                              double tol = 1e-10, int maxit = 100) {
  require(a.cols() == prior.dim() && a.rows() == data.size(), ErrorKind::DimensionMismatch,
          "map_estimate: dimensions of A, y and prior disagree");
  const Index m = prior.dim();
  const Vector aty = a.apply_transpose(data.counts());
  MapResult res{prior.mean(), 0.0, 0};
  Vector& x = res.x;

  auto gradient = [&](const Vector& ax, const Vector& xx) {
    return Vector(a.apply_transpose(ax.array().exp().matrix()) - aty + prior.apply_precision(Vector(xx - prior.mean())));
  };

  double g = detail::neg_log_posterior(x, a, data, prior);
  for (;;) {
    const Vector ax = a.apply(x);
    const Vector grad = gradient(ax, x);
    res.grad_norm = grad.norm();
    if (res.grad_norm <= tol) return res;
    if (res.iterations >= maxit) {
      throw Error(ErrorKind::MaxIterationsExceeded,
                  "map_estimate: gradient norm " + std::to_string(res.grad_norm) + " after " +
                      std::to_string(maxit) + " iterations");
    }
    ++res.iterations;

    const Vector w = ax.array().exp().matrix();
    Vector step;
    if (prior.has_dense() && m <= 4096) {
      Matrix h = detail::weighted_gram(a, w) + prior.precision_dense();
      Eigen::LLT<Matrix> llt(h);
      require(llt.info() == Eigen::Success, ErrorKind::NotPositiveDefinite, "map_estimate: Hessian not SPD");
      step = -llt.solve(grad);
    } else {
      auto apply_h = [&](const Vector& v) {
        return Vector(a.apply_transpose(w.cwiseProduct(a.apply(v))) + prior.apply_precision(v));
      };
      auto precond = [&](const Vector& v) { return prior.apply_covariance(v); };
      step = -pcg_solve(apply_h, Vector(grad), precond, 1e-12, 500).x;
    }

    // Stagnation at roundoff level counts as converged.
    if (step.norm() <= 1e-14 * (1.0 + x.norm())) return res;

    const double slope = grad.dot(step);
    double t = 1.0;
    bool accepted = false;
    for (int k = 0; k < 40; ++k) {
      const Vector trial = x + t * step;
      const double gt = detail::neg_log_posterior(trial, a, data, prior);
      if (std::isfinite(gt) && gt <= g + 1e-4 * t * slope + 1e-13 * (1.0 + std::abs(g))) {
        x = trial;
        g = gt;
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) return res;
  }
}

struct LaplaceResult {
  Vector mean;
  Matrix cov;
};

/// N(x̂, H⁻¹) with H = Aᵗ diag(e^{Ax̂}) A + C0⁻¹.
inline LaplaceResult laplace_approximation(const ForwardOperator& a, const PoissonData& data,
                                           const PriorSpec& prior, double tol = 1e-10) {
  LaplaceResult out;
  out.mean = map_estimate(a, data, prior, tol).x;
  const Vector w = a.apply(out.mean).array().exp().matrix();
  out.cov = spd_inverse(detail::weighted_gram(a, w) + prior.precision_dense());
  symmetrize(out.cov);
  return out;
}

}  // namespace pvga
