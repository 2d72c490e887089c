#pragma once

// Alternating maximization of the ELBO: Newton steps in the mean with the
// covariance frozen, then fixed-point steps C ← (C0⁻¹ + AᵗDA)⁻¹.

#include <chrono>
#include <algorithm>
#include <cmath>
#include <limits>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "pvga/elbo.hpp"

namespace pvga {

enum class VgaMode { Dense, LowRank, LowRankSparse };
enum class InitCov { Identity, Prior };
enum class StopRule { ElboChange, MeanChange };
enum class MeanSolver { Pcg, Direct };

inline const char* to_string(VgaMode m) {
  switch (m) {
    case VgaMode::Dense: return "dense";
    case VgaMode::LowRank: return "lowrank";
    case VgaMode::LowRankSparse: return "lowrank_sparse";
  }
  return "dense";
}

inline VgaMode parse_vga_mode(const std::string& s) {
  if (s == "dense") return VgaMode::Dense;
  if (s == "lowrank") return VgaMode::LowRank;
  if (s == "lowrank_sparse") return VgaMode::LowRankSparse;
  throw Error(ErrorKind::InvalidConfig, "unknown solver mode '" + s + "'");
}

struct VgaConfig {
  int max_outer = 50;
  int newton_steps_per_outer = 5;
  int fixedpoint_steps_per_outer = 1;
  double outer_tol_elbo = 1e-10;
  StopRule stop = StopRule::ElboChange;
  double mean_change_tol = 1e-8;  // on ‖x̄ᵏ − x̄ᵏ⁻¹‖/‖x̄ᵏ‖ per outer iteration when stop == MeanChange
  double pcg_tol = 1e-6;
  int pcg_maxit = 10;
  MeanSolver mean_solver = MeanSolver::Pcg;
  bool line_search = true;
  int max_halvings = 20;
  VgaMode mode = VgaMode::Dense;
  std::optional<Index> rank;
  std::optional<SparsityMask> mask;
  std::optional<Vector> init_mean;
  InitCov init_cov = InitCov::Identity;
  RsvdOptions rsvd;

  void validate(Index m) const {
    require(max_outer >= 1 && newton_steps_per_outer >= 0 && fixedpoint_steps_per_outer >= 0,
            ErrorKind::InvalidConfig, "iteration budgets must be nonnegative (max_outer >= 1)");
    require(outer_tol_elbo > 0.0 && pcg_tol > 0.0 && mean_change_tol > 0.0, ErrorKind::InvalidConfig,
            "tolerances must be positive");
    if (mode != VgaMode::Dense) {
      require(rank.has_value() && *rank >= 1, ErrorKind::InvalidConfig, "low-rank modes need a rank");
    }
    if (mode == VgaMode::LowRankSparse) {
      require(mask.has_value(), ErrorKind::InvalidConfig, "lowrank_sparse mode needs a sparsity mask");
    }
    if (mask) require(mask->dim() == m, ErrorKind::DimensionMismatch, "mask dimension");
    if (init_mean) require(init_mean->size() == m, ErrorKind::DimensionMismatch, "init_mean length");
  }
};

struct SolverReport {
  std::vector<double> elbo_trace;  // entry 0 is the initial state; NaN where C is not positive definite
  std::vector<double> mean_residual_trace;
  // ‖C⁻¹ − AᵗDA − C0⁻¹‖_F, or ‖Cᵏ − Cᵏ⁻¹‖_F for a masked C; empty when m is too large
  std::vector<double> cov_residual_trace;
  std::vector<double> newton_step_norms;   // every Newton step, in order
  std::vector<int> pcg_iterations;         // per Newton step
  std::vector<int> line_search_halvings;   // per Newton step
  int outer_iterations = 0;
  bool converged = false;
  bool saturated = false;
  bool elbo_defined = true;    // false once a masked C loses positive definiteness
  bool oscillating = false;    // odd/even covariance limits differ
  double oscillation_gap = 0;  // ‖Cᵏ − Cᵏ⁻¹‖_F at exit
  double wall_time = 0.0;      // seconds
  std::optional<Index> rank;
};

struct NewtonStep {
  Vector mean;
  double step_norm = 0.0;
  int pcg_iterations = 0;
  bool pcg_converged = true;
  int halvings = 0;
};

namespace detail {

inline constexpr Index kResidualLimit = 2000;

/// Concave objective in x̄ with C frozen: (y,Ax̄) − Σe^{Ax̄ + q/2} − ½ quad.
inline double mean_objective(const Vector& ax, const Vector& qd, const Vector& x, const PoissonData& data,
                             const PriorSpec& prior) {
  return data.counts().dot(ax) - clamped_exp(ax + 0.5 * qd).sum() - 0.5 * prior.quad(x - prior.mean());
}

inline Vector prior_cov_apply(const PriorSpec& prior, const Vector& v) {
  if (prior.has_dense()) return prior.structure_covariance_dense() * v / prior.alpha();
  return prior.apply_covariance(v);
}

}  // namespace detail

/// One Newton step on G(x̄) = Aᵗe^d + C0⁻¹(x̄−μ0) − Aᵗy with Jacobian AᵗDA + C0⁻¹,
/// followed by backtracking on the mean objective.
inline NewtonStep newton_step_mean(const GaussianState& s, const ForwardOperator& a, const PoissonData& data,
                                   const PriorSpec& prior, const VgaConfig& cfg) {
  check_problem(s, a, data, prior);
  const SparsityMask* mask = s.mask ? &*s.mask : nullptr;
  const Vector qd = quad_diag(a, s.cov, mask);
  const Vector ax = a.apply(s.mean);
  const Vector e = clamped_exp(ax + 0.5 * qd);
  const Vector g = a.apply_transpose(e - data.counts()) + prior.apply_precision(Vector(s.mean - prior.mean()));

  NewtonStep out;
  Vector delta;
  if (cfg.mean_solver == MeanSolver::Direct) {
    const Matrix j = detail::weighted_gram(a, e) + prior.precision_dense();
    Eigen::LLT<Matrix> llt(j);
    require(llt.info() == Eigen::Success, ErrorKind::NotPositiveDefinite, "Newton Jacobian is not SPD");
    delta = -llt.solve(g);
  } else {
    auto apply_j = [&](const Vector& v) {
      return Vector(a.apply_transpose(e.cwiseProduct(a.apply(v))) + prior.apply_precision(v));
    };
    auto precond = [&](const Vector& v) { return detail::prior_cov_apply(prior, v); };
    const PcgResult r = pcg_solve(apply_j, Vector(-g), precond, cfg.pcg_tol, cfg.pcg_maxit);
    delta = r.x;
    out.pcg_iterations = r.iterations;
    out.pcg_converged = r.converged;
  }

  out.mean = s.mean + delta;
  if (cfg.line_search) {
    const double f0 = detail::mean_objective(ax, qd, s.mean, data, prior);
    const Vector adelta = a.apply(delta);
    const double slope = -g.dot(delta);  // directional derivative of the objective
    const double noise = 1e-12 * (1.0 + std::abs(f0));
    double t = 1.0;
    bool accepted = false;
    for (int k = 0; k <= cfg.max_halvings; ++k) {
      const Vector x = s.mean + t * delta;
      const double ft = detail::mean_objective(ax + t * adelta, qd, x, data, prior);
      if (std::isfinite(ft) && ft >= f0 + 1e-4 * t * slope - noise) {
        out.mean = x;
        accepted = true;
        break;
      }
      t *= 0.5;
      ++out.halvings;
    }
    if (!accepted) {
      out.mean = s.mean;
      t = 0.0;
    }
    delta *= t;
  }
  out.step_norm = delta.norm();
  return out;
}

/// One application of T(C) = (C0⁻¹ + Aᵗ diag(e^{d(C)}) A)⁻¹ at the current mean.
/// With a factor, A is replaced by U S Vᵗ in the Woodbury form; with a mask in
/// the state, only pattern entries are kept.
inline Matrix fixed_point_step_cov(const GaussianState& s, const ForwardOperator& a, const PoissonData& data,
                                   const PriorSpec& prior, const LowRankFactor* factor = nullptr) {
  check_problem(s, a, data, prior);
  const Vector e = clamped_exp(rate_vector(s, a));
  const SparsityMask* mask = s.mask ? &*s.mask : nullptr;
  if (factor) {
    return woodbury_cov(prior.covariance(), *factor, e, mask);
  }
  const Matrix j = detail::weighted_gram(a, e) + prior.precision_dense();
  const Matrix l = cholesky(j);
  const double ratio = l.diagonal().maxCoeff() / l.diagonal().minCoeff();
  if (ratio * ratio > 1e14) {
    throw Error(ErrorKind::IllConditioned, "C0^-1 + A^T D A has condition above 1e14");
  }
  const Matrix linv = l.triangularView<Eigen::Lower>().solve(Matrix::Identity(j.rows(), j.cols()));
  Matrix c = linv.transpose() * linv;
  symmetrize(c);
  if (mask) mask->project(c);
  return c;
}

struct VgaResult {
  GaussianState state;
  SolverReport report;
};

/// Initial (x̄⁰, C⁰) implied by the configuration.
inline GaussianState initial_state(const PriorSpec& prior, const VgaConfig& cfg) {
  const Index m = prior.dim();
  GaussianState s;
  s.mean = cfg.init_mean ? *cfg.init_mean : Vector::Zero(m);
  s.cov = cfg.init_cov == InitCov::Prior ? prior.covariance_dense() : Matrix::Identity(m, m);
  s.mask = cfg.mask;
  if (s.mask) s.mask->project(s.cov);
  return s;
}

inline VgaResult run_vga(const ForwardOperator& a, const PoissonData& data, const PriorSpec& prior,
                         const VgaConfig& cfg, const std::optional<GaussianState>& warm_start = std::nullopt) {
  const auto t0 = std::chrono::steady_clock::now();
  const Index m = prior.dim();
  require(a.cols() == m && a.rows() == data.size(), ErrorKind::DimensionMismatch,
          "run_vga: dimensions of A, y and prior disagree");
  cfg.validate(m);

  VgaResult res;
  SolverReport& rep = res.report;
  GaussianState& s = res.state;
  if (warm_start) {
    s = *warm_start;
    s.mask = cfg.mask;
    if (s.mask) s.mask->project(s.cov);
  } else {
    s = initial_state(prior, cfg);
  }

  std::optional<LowRankFactor> factor;
  if (cfg.mode != VgaMode::Dense) {
    factor = rsvd(a, *cfg.rank, cfg.rsvd);
    rep.rank = *cfg.rank;
  }
  const LowRankFactor* fptr = factor ? &*factor : nullptr;
  const bool track_cov = m <= detail::kResidualLimit;
  const bool masked = s.mask.has_value();

  Matrix prev_cov;
  auto record = [&] {
    if (const auto b = elbo_if_defined(s, a, data, prior)) {
      rep.elbo_trace.push_back(b->total);
      rep.saturated = rep.saturated || b->saturated;
    } else {
      rep.elbo_trace.push_back(std::numeric_limits<double>::quiet_NaN());
      rep.elbo_defined = false;
    }
    rep.mean_residual_trace.push_back(grad_mean(s, a, data, prior).norm());
    if (!track_cov) return;
    if (!masked) {
      rep.cov_residual_trace.push_back(optimality_residual(s, a, data, prior).cov);
    } else if (prev_cov.size() > 0) {
      rep.cov_residual_trace.push_back((s.cov - prev_cov).norm());
    }
  };
  record();

  // Without a finite ELBO on both ends the stop rule falls back to the state change.
  auto state_settled = [&](const Vector& prev_mean, double last_step) {
    const double tol = cfg.mean_change_tol;
    const bool mean_ok = last_step <= tol * std::max(1.0, s.mean.norm()) &&
                         (s.mean - prev_mean).norm() <= tol * std::max(1.0, s.mean.norm());
    return mean_ok && (s.cov - prev_cov).norm() <= tol * std::max(1.0, s.cov.norm());
  };

  for (int k = 0; k < cfg.max_outer; ++k) {
    const Vector prev_mean = s.mean;
    double last_step = 0.0;
    for (int j = 0; j < cfg.newton_steps_per_outer; ++j) {
      NewtonStep st = newton_step_mean(s, a, data, prior, cfg);
      s.mean = std::move(st.mean);
      rep.newton_step_norms.push_back(st.step_norm);
      rep.pcg_iterations.push_back(st.pcg_iterations);
      rep.line_search_halvings.push_back(st.halvings);
      last_step = st.step_norm;
    }
    for (int j = 0; j < cfg.fixedpoint_steps_per_outer; ++j) {
      if (track_cov || masked) prev_cov = s.cov;
      s.cov = fixed_point_step_cov(s, a, data, prior, fptr);
    }
    rep.outer_iterations = k + 1;
    record();

    const std::size_t t = rep.elbo_trace.size();
    const double f1 = rep.elbo_trace[t - 1];
    const double f0 = rep.elbo_trace[t - 2];
    bool done = false;
    if (cfg.stop == StopRule::MeanChange) {
      done = (s.mean - prev_mean).norm() <= cfg.mean_change_tol * std::max(1.0, s.mean.norm());
    } else if (std::isfinite(f0) && std::isfinite(f1)) {
      done = std::abs(f1 - f0) < cfg.outer_tol_elbo;
    } else if (prev_cov.size() > 0) {
      done = state_settled(prev_mean, last_step);
    }
    if (done) {
      rep.converged = true;
      break;
    }
  }

  if (track_cov && prev_cov.size() > 0) {
    rep.oscillation_gap = (s.cov - prev_cov).norm();
    rep.oscillating = rep.converged && rep.oscillation_gap > 1e-6 * std::max(1.0, s.cov.norm());
  }
  rep.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

struct ModeSuggestion {
  VgaMode mode = VgaMode::Dense;
  std::optional<Index> rank;
};

/// Dense when m ≤ 1000 and a few m×m work arrays fit the budget; otherwise
/// low-rank, with the mask added once a single dense m×m no longer fits.
/// Rank comes from the relative singular-value threshold on a probe rSVD.
inline ModeSuggestion select_mode(const ForwardOperator& a, std::size_t memory_budget = std::size_t{1} << 30,
                                  double rank_threshold = 1e-6, Index max_probe_rank = 256,
                                  std::uint64_t seed = 0) {
  const auto m = static_cast<double>(a.cols());
  const double dense_bytes = 3.0 * 8.0 * m * m;
  ModeSuggestion out;
  if (a.cols() <= 1000 && dense_bytes <= static_cast<double>(memory_budget)) return out;
  out.mode = 8.0 * m * m * 2.0 <= static_cast<double>(memory_budget) ? VgaMode::LowRank
                                                                       : VgaMode::LowRankSparse;
  const Index probe = std::min({a.rows(), a.cols(), max_probe_rank});
  const LowRankFactor f = rsvd(a, probe, RsvdOptions{10, 2, seed});
  out.rank = std::max<Index>(1, rank_from_threshold(f.S, rank_threshold));
  return out;
}

}  // namespace pvga
