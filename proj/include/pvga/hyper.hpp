#pragma once

// EM for the prior strength α under a Gamma(a, b) hyperprior: the E-step is a
// full VGA solve at fixed α, the M-step has a closed form.

#include <cmath>
#include <future>
#include <optional>
#include <vector>

#include "pvga/vga.hpp"

namespace pvga {

struct HyperConfig {
  double a = 1.0;
  double b = 1e-4;
  double alpha_init = 1.0;
  int max_em = 100;
  double alpha_tol = 1e-8;
  VgaConfig vga;

  void validate() const {
    require(a > 0.0 && b > 0.0, ErrorKind::InvalidConfig, "hyperprior needs a > 0 and b > 0");
    if (!(alpha_init > 0.0)) throw Error(ErrorKind::InvalidAlpha, "alpha_init must be positive");
    require(max_em >= 1 && alpha_tol > 0.0, ErrorKind::InvalidConfig, "max_em >= 1 and alpha_tol > 0");
  }
};

struct HyperTrace {
  std::vector<double> alpha_sequence;        // α used in each E-step, then the final α
  std::vector<double> psi_sequence;          // ψ after each E-step
  std::vector<double> joint_bound_sequence;  // joint bound after each E-step
  bool converged = false;
  bool possibly_degenerate = false;  // α* above half its a-priori upper bound
};

struct PhiPsi {
  double phi = 0.0;
  double psi = 0.0;
  double elbo = 0.0;  // F_α = φ + αψ
};

/// ψ = −½(x̄−μ0)ᵗC̄0⁻¹(x̄−μ0) − ½tr(C̄0⁻¹C) ≤ 0 and φ = F_α − αψ, which still
/// carries the (m/2) ln α of the prior normalization.
inline PhiPsi phi_psi(const GaussianState& s, const ForwardOperator& a, const PoissonData& data,
                      const PriorSpec& prior) {
  check_problem(s, a, data, prior);
  PhiPsi out;
  out.psi = -0.5 * prior.structure_quad(s.mean - prior.mean()) - 0.5 * prior.structure_trace(s.cov);
  out.elbo = elbo(s, a, data, prior).total;
  out.phi = out.elbo - prior.alpha() * out.psi;
  return out;
}

/// Upper bound (m + 2(a−1)) / (2b) that every EM iterate respects.
inline double alpha_upper_bound(Index m, double a, double b) {
  return (static_cast<double>(m) + 2.0 * (a - 1.0)) / (2.0 * b);
}

/// F_α(x̄, C) + (a−1) ln α − αb + a ln b − ln Γ(a), with C0 = α⁻¹C̄0.
inline double joint_lower_bound(const GaussianState& s, double alpha, const ForwardOperator& a,
                                const PoissonData& data, const PriorSpec& prior_structure, double shape,
                                double rate) {
  if (!(alpha > 0.0)) throw Error(ErrorKind::InvalidAlpha, "alpha must be positive");
  const double f = elbo(s, a, data, prior_structure.with_alpha(alpha)).total;
  return f + (shape - 1.0) * std::log(alpha) - alpha * rate + shape * std::log(rate) - std::lgamma(shape);
}

/// α = (m + 2(a−1)) / ((x̄−μ0)ᵗC̄0⁻¹(x̄−μ0) + tr(C̄0⁻¹C) + 2b).
inline double update_alpha(const GaussianState& s, const PriorSpec& prior_structure, double shape,
                           double rate) {
  const double m = static_cast<double>(prior_structure.dim());
  const double denom = prior_structure.structure_quad(s.mean - prior_structure.mean()) +
                       prior_structure.structure_trace(s.cov) + 2.0 * rate;
  if (!(denom > 0.0)) throw Error(ErrorKind::NonpositiveDenominator, "alpha update denominator <= 0");
  return (m + 2.0 * (shape - 1.0)) / denom;
}

struct HyperResult {
  GaussianState state;
  double alpha = 0.0;
  HyperTrace trace;
};

inline HyperResult run_hierarchical(const ForwardOperator& a, const PoissonData& data,
                                    const PriorSpec& prior_structure, const HyperConfig& cfg) {
  cfg.validate();
  HyperResult res;
  HyperTrace& tr = res.trace;
  double alpha = cfg.alpha_init;
  std::optional<GaussianState> warm;
  for (int k = 0; k < cfg.max_em; ++k) {
    const PriorSpec prior = prior_structure.with_alpha(alpha);
    VgaResult e = run_vga(a, data, prior, cfg.vga, warm);
    const PhiPsi pp = phi_psi(e.state, a, data, prior);
    tr.alpha_sequence.push_back(alpha);
    tr.psi_sequence.push_back(pp.psi);
    tr.joint_bound_sequence.push_back(pp.elbo + (cfg.a - 1.0) * std::log(alpha) - alpha * cfg.b +
                                      cfg.a * std::log(cfg.b) - std::lgamma(cfg.a));

    const double next = update_alpha(e.state, prior_structure, cfg.a, cfg.b);
    if (!(next >= 1e-12)) {
      throw Error(ErrorKind::AlphaCollapse, "alpha fell below 1e-12");
    }
    res.state = std::move(e.state);
    warm = res.state;
    const bool done = std::abs(next - alpha) < cfg.alpha_tol * alpha;
    alpha = next;
    if (done) {
      tr.converged = true;
      break;
    }
  }
  tr.alpha_sequence.push_back(alpha);
  res.alpha = alpha;
  tr.possibly_degenerate = alpha > 0.5 * alpha_upper_bound(prior_structure.dim(), cfg.a, cfg.b);
  return res;
}

/// `count` log-spaced values from center/spread to center·spread.
inline std::vector<double> log_grid(double center, double spread, int count) {
  require(center > 0.0 && spread > 1.0 && count >= 2, ErrorKind::InvalidConfig, "log grid parameters");
  std::vector<double> g(static_cast<std::size_t>(count));
  const double lo = std::log(center / spread);
  const double hi = std::log(center * spread);
  for (int i = 0; i < count; ++i) {
    g[static_cast<std::size_t>(i)] = std::exp(lo + (hi - lo) * i / (count - 1));
  }
  return g;
}

struct GridPoint {
  double alpha = 0.0;
  double joint_bound = 0.0;
  double psi = 0.0;
};

/// Joint bound at the VGA optimum for each α; independent solves run concurrently.
inline std::vector<GridPoint> profile_alpha_grid(const ForwardOperator& a, const PoissonData& data,
                                                 const PriorSpec& prior_structure, const HyperConfig& cfg,
                                                 const std::vector<double>& alphas) {
  std::vector<std::future<GridPoint>> jobs;
  jobs.reserve(alphas.size());
  for (double al : alphas) {
    jobs.push_back(std::async(std::launch::async, [&, al] {
      const PriorSpec prior = prior_structure.with_alpha(al);
      const VgaResult r = run_vga(a, data, prior, cfg.vga);
      GridPoint p;
      p.alpha = al;
      p.joint_bound = joint_lower_bound(r.state, al, a, data, prior_structure, cfg.a, cfg.b);
      p.psi = phi_psi(r.state, a, data, prior).psi;
      return p;
    }));
  }
  std::vector<GridPoint> out;
  out.reserve(jobs.size());
  for (auto& j : jobs) out.push_back(j.get());
  return out;
}

}  // namespace pvga
