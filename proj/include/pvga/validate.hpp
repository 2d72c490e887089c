#pragma once

// Reference answers for the VGA: Laplace approximation, an independence
// Metropolis-Hastings chain with the VGA as proposal, HPD intervals, and the
// orbit structure of the covariance fixed-point map.

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "pvga/elbo.hpp"
#include "pvga/map.hpp"

namespace pvga {

inline GaussianState laplace_state(const ForwardOperator& a, const PoissonData& data, const PriorSpec& prior) {
  LaplaceResult l = laplace_approximation(a, data, prior);
  return GaussianState{std::move(l.mean), std::move(l.cov), std::nullopt};
}

struct McmcConfig {
  long chain_length = 200000;
  long burn_in = 100000;
  std::uint64_t seed = 0;

  void validate() const {
    require(chain_length > 0 && burn_in >= 0 && burn_in < chain_length, ErrorKind::InvalidConfig,
            "mcmc needs 0 <= burn_in < chain_length");
  }
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double width() const { return hi - lo; }
};

struct ChainSummary {
  Vector mean;
  Matrix covariance;
  Vector mean_std_error;  // batch-means estimate per coordinate
  double acceptance_rate = 0.0;
  long thin = 1;
  Matrix samples;  // kept post-burn-in draws, one per row
};

/// Metropolis-Hastings with a state-independent Gaussian proposal targeting
/// p(x | y). Proposals whose log-rates exceed 700 are rejected.
inline ChainSummary mh_independence_sampler(const ForwardOperator& a, const PoissonData& data,
                                            const PriorSpec& prior, const GaussianState& proposal,
                                            const McmcConfig& cfg) {
  cfg.validate();
  const Index m = proposal.dim();
  require(a.cols() == m && prior.dim() == m && a.rows() == data.size(), ErrorKind::DimensionMismatch,
          "mcmc: dimensions of proposal, A, y and prior disagree");
  if (m > 5000) throw Error(ErrorKind::CovTooLargeForSampling, "proposal covariance too large to sample");
  const Matrix l = cholesky(proposal.cov);

  ChainSummary out;
  out.thin = m > 1000 ? 10 : 1;
  const long kept = (cfg.chain_length - cfg.burn_in + out.thin - 1) / out.thin;
  out.samples.resize(kept, m);

  // Log target minus log proposal, both up to constants; nullopt on overflow.
  auto log_weight = [&](const Vector& x, const Vector& z) -> std::optional<double> {
    const Vector ax = a.apply(x);
    if (ax.maxCoeff() > kRateClamp) return std::nullopt;
    const double lp = ax.dot(data.counts()) - ax.array().exp().sum() - 0.5 * prior.quad(x - prior.mean());
    return lp + 0.5 * z.squaredNorm();
  };

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  Vector x = proposal.mean;
  double w = *log_weight(x, Vector::Zero(m));
  long accepted = 0;
  long row = 0;
  Vector z(m);
  for (long t = 0; t < cfg.chain_length; ++t) {
    for (Index i = 0; i < m; ++i) z(i) = normal(rng);
    const Vector xp = proposal.mean + l * z;
    const auto wp = log_weight(xp, z);
    const double u = unif(rng);
    if (wp && (*wp >= w || std::log(u) < *wp - w)) {
      x = xp;
      w = *wp;
      if (t >= cfg.burn_in) ++accepted;
    }
    if (t >= cfg.burn_in && (t - cfg.burn_in) % out.thin == 0) out.samples.row(row++) = x.transpose();
  }
  out.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(cfg.chain_length - cfg.burn_in);

  out.mean = out.samples.colwise().mean().transpose();
  const Matrix centered = out.samples.rowwise() - out.mean.transpose();
  out.covariance = centered.transpose() * centered / static_cast<double>(std::max<long>(1, kept - 1));
  symmetrize(out.covariance);

  const long nb = std::max<long>(2, static_cast<long>(std::sqrt(static_cast<double>(kept))));
  const long bs = kept / nb;
  out.mean_std_error = Vector::Zero(m);
  if (bs >= 1) {
    Matrix bm(nb, m);
    for (long b = 0; b < nb; ++b) bm.row(b) = out.samples.middleRows(b * bs, bs).colwise().mean();
    const Matrix bc = bm.rowwise() - bm.colwise().mean();
    out.mean_std_error =
        (bc.colwise().squaredNorm() / static_cast<double>((nb - 1) * nb)).array().sqrt().transpose();
  }
  return out;
}

/// x̄ᵢ ± z_{(1+γ)/2} √Cᵢᵢ.
inline std::vector<Interval> hpd_intervals(const GaussianState& s, double gamma) {
  require(gamma > 0.0 && gamma < 1.0, ErrorKind::InvalidConfig, "credibility level must lie in (0,1)");
  const double z = boost::math::quantile(boost::math::normal(), 0.5 * (1.0 + gamma));
  std::vector<Interval> out(static_cast<std::size_t>(s.dim()));
  for (Index i = 0; i < s.dim(); ++i) {
    const double half = z * std::sqrt(s.cov(i, i));
    out[static_cast<std::size_t>(i)] = {s.mean(i) - half, s.mean(i) + half};
  }
  return out;
}

/// Per column, the narrowest window of order statistics holding ⌈γN⌉ draws.
inline std::vector<Interval> hpd_intervals(const Matrix& samples, double gamma) {
  require(gamma > 0.0 && gamma < 1.0, ErrorKind::InvalidConfig, "credibility level must lie in (0,1)");
  const Index n = samples.rows();
  if (n < 100) throw Error(ErrorKind::InsufficientSamples, "HPD needs at least 100 samples");
  const Index k = std::min<Index>(n, static_cast<Index>(std::ceil(gamma * static_cast<double>(n))));
  std::vector<Interval> out(static_cast<std::size_t>(samples.cols()));
  std::vector<double> col(static_cast<std::size_t>(n));
  for (Index j = 0; j < samples.cols(); ++j) {
    for (Index i = 0; i < n; ++i) col[static_cast<std::size_t>(i)] = samples(i, j);
    std::sort(col.begin(), col.end());
    Index best = 0;
    for (Index i = 1; i + k - 1 < n; ++i) {
      const auto w = col[static_cast<std::size_t>(i + k - 1)] - col[static_cast<std::size_t>(i)];
      if (w < col[static_cast<std::size_t>(best + k - 1)] - col[static_cast<std::size_t>(best)]) best = i;
    }
    out[static_cast<std::size_t>(j)] = {col[static_cast<std::size_t>(best)],
                                        col[static_cast<std::size_t>(best + k - 1)]};
  }
  return out;
}

struct GaussianComparison {
  double mean_l2 = 0.0;
  double cov_spectral = 0.0;
  double kl_12 = 0.0;  // KL(g1 ‖ g2)
  double kl_21 = 0.0;
};

inline GaussianComparison compare_gaussians(const GaussianState& g1, const GaussianState& g2) {
  require(g1.dim() == g2.dim(), ErrorKind::DimensionMismatch, "compare_gaussians: dimensions differ");
  return {(g1.mean - g2.mean).norm(), spectral_norm_sym(g1.cov - g2.cov), gaussian_kl(g1, g2),
          gaussian_kl(g2, g1)};
}

struct OrbitDiagnostics {
  bool even_decreasing = true;
  bool odd_increasing = true;
  bool limits_ordered = true;  // C** ⪯ C*
  double gap = 0.0;            // ‖C* − C**‖_F between the last even and odd iterates
  std::vector<Matrix> iterates;
};

/// Iterates T(C) = (C0⁻¹ + Aᵗ diag(e^{Ax̄ + ½diag(ACAᵗ)}) A)⁻¹ from C⁰ = C0 with x̄ frozen.
inline OrbitDiagnostics orbit_check(const ForwardOperator& a, const Vector& mean, const PriorSpec& prior,
                                    int k_max, double slack = 1e-10) {
  require(a.cols() == mean.size() && prior.dim() == mean.size(), ErrorKind::DimensionMismatch,
          "orbit_check: dimensions disagree");
  OrbitDiagnostics out;
  const Vector ax = a.apply(mean);
  const Matrix p0 = prior.precision_dense();
  out.iterates.push_back(prior.covariance_dense());
  for (int k = 0; k < k_max; ++k) {
    const Vector e = clamped_exp(ax + 0.5 * quad_diag(a, out.iterates.back()));
    out.iterates.push_back(spd_inverse(detail::weighted_gram(a, e) + p0));
  }
  for (std::size_t k = 2; k < out.iterates.size(); ++k) {
    const bool ok = loewner_le(out.iterates[k - 2], out.iterates[k], slack);
    const bool ok_rev = loewner_le(out.iterates[k], out.iterates[k - 2], slack);
    if (k % 2 == 0) {
      out.even_decreasing = out.even_decreasing && ok_rev;
    } else {
      out.odd_increasing = out.odd_increasing && ok;
    }
  }
  if (out.iterates.size() >= 2) {
    const std::size_t last = out.iterates.size() - 1;
    const Matrix& c_even = out.iterates[last % 2 == 0 ? last : last - 1];
    const Matrix& c_odd = out.iterates[last % 2 == 1 ? last : last - 1];
    out.limits_ordered = loewner_le(c_odd, c_even, slack);
    out.gap = (c_even - c_odd).norm();
  }
  return out;
}

}  // namespace pvga
