#include <gtest/gtest.h>

#include <boost/math/tools/roots.hpp>

#include <array>
#include <cmath>
#include <limits>

#include "pvga/problems.hpp"
#include "pvga/vga.hpp"
#include "test_util.hpp"

namespace pvga {
namespace {

using testing::expect_error;
using testing::random_instance;
using testing::random_vector;

Matrix scalar(double v) { return Matrix::Constant(1, 1, v); }

struct Scalar {
  ForwardOperator a = ForwardOperator::dense(scalar(1.0));
  PoissonData data = PoissonData(Vector::Constant(1, 1.0));
  PriorSpec prior = make_prior(PriorKind::L2, 1.0, 1);
};

TEST(NewtonStep, ScalarHandEvaluation) {
  Scalar p;
  GaussianState s{Vector::Zero(1), scalar(1.0), std::nullopt};
  const NewtonStep st = newton_step_mean(s, p.a, p.data, p.prior, VgaConfig{});
  const double e = std::exp(0.5);
  EXPECT_NEAR(st.mean(0), -(e - 1.0) / (e + 1.0), 1e-12);
  EXPECT_NEAR(st.mean(0), -0.2449, 1e-4);
  EXPECT_EQ(st.halvings, 0);
}

TEST(NewtonStep, ScalarConvergesToBisectionRoot) {
  Scalar p;
  GaussianState s{Vector::Zero(1), scalar(1.0), std::nullopt};
  for (int k = 0; k < 30; ++k) s.mean = newton_step_mean(s, p.a, p.data, p.prior, VgaConfig{}).mean;
  // G(x) = e^{x+1/2} + x − 1.
  auto g = [](double x) { return std::exp(x + 0.5) + x - 1.0; };
  const auto [lo, hi] =
      boost::math::tools::bisect(g, -2.0, 2.0, boost::math::tools::eps_tolerance<double>(50));
  EXPECT_NEAR(s.mean(0), 0.5 * (lo + hi), 1e-12);
}

TEST(NewtonStep, RootIsFixed) {
  Scalar p;
  auto g = [](double x) { return std::exp(x + 0.5) + x - 1.0; };
  const auto [lo, hi] =
      boost::math::tools::bisect(g, -2.0, 2.0, boost::math::tools::eps_tolerance<double>(53));
  GaussianState s{Vector::Constant(1, 0.5 * (lo + hi)), scalar(1.0), std::nullopt};
  const NewtonStep st = newton_step_mean(s, p.a, p.data, p.prior, VgaConfig{});
  EXPECT_LT(st.step_norm, 1e-14);
}

TEST(NewtonStep, ZeroOperatorGivesPriorMeanInOneStep) {
  std::mt19937_64 rng(3);
  const Index m = 6;
  const ForwardOperator a = ForwardOperator::dense(Matrix::Zero(4, m));
  const PoissonData data(Vector::Constant(4, 2.0));
  const PriorSpec prior = make_prior(PriorKind::H1, 2.0, m, random_vector(m, rng));
  GaussianState s{random_vector(m, rng), Matrix::Identity(m, m), std::nullopt};
  VgaConfig cfg;
  cfg.mean_solver = MeanSolver::Direct;
  const NewtonStep st = newton_step_mean(s, a, data, prior, cfg);
  EXPECT_LT((st.mean - prior.mean()).norm(), 1e-12);
}

TEST(FixedPoint, ScalarHandEvaluation) {
  Scalar p;
  GaussianState s{Vector::Zero(1), scalar(1.0), std::nullopt};
  const Matrix c = fixed_point_step_cov(s, p.a, p.data, p.prior);
  EXPECT_NEAR(c(0, 0), 1.0 / (1.0 + std::exp(0.5)), 1e-14);
  EXPECT_NEAR(c(0, 0), 0.3775, 1e-4);
}

TEST(FixedPoint, ZeroOperatorGivesPriorCovariance) {
  const Index m = 5;
  const ForwardOperator a = ForwardOperator::dense(Matrix::Zero(3, m));
  const PoissonData data(Vector::Constant(3, 1.0));
  const PriorSpec prior = make_prior(PriorKind::H1, 3.0, m);
  GaussianState s{Vector::Zero(m), Matrix::Identity(m, m), std::nullopt};
  const Matrix c = fixed_point_step_cov(s, a, data, prior);
  EXPECT_LT((c - prior.covariance_dense()).norm(), 1e-12 * prior.covariance_dense().norm());
}

TEST(FixedPoint, DenseAndFullRankWoodburyAgree) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Index m = 10 + 6 * static_cast<Index>(seed);
    auto inst = random_instance(m, m + 3, seed);
    const Matrix dense = fixed_point_step_cov(inst.state, inst.a, inst.data, inst.prior);
    const LowRankFactor f = rsvd(inst.a.materialize(), m);
    const Matrix lr = fixed_point_step_cov(inst.state, inst.a, inst.data, inst.prior, &f);
    EXPECT_LT((dense - lr).norm(), 1e-8 * dense.norm()) << "m = " << m;
  }
}

TEST(FixedPoint, MaskKeepsOnlyPatternEntries) {
  auto inst = random_instance(12, 15, 8);
  const Matrix dense = fixed_point_step_cov(inst.state, inst.a, inst.data, inst.prior);
  GaussianState s = inst.state;
  s.mask = SparsityMask::banded(12, 3);
  s.mask->project(s.cov);
  const Matrix masked = fixed_point_step_cov(s, inst.a, inst.data, inst.prior);
  const Matrix unmasked_same_d = [&] {
    GaussianState t = s;
    t.mask.reset();
    return fixed_point_step_cov(t, inst.a, inst.data, inst.prior);
  }();
  for (Index i = 0; i < 12; ++i)
    for (Index j = 0; j < 12; ++j) {
      if (s.mask->contains(i, j)) {
        EXPECT_NEAR(masked(i, j), unmasked_same_d(i, j), 1e-13);
      } else {
        EXPECT_EQ(masked(i, j), 0.0);
      }
    }
  EXPECT_GT((dense - unmasked_same_d).norm(), 0.0);
}

TEST(RunVga, ZeroOperatorReturnsPrior) {
  std::mt19937_64 rng(11);
  const Index m = 7;
  const ForwardOperator a = ForwardOperator::dense(Matrix::Zero(5, m));
  const PoissonData data(Vector::Constant(5, 3.0));
  const PriorSpec prior = make_prior(PriorKind::L2, 4.0, m, random_vector(m, rng));
  VgaConfig cfg;
  cfg.mean_solver = MeanSolver::Direct;
  const VgaResult r = run_vga(a, data, prior, cfg);
  EXPECT_LT((r.state.mean - prior.mean()).norm(), 1e-12);
  EXPECT_LT((r.state.cov - prior.covariance_dense()).norm(), 1e-14);
  EXPECT_LE(r.report.outer_iterations, 2);
  EXPECT_TRUE(r.report.converged);
}

struct Phillips {
  TestProblem p = make_test_problem(ProblemName::Phillips, 100);
  PoissonData data = sample_poisson_data(p.a, p.x_true, substream_seed(1, "data"));
  PriorSpec prior = make_prior(PriorKind::L2, 10.0, 100);
};

TEST(RunVga, PhillipsConvergesQuickly) {
  Phillips ph;
  const VgaResult r = run_vga(ph.p.a, ph.data, ph.prior, VgaConfig{});
  ASSERT_TRUE(r.report.converged);
  EXPECT_LE(r.report.outer_iterations, 10);
  const auto& f = r.report.elbo_trace;
  EXPECT_LT(std::abs(f.back() - f[f.size() - 2]), 1e-10);
  const OptimalityResidual res = optimality_residual(r.state, ph.p.a, ph.data, ph.prior);
  EXPECT_LT(res.mean, 1e-5);
  EXPECT_LT(res.cov, 1e-5);

  // Newton steps of the first outer iteration decay superlinearly.
  const auto& st = r.report.newton_step_norms;
  ASSERT_GE(st.size(), 5u);
  const double r1 = st[3] / st[2];
  const double r2 = st[4] / st[3];
  EXPECT_LT(r2, r1);
  EXPECT_LT(r2, 0.1);
}

TEST(RunVga, DirectAndPcgMeanSolversAgree) {
  Phillips ph;
  VgaConfig cfg;
  const VgaResult pcg = run_vga(ph.p.a, ph.data, ph.prior, cfg);
  cfg.mean_solver = MeanSolver::Direct;
  const VgaResult direct = run_vga(ph.p.a, ph.data, ph.prior, cfg);
  EXPECT_LT((pcg.state.mean - direct.state.mean).norm(), 1e-6 * direct.state.mean.norm());
  EXPECT_LT((pcg.state.cov - direct.state.cov).norm(), 1e-6 * direct.state.cov.norm());
}

// Closed-form ELBO for m = 2 used by the grid oracle.
double elbo2(const Matrix& a, const Vector& y, const Vector& mu0, const Matrix& c0inv, const Vector& x,
             const Matrix& c) {
  double f = 0.0;
  for (Index i = 0; i < a.rows(); ++i) {
    const double ax = a(i, 0) * x(0) + a(i, 1) * x(1);
    const double q = a(i, 0) * a(i, 0) * c(0, 0) + 2.0 * a(i, 0) * a(i, 1) * c(0, 1) + a(i, 1) * a(i, 1) * c(1, 1);
    f += y(i) * ax - std::exp(ax + 0.5 * q) - std::lgamma(y(i) + 1.0);
  }
  const Vector dx = x - mu0;
  f -= 0.5 * dx.dot(c0inv * dx);
  const Matrix pc = c0inv * c;
  const double det = pc(0, 0) * pc(1, 1) - pc(0, 1) * pc(1, 0);
  f -= 0.5 * (pc.trace() - std::log(det) - 2.0);
  return f;
}

TEST(RunVga, MatchesGridSearchOnTwoDimensions) {
  Matrix a(3, 2);
  a << 0.8, 0.2, 0.3, 0.9, -0.4, 0.5;
  const Vector y = (Vector(3) << 3.0, 1.0, 0.0).finished();
  const Vector mu0 = (Vector(2) << 0.1, -0.2).finished();
  const PriorSpec prior = make_prior(PriorKind::H1, 1.5, 2, mu0);
  const ForwardOperator op = ForwardOperator::dense(a);
  const PoissonData data(y);
  VgaConfig cfg;
  cfg.outer_tol_elbo = 1e-14;
  cfg.max_outer = 200;
  const VgaResult r = run_vga(op, data, prior, cfg);
  const double solver = elbo(r.state, op, data, prior).total;

  // Pattern search on a shrinking 5-point-per-axis lattice in (x̄, Cholesky factor of C).
  const Matrix c0inv = prior.precision_dense();
  std::array<double, 5> center{0.0, 0.0, 0.5, 0.0, 0.5};
  auto value = [&](const std::array<double, 5>& p) {
    if (p[2] <= 0.0 || p[4] <= 0.0) return -std::numeric_limits<double>::infinity();
    Matrix l(2, 2);
    l << p[2], 0.0, p[3], p[4];
    return elbo2(a, y, mu0, c0inv, (Vector(2) << p[0], p[1]).finished(), l * l.transpose());
  };
  double best = value(center);
  double h = 0.5;
  while (h > 1e-7) {
    std::array<double, 5> arg = center;
    for (int i0 = -2; i0 <= 2; ++i0)
      for (int i1 = -2; i1 <= 2; ++i1)
        for (int i2 = -2; i2 <= 2; ++i2)
          for (int i3 = -2; i3 <= 2; ++i3)
            for (int i4 = -2; i4 <= 2; ++i4) {
              const std::array<double, 5> p{center[0] + h * i0, center[1] + h * i1, center[2] + h * i2,
                                            center[3] + h * i3, center[4] + h * i4};
              const double v = value(p);
              if (v > best) {
                best = v;
                arg = p;
              }
            }
    if (arg == center) h *= 0.5;
    center = arg;
  }
  EXPECT_GE(solver, best - 1e-6);
  EXPECT_NEAR(solver, best, 1e-6);
}

TEST(RunVga, ElboTraceIsMonotone) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto inst = random_instance(3 + static_cast<Index>(seed % 6), 4 + static_cast<Index>(seed % 5), seed);
    const VgaResult r = run_vga(inst.a, inst.data, inst.prior, VgaConfig{});
    const auto& f = r.report.elbo_trace;
    for (std::size_t k = 1; k < f.size(); ++k) EXPECT_GE(f[k], f[k - 1] - 1e-8) << "seed " << seed;
  }
}

TEST(RunVga, CovarianceIteratesStayBelowPrior) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto inst = random_instance(6, 8, seed);
    const Matrix c0 = inst.prior.covariance_dense();
    const double lmax0 = sym_eigenvalues(c0).maxCoeff();
    GaussianState s = initial_state(inst.prior, VgaConfig{});
    for (int k = 0; k < 10; ++k) {
      for (int j = 0; j < 5; ++j) s.mean = newton_step_mean(s, inst.a, inst.data, inst.prior, VgaConfig{}).mean;
      s.cov = fixed_point_step_cov(s, inst.a, inst.data, inst.prior);
      EXPECT_GE(min_eigenvalue(Matrix(c0 - s.cov)), -1e-10) << "seed " << seed << " k " << k;
      EXPECT_LE(sym_eigenvalues(s.cov).maxCoeff(), lmax0 + 1e-10);
    }
  }
}

VgaConfig tight() {
  VgaConfig cfg;
  cfg.outer_tol_elbo = 1e-13;
  cfg.max_outer = 200;
  return cfg;
}

TEST(RunVga, UniqueFromDifferentStarts) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto inst = random_instance(5, 7, seed);
    const VgaResult r1 = run_vga(inst.a, inst.data, inst.prior, tight());
    VgaConfig cfg = tight();
    std::mt19937_64 rng(seed + 77);
    cfg.init_mean = random_vector(5, rng);
    cfg.init_cov = InitCov::Prior;
    const VgaResult r2 = run_vga(inst.a, inst.data, inst.prior, cfg);
    ASSERT_TRUE(r1.report.converged && r2.report.converged);
    EXPECT_LT((r1.state.mean - r2.state.mean).norm(), 1e-6) << "seed " << seed;
    EXPECT_LT((r1.state.cov - r2.state.cov).norm(), 1e-5) << "seed " << seed;
    const OptimalityResidual res = optimality_residual(r1.state, inst.a, inst.data, inst.prior);
    EXPECT_LT(res.mean, 1e-5);
    EXPECT_LT(res.cov, 1e-5);
  }
}

TEST(RunVga, FullRankLowRankMatchesDense) {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    auto inst = random_instance(8, 11, seed);
    const VgaResult dense = run_vga(inst.a, inst.data, inst.prior, tight());
    VgaConfig cfg = tight();
    cfg.mode = VgaMode::LowRank;
    cfg.rank = 8;
    const VgaResult lr = run_vga(inst.a, inst.data, inst.prior, cfg);
    EXPECT_EQ(lr.report.rank, Index{8});
    EXPECT_LT((dense.state.mean - lr.state.mean).norm(), 1e-6);
    EXPECT_LT((dense.state.cov - lr.state.cov).norm(), 1e-6);
  }
}

TEST(RunVga, LowRankSparseKeepsMask) {
  Phillips ph;
  VgaConfig cfg;
  cfg.mode = VgaMode::LowRankSparse;
  cfg.rank = 20;
  cfg.mask = SparsityMask::banded(100, 3);
  const VgaResult r = run_vga(ph.p.a, ph.data, ph.prior, cfg);
  EXPECT_TRUE(r.report.converged);
  ASSERT_TRUE(r.state.mask.has_value());
  for (Index i = 0; i < 100; ++i)
    for (Index j = 0; j < 100; ++j) {
      if (!r.state.mask->contains(i, j)) {
        EXPECT_EQ(r.state.cov(i, j), 0.0);
      }
    }
}

TEST(RunVga, IndefiniteMaskedCovarianceStopsOnStateChange) {
  // A smooth prior makes the banded projection of C indefinite, so the ELBO is undefined.
  Phillips ph;
  const PriorSpec h1 = make_prior(PriorKind::H1, 400.0, 100);
  VgaConfig cfg;
  cfg.mask = SparsityMask::banded(100, 3);
  const VgaResult r = run_vga(ph.p.a, ph.data, h1, cfg);
  EXPECT_TRUE(r.report.converged);
  EXPECT_FALSE(r.report.elbo_defined);
  EXPECT_TRUE(std::isnan(r.report.elbo_trace.back()));
  EXPECT_LT(r.report.cov_residual_trace.back(), 1e-6);
}

TEST(RunVga, SparsityErrorsShrinkWithBandwidth) {
  Phillips ph;
  const VgaResult ref = run_vga(ph.p.a, ph.data, ph.prior, VgaConfig{});
  double prev_x = std::numeric_limits<double>::infinity();
  double prev_c = prev_x;
  for (Index s : {1, 3, 5}) {
    VgaConfig cfg;
    cfg.mask = SparsityMask::banded(100, s);
    const VgaResult r = run_vga(ph.p.a, ph.data, ph.prior, cfg);
    const double ex = (r.state.mean - ref.state.mean).norm();
    const double ec = spectral_norm_sym(Matrix(r.state.cov - ref.state.cov));
    EXPECT_LT(ex, prev_x);
    EXPECT_LT(ec, prev_c);
    prev_x = ex;
    prev_c = ec;
  }
}

TEST(RunVga, ReportsNonConvergenceWithoutThrowing) {
  Phillips ph;
  VgaConfig cfg;
  cfg.max_outer = 1;
  const VgaResult r = run_vga(ph.p.a, ph.data, ph.prior, cfg);
  EXPECT_FALSE(r.report.converged);
  EXPECT_EQ(r.report.outer_iterations, 1);
}

TEST(RunVga, MeanChangeStopRule) {
  Phillips ph;
  VgaConfig cfg;
  cfg.stop = StopRule::MeanChange;
  const VgaResult r = run_vga(ph.p.a, ph.data, ph.prior, cfg);
  EXPECT_TRUE(r.report.converged);
  const VgaResult ref = run_vga(ph.p.a, ph.data, ph.prior, VgaConfig{});
  EXPECT_LT((r.state.mean - ref.state.mean).norm(), 1e-6 * ref.state.mean.norm());
}

TEST(VgaConfig, Validation) {
  VgaConfig cfg;
  cfg.mode = VgaMode::LowRank;
  expect_error(ErrorKind::InvalidConfig, [&] { cfg.validate(10); });
  cfg.rank = 3;
  cfg.validate(10);
  cfg.mode = VgaMode::LowRankSparse;
  expect_error(ErrorKind::InvalidConfig, [&] { cfg.validate(10); });
  cfg.mask = SparsityMask::banded(9, 3);
  expect_error(ErrorKind::DimensionMismatch, [&] { cfg.validate(10); });
  VgaConfig bad;
  bad.pcg_tol = 0.0;
  expect_error(ErrorKind::InvalidConfig, [&] { bad.validate(10); });
  expect_error(ErrorKind::InvalidConfig, [] { parse_vga_mode("sparse"); });
  EXPECT_EQ(parse_vga_mode(to_string(VgaMode::LowRankSparse)), VgaMode::LowRankSparse);
}

TEST(RunVga, RankAboveOperatorRankIsRejected) {
  auto inst = random_instance(6, 4, 2);
  VgaConfig cfg;
  cfg.mode = VgaMode::LowRank;
  cfg.rank = 5;
  expect_error(ErrorKind::RankTooLarge, [&] { run_vga(inst.a, inst.data, inst.prior, cfg); });
}

TEST(SelectMode, SmallProblemIsDense) {
  const TestProblem p = make_test_problem(ProblemName::Phillips, 100);
  const ModeSuggestion s = select_mode(p.a);
  EXPECT_EQ(s.mode, VgaMode::Dense);
  EXPECT_FALSE(s.rank.has_value());
}

TEST(SelectMode, LargeImageIsLowRankSparse) {
  const TestProblem p = make_test_problem(ProblemName::Blur2d, 128);
  const ModeSuggestion s = select_mode(p.a);
  EXPECT_EQ(s.mode, VgaMode::LowRankSparse);
  ASSERT_TRUE(s.rank.has_value());
  EXPECT_GE(*s.rank, 1);
}

TEST(SelectMode, TightBudgetIsNeverDense) {
  const TestProblem p = make_test_problem(ProblemName::Phillips, 100);
  const ModeSuggestion s = select_mode(p.a, 3 * 8 * 100 * 100 - 1);
  EXPECT_NE(s.mode, VgaMode::Dense);
  ASSERT_TRUE(s.rank.has_value());
  EXPECT_LE(*s.rank, 100);
}

}  // namespace
}  // namespace pvga
