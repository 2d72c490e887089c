#pragma once

// Experiment commands behind the CLI: assemble a problem from a RunConfig, run
// a solver or study, and write the artifact set into the output directory.

#include <cmath>
#include <filesystem>
#include <future>
#include <iostream>
#include <string>
#include <vector>

#include "pvga/config.hpp"
#include "pvga/hyper.hpp"
#include "pvga/io.hpp"
#include "pvga/problems.hpp"
#include "pvga/validate.hpp"
#include "pvga/vga.hpp"

namespace pvga {

enum class ExitCode : int { Success = 0, SolverFailure = 1, UsageError = 2 };

inline PriorKind parse_prior_kind(const std::string& s) {
  if (s == "L2") return PriorKind::L2;
  if (s == "H1") return PriorKind::H1;
  if (s == "H1_2D") return PriorKind::H1_2D;
  throw Error(ErrorKind::InvalidConfig, "unknown prior kind '" + s + "'");
}

struct Assembled {
  TestProblem problem;
  PoissonData data;
  PriorSpec prior;
  VgaConfig vga;
};

inline SparsityMask build_mask(const RunConfig& c, const TestProblem& p) {
  const Index m = p.a.cols();
  if (c.solver.mask == "banded") return SparsityMask::banded(m, c.solver.sparsity);
  if (c.solver.mask == "grid") {
    const auto side = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(m))));
    require(side * side == m, ErrorKind::InvalidConfig, "grid mask needs a square image");
    return SparsityMask::grid_neighbors(side, side);
  }
  throw Error(ErrorKind::InvalidConfig, "unknown mask '" + c.solver.mask + "'");
}

inline VgaConfig make_vga_config(const RunConfig& c, const TestProblem& p) {
  const SolverConfig& s = c.solver;
  VgaConfig v;
  v.max_outer = s.max_outer;
  v.newton_steps_per_outer = s.newton_steps;
  v.fixedpoint_steps_per_outer = s.fixedpoint_steps;
  v.outer_tol_elbo = s.outer_tol_elbo;
  if (s.stop == "elbo") {
    v.stop = StopRule::ElboChange;
  } else if (s.stop == "mean_change") {
    v.stop = StopRule::MeanChange;
  } else {
    throw Error(ErrorKind::InvalidConfig, "solver.stop must be elbo or mean_change");
  }
  v.mean_change_tol = s.mean_change_tol;
  v.pcg_tol = s.pcg_tol;
  v.pcg_maxit = s.pcg_maxit;
  if (s.mean_solver == "pcg") {
    v.mean_solver = MeanSolver::Pcg;
  } else if (s.mean_solver == "direct") {
    v.mean_solver = MeanSolver::Direct;
  } else {
    throw Error(ErrorKind::InvalidConfig, "solver.mean_solver must be pcg or direct");
  }
  v.line_search = s.line_search;
  v.max_halvings = s.max_halvings;
  if (s.init_cov == "identity") {
    v.init_cov = InitCov::Identity;
  } else if (s.init_cov == "prior") {
    v.init_cov = InitCov::Prior;
  } else {
    throw Error(ErrorKind::InvalidConfig, "solver.init_cov must be identity or prior");
  }
  v.rsvd = RsvdOptions{s.rsvd_oversample, s.rsvd_power_iters, substream_seed(c.seed, "rsvd")};

  if (s.mode == "auto") {
    const ModeSuggestion sug = select_mode(p.a, std::size_t{1} << 30, 1e-6, 256, v.rsvd.seed);
    v.mode = sug.mode;
    v.rank = s.rank ? s.rank : sug.rank;
  } else {
    v.mode = parse_vga_mode(s.mode);
    v.rank = s.rank;
  }
  if (s.mask != "none") {
    v.mask = build_mask(c, p);
  } else if (v.mode == VgaMode::LowRankSparse) {
    RunConfig fallback = c;
    fallback.solver.mask = p.name == ProblemName::Blur2d ? "grid" : "banded";
    v.mask = build_mask(fallback, p);
  }
  v.validate(p.a.cols());
  return v;
}

inline Assembled assemble(const RunConfig& c) {
  TestProblemParams params;
  params.rate_scale = c.problem.rate_scale;
  params.rate_min = c.problem.rate_min;
  params.rate_max = c.problem.rate_max;
  params.blur_width = c.problem.blur_width;
  params.blur_variance = c.problem.blur_variance;
  TestProblem p = make_test_problem(c.problem.name, c.problem.size, params);
  PoissonData data = sample_poisson_data(p.a, p.x_true, substream_seed(c.seed, "data"));
  PriorSpec prior = make_prior(parse_prior_kind(c.prior.kind), c.prior.alpha, p.a.cols());
  VgaConfig vga = make_vga_config(c, p);
  return {std::move(p), std::move(data), std::move(prior), std::move(vga)};
}

inline HyperConfig make_hyper_config(const RunConfig& c, const VgaConfig& vga) {
  HyperConfig h;
  h.a = c.prior.a;
  h.b = c.prior.b;
  h.alpha_init = c.prior.alpha_init;
  h.max_em = c.prior.max_em;
  h.alpha_tol = c.prior.alpha_tol;
  h.vga = vga;
  return h;
}

namespace cmd_detail {

namespace fs = std::filesystem;

inline fs::path prepare_output(const RunConfig& c) {
  const fs::path dir = c.output.dir;
  io::ensure_dir(dir);
  io::write_text(dir / "config.txt", serialize(c));
  return dir;
}

inline void write_csv(const RunConfig& c, const fs::path& path, const io::CsvTable& t) {
  if (c.output.csv) io::write_text(path, t.str());
}

inline void write_json(const RunConfig& c, const fs::path& path, const io::Json& j) {
  if (c.output.json) io::write_json(path, j);
}

inline void write_state(const RunConfig& c, const fs::path& dir, const GaussianState& s) {
  write_csv(c, dir / "mean.csv", io::vector_table("mean", "mean", s.mean));
  if (s.mask) {
    write_csv(c, dir / "cov_masked.csv", io::masked_table("cov_masked", s.cov, *s.mask));
  } else if (c.output.binary) {
    io::write_vgam(dir / "cov.vgam", s.cov);
  }
}

inline io::Json problem_json(const RunConfig& c, const Assembled& as) {
  io::Json j;
  j["name"] = c.problem.name;
  j["size"] = c.problem.size;
  j["m"] = as.problem.a.cols();
  j["n"] = as.problem.a.rows();
  j["rate_scale"] = as.problem.rate_scale;
  j["seed"] = c.seed;
  return j;
}

inline io::Json report_json(const SolverReport& r) {
  io::Json j;
  j["converged"] = r.converged;
  j["outer_iterations"] = r.outer_iterations;
  j["elbo_defined"] = r.elbo_defined;
  j["saturated"] = r.saturated;
  j["oscillating"] = r.oscillating;
  j["oscillation_gap"] = r.oscillation_gap;
  if (r.rank) {
    j["rank"] = *r.rank;
  } else {
    j["rank"] = nullptr;
  }
  j["final_elbo"] = r.elbo_trace.empty() ? 0.0 : r.elbo_trace.back();
  j["elbo_trace"] = io::to_json(r.elbo_trace);
  j["mean_residual_trace"] = io::to_json(r.mean_residual_trace);
  j["cov_residual_trace"] = io::to_json(r.cov_residual_trace);
  j["newton_step_norms"] = io::to_json(r.newton_step_norms);
  j["pcg_iterations"] = io::to_json(r.pcg_iterations);
  j["line_search_halvings"] = io::to_json(r.line_search_halvings);
  return j;
}

inline io::Json comparison_json(const GaussianComparison& g) {
  return io::Json{{"mean_l2", g.mean_l2}, {"cov_spectral", g.cov_spectral}, {"kl_12", g.kl_12}, {"kl_21", g.kl_21}};
}

inline void log_time(const std::string& what, double seconds) {
  std::cerr << "pvga: " << what << " took " << seconds << " s\n";
}

inline ExitCode status(bool ok) { return ok ? ExitCode::Success : ExitCode::SolverFailure; }

}  // namespace cmd_detail

/// Algorithm driver for a fixed prior strength; runs EM first when the prior is hierarchical.
inline ExitCode cmd_solve(const RunConfig& c) {
  using namespace cmd_detail;
  const fs::path dir = prepare_output(c);
  Assembled as = assemble(c);
  io::Json report;
  report["command"] = "solve";
  report["problem"] = problem_json(c, as);
  report["mode"] = to_string(as.vga.mode);
  GaussianState state;
  SolverReport sr;
  bool ok = true;
  if (c.prior.hierarchical) {
    const HyperResult h = run_hierarchical(as.problem.a, as.data, as.prior, make_hyper_config(c, as.vga));
    state = h.state;
    sr = run_vga(as.problem.a, as.data, as.prior.with_alpha(h.alpha), as.vga, h.state).report;
    report["alpha"] = h.alpha;
    report["em_converged"] = h.trace.converged;
    ok = h.trace.converged;
  } else {
    VgaResult r = run_vga(as.problem.a, as.data, as.prior, as.vga);
    state = std::move(r.state);
    sr = std::move(r.report);
    report["alpha"] = c.prior.alpha;
  }
  log_time("solve", sr.wall_time);
  report["solver"] = report_json(sr);
  report["error_vs_truth"] = (state.mean - as.problem.x_true).norm();
  write_state(c, dir, state);
  write_json(c, dir / "report.json", report);
  return status(ok && sr.converged);
}

/// EM over α followed by the profiled joint bound on a log grid around α*.
inline ExitCode cmd_hyper(const RunConfig& c) {
  using namespace cmd_detail;
  const fs::path dir = prepare_output(c);
  Assembled as = assemble(c);
  const HyperConfig hc = make_hyper_config(c, as.vga);
  const HyperResult h = run_hierarchical(as.problem.a, as.data, as.prior, hc);

  io::CsvTable trace{"hyper_trace", {"k", "alpha", "psi", "joint_bound"}, {}};
  const HyperTrace& t = h.trace;
  for (std::size_t k = 0; k < t.psi_sequence.size(); ++k) {
    trace.add_row({std::to_string(k), io::format_double(t.alpha_sequence[k]), io::format_double(t.psi_sequence[k]),
                   io::format_double(t.joint_bound_sequence[k])});
  }
  write_csv(c, dir / "hyper_trace.csv", trace);

  const std::vector<double> alphas = log_grid(h.alpha, c.prior.grid_spread, c.prior.grid_points);
  const std::vector<GridPoint> grid = profile_alpha_grid(as.problem.a, as.data, as.prior, hc, alphas);
  io::CsvTable gt{"alpha_grid", {"alpha", "joint_bound", "psi"}, {}};
  std::size_t best = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    gt.add_row({io::format_double(grid[i].alpha), io::format_double(grid[i].joint_bound),
                io::format_double(grid[i].psi)});
    if (grid[i].joint_bound > grid[best].joint_bound) best = i;
  }
  write_csv(c, dir / "alpha_grid.csv", gt);

  write_state(c, dir, h.state);
  io::Json report;
  report["command"] = "hyper";
  report["problem"] = problem_json(c, as);
  report["mode"] = to_string(as.vga.mode);
  report["alpha"] = h.alpha;
  report["em_iterations"] = t.psi_sequence.size();
  report["em_converged"] = t.converged;
  report["possibly_degenerate"] = t.possibly_degenerate;
  report["alpha_upper_bound"] = alpha_upper_bound(as.problem.a.cols(), hc.a, hc.b);
  report["grid_argmax_alpha"] = grid[best].alpha;
  report["error_vs_truth"] = (h.state.mean - as.problem.x_true).norm();
  write_json(c, dir / "report.json", report);
  return status(t.converged);
}

/// VGA against Laplace and an MH independence chain proposed from the VGA.
inline ExitCode cmd_validate(const RunConfig& c) {
  using namespace cmd_detail;
  const fs::path dir = prepare_output(c);
  Assembled as = assemble(c);
  const ForwardOperator& a = as.problem.a;
  const VgaResult vga = run_vga(a, as.data, as.prior, as.vga);
  log_time("vga", vga.report.wall_time);
  const GaussianState laplace = laplace_state(a, as.data, as.prior);

  McmcConfig mc;
  mc.chain_length = c.mcmc.chain_length;
  mc.burn_in = c.mcmc.burn_in;
  mc.seed = substream_seed(c.seed, "mcmc");
  const ChainSummary chain = mh_independence_sampler(a, as.data, as.prior, vga.state, mc);
  const GaussianState mcmc{chain.mean, chain.covariance, std::nullopt};

  const auto vga_hpd = hpd_intervals(vga.state, c.mcmc.hpd_level);
  const auto lap_hpd = hpd_intervals(laplace, c.mcmc.hpd_level);
  const auto mc_hpd = hpd_intervals(chain.samples, c.mcmc.hpd_level);
  io::CsvTable hpd{"hpd",
                   {"index", "x_true", "vga_mean", "vga_lo", "vga_hi", "laplace_mean", "laplace_lo", "laplace_hi",
                    "mcmc_mean", "mcmc_lo", "mcmc_hi"},
                   {}};
  for (Index i = 0; i < vga.state.dim(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    auto f = [](double v) { return io::format_double(v); };
    hpd.add_row({std::to_string(i), f(as.problem.x_true(i)), f(vga.state.mean(i)), f(vga_hpd[k].lo),
                 f(vga_hpd[k].hi), f(laplace.mean(i)), f(lap_hpd[k].lo), f(lap_hpd[k].hi), f(chain.mean(i)),
                 f(mc_hpd[k].lo), f(mc_hpd[k].hi)});
  }
  write_csv(c, dir / "hpd.csv", hpd);

  io::Json cmp;
  cmp["problem"] = problem_json(c, as);
  cmp["hpd_level"] = c.mcmc.hpd_level;
  cmp["vga_converged"] = vga.report.converged;
  cmp["acceptance_rate"] = chain.acceptance_rate;
  cmp["chain_length"] = c.mcmc.chain_length;
  cmp["burn_in"] = c.mcmc.burn_in;
  cmp["thin"] = chain.thin;
  cmp["vga_vs_laplace"] = comparison_json(compare_gaussians(vga.state, laplace));
  cmp["mcmc_vs_vga"] = {{"mean_l2", (chain.mean - vga.state.mean).norm()},
                        {"cov_spectral", spectral_norm_sym(Matrix(chain.covariance - vga.state.cov))}};
  cmp["mcmc_vs_laplace"] = {{"mean_l2", (chain.mean - laplace.mean).norm()},
                            {"cov_spectral", spectral_norm_sym(Matrix(chain.covariance - laplace.cov))}};
  cmp["error_vs_truth"] = {{"vga", (vga.state.mean - as.problem.x_true).norm()},
                           {"laplace", (laplace.mean - as.problem.x_true).norm()},
                           {"mcmc", (mcmc.mean - as.problem.x_true).norm()}};
  cmp["mcmc_mean_std_error_max"] = chain.mean_std_error.maxCoeff();
  write_json(c, dir / "compare.json", cmp);
  write_state(c, dir, vga.state);
  if (c.mcmc.save_chain && c.output.binary) io::write_vgam(dir / "chain.vgam", chain.samples);
  return status(vga.report.converged);
}

enum class Study { LowRank, Sparsity };

inline Study parse_study(const std::string& s) {
  if (s == "lowrank") return Study::LowRank;
  if (s == "sparsity") return Study::Sparsity;
  throw Error(ErrorKind::InvalidConfig, "unknown study '" + s + "' (lowrank or sparsity)");
}

struct SweepPoint {
  Index parameter = 0;
  double e_mean = 0.0;
  double e_cov = 0.0;
  bool converged = false;
};

/// Sweep rank or sparsity against the dense unmasked reference; points run concurrently.
inline ExitCode cmd_bench(const RunConfig& c, Study study) {
  using namespace cmd_detail;
  const fs::path dir = prepare_output(c);
  Assembled as = assemble(c);
  const ForwardOperator& a = as.problem.a;
  const Index m = a.cols();

  VgaConfig ref_cfg = as.vga;
  ref_cfg.mode = VgaMode::Dense;
  ref_cfg.rank.reset();
  ref_cfg.mask.reset();
  const VgaResult ref = run_vga(a, as.data, as.prior, ref_cfg);
  const double mean_norm = ref.state.mean.norm();
  const double cov_norm = spectral_norm_sym(ref.state.cov);

  const std::vector<Index>& params = study == Study::LowRank ? c.bench.ranks : c.bench.sparsities;
  require(!params.empty(), ErrorKind::InvalidConfig, "bench sweep has no points");
  std::vector<VgaConfig> cfgs;
  for (Index p : params) {
    VgaConfig v = ref_cfg;
    if (study == Study::LowRank) {
      v.mode = VgaMode::LowRank;
      v.rank = p;
    } else {
      v.mask = SparsityMask::banded(m, p);
      if (as.vga.mode != VgaMode::Dense) {
        v.mode = VgaMode::LowRankSparse;
        v.rank = as.vga.rank;
      }
    }
    v.validate(m);
    cfgs.push_back(std::move(v));
  }

  std::vector<std::future<SweepPoint>> jobs;
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    jobs.push_back(std::async(std::launch::async, [&, i] {
      const VgaResult r = run_vga(a, as.data, as.prior, cfgs[i]);
      return SweepPoint{params[i], (r.state.mean - ref.state.mean).norm(),
                        spectral_norm_sym(Matrix(r.state.cov - ref.state.cov)), r.report.converged};
    }));
  }
  std::vector<SweepPoint> pts;
  for (auto& j : jobs) pts.push_back(j.get());

  const std::string name = study == Study::LowRank ? "lowrank" : "sparsity";
  const std::string col = study == Study::LowRank ? "rank" : "sparsity";
  io::CsvTable t{name, {col, "e_mean", "e_cov", "rel_e_mean", "rel_e_cov", "converged"}, {}};
  bool ok = ref.report.converged;
  for (const SweepPoint& p : pts) {
    t.add_row({std::to_string(p.parameter), io::format_double(p.e_mean), io::format_double(p.e_cov),
               io::format_double(p.e_mean / mean_norm), io::format_double(p.e_cov / cov_norm),
               p.converged ? "1" : "0"});
    ok = ok && p.converged;
  }
  write_csv(c, dir / (name + ".csv"), t);

  if (study == Study::LowRank) {
    Index top = 0;
    for (Index r : params) top = std::max(top, r);
    const LowRankFactor f = rsvd(a, std::min({top, a.rows(), m}), as.vga.rsvd);
    write_csv(c, dir / "sigma.csv", io::vector_table("sigma", "sigma", f.S));
  }

  io::Json report;
  report["command"] = "bench";
  report["study"] = name;
  report["problem"] = problem_json(c, as);
  report["reference"] = report_json(ref.report);
  report["reference_mean_norm"] = mean_norm;
  report["reference_cov_spectral_norm"] = cov_norm;
  write_json(c, dir / "report.json", report);
  return status(ok);
}

}  // namespace pvga
