// pvga: solve, hyper, validate and bench subcommands over a run config.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pvga/commands.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<pvga::Index> rank;
  std::optional<pvga::Index> sparsity;
  std::vector<std::string> sets;
  std::string study;
};

pvga::RunConfig resolve(const Overrides& o) {
  pvga::RunConfig c = pvga::load_config(o.config);
  for (const std::string& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw pvga::Error(pvga::ErrorKind::InvalidConfig, "--set expects key=value");
    pvga::set_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.out) c.output.dir = *o.out;
  if (o.seed) c.seed = *o.seed;
  if (o.mode) c.solver.mode = *o.mode;
  if (o.rank) c.solver.rank = *o.rank;
  if (o.sparsity) {
    c.solver.sparsity = *o.sparsity;
    if (c.solver.mask == "none") c.solver.mask = "banded";
  }
  return c;
}

void report_error(const std::string& kind, const std::string& message, const std::optional<std::string>& out_dir) {
  const pvga::io::Json j = {{"error", {{"kind", kind}, {"message", message}}}};
  std::cerr << j.dump() << "\n";
  if (!out_dir) return;
  try {
    pvga::io::ensure_dir(*out_dir);
    pvga::io::write_json(std::filesystem::path(*out_dir) / "error.json", j);
  } catch (const pvga::Error&) {
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variational Gaussian approximation for Poisson inverse problems"};
  app.require_subcommand(1);
  Overrides o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "run config (key = value text or JSON)")->required();
    sub->add_option("--out", o.out, "output directory (overrides output.dir)");
    sub->add_option("--seed", o.seed, "master seed (overrides seed)");
    sub->add_option("--mode", o.mode, "solver mode")
        ->check(CLI::IsMember({"dense", "lowrank", "lowrank_sparse", "auto"}));
    sub->add_option("--rank", o.rank, "rSVD rank")->check(CLI::PositiveNumber);
    sub->add_option("--sparsity", o.sparsity, "banded mask width")->check(CLI::PositiveNumber);
    sub->add_option("--set", o.sets, "extra key=value config overrides");
  };
  CLI::App* solve = app.add_subcommand("solve", "run the VGA solver");
  CLI::App* hyper = app.add_subcommand("hyper", "hierarchical EM for the prior strength");
  CLI::App* validate = app.add_subcommand("validate", "compare VGA with Laplace and MCMC");
  CLI::App* bench = app.add_subcommand("bench", "rank or sparsity sweep against the dense solution");
  for (CLI::App* sub : {solve, hyper, validate, bench}) add_common(sub);
  bench->add_option("--study", o.study, "lowrank or sparsity")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    if (rc == 0) return 0;
    report_error("UsageError", e.what(), std::nullopt);
    return static_cast<int>(pvga::ExitCode::UsageError);
  }

  std::optional<std::string> out_dir = o.out;
  try {
    const pvga::RunConfig c = resolve(o);
    out_dir = c.output.dir;
    pvga::ExitCode rc = pvga::ExitCode::Success;
    if (solve->parsed()) {
      rc = pvga::cmd_solve(c);
    } else if (hyper->parsed()) {
      rc = pvga::cmd_hyper(c);
    } else if (validate->parsed()) {
      rc = pvga::cmd_validate(c);
    } else {
      rc = pvga::cmd_bench(c, pvga::parse_study(o.study));
    }
    if (rc == pvga::ExitCode::SolverFailure) std::cerr << "pvga: solver did not converge\n";
    return static_cast<int>(rc);
  } catch (const pvga::Error& e) {
    report_error(pvga::to_string(e.kind()), e.what(), out_dir);
    return static_cast<int>(e.is_usage_error() ? pvga::ExitCode::UsageError : pvga::ExitCode::SolverFailure);
  } catch (const std::exception& e) {
    report_error("Internal", e.what(), out_dir);
    return static_cast<int>(pvga::ExitCode::SolverFailure);
  }
}
