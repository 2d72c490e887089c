#pragma once

// Run configuration: flat "section.key = value" text (also "[section]" blocks)
// or the equivalent nested JSON. Every key round-trips through serialize().

#include <charconv>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "pvga/io.hpp"

namespace pvga {

struct ProblemConfig {
  std::string name = "phillips";
  Index size = 100;
  std::optional<double> rate_scale;
  double rate_min = 0.5;
  double rate_max = 50.0;
  Index blur_width = 99;
  double blur_variance = 1.5;
  bool operator==(const ProblemConfig&) const = default;
};

struct PriorConfig {
  std::string kind = "L2";
  double alpha = 10.0;
  bool hierarchical = false;
  double a = 1.0;
  double b = 1e-4;
  double alpha_init = 1.0;
  int max_em = 100;
  double alpha_tol = 1e-8;
  int grid_points = 30;
  double grid_spread = 4.0;
  bool operator==(const PriorConfig&) const = default;
};

struct SolverConfig {
  std::string mode = "dense";  // dense, lowrank, lowrank_sparse or auto
  std::optional<Index> rank;
  std::string mask = "none";  // none, banded or grid
  Index sparsity = 1;
  int max_outer = 50;
  int newton_steps = 5;
  int fixedpoint_steps = 1;
  double outer_tol_elbo = 1e-10;
  std::string stop = "elbo";  // elbo or mean_change
  double mean_change_tol = 1e-8;
  double pcg_tol = 1e-6;
  int pcg_maxit = 10;
  std::string mean_solver = "pcg";  // pcg or direct
  bool line_search = true;
  int max_halvings = 20;
  std::string init_cov = "identity";  // identity or prior
  Index rsvd_oversample = 10;
  int rsvd_power_iters = 2;
  bool operator==(const SolverConfig&) const = default;
};

struct McmcSection {
  long chain_length = 200000;
  long burn_in = 100000;
  double hpd_level = 0.9;
  bool save_chain = false;
  bool operator==(const McmcSection&) const = default;
};

struct BenchConfig {
  std::vector<Index> ranks{2, 4, 6, 8, 10, 20};
  std::vector<Index> sparsities{1, 3, 5};
  bool operator==(const BenchConfig&) const = default;
};

struct OutputConfig {
  std::string dir = "out";
  bool csv = true;
  bool json = true;
  bool binary = true;
  bool operator==(const OutputConfig&) const = default;
};

struct RunConfig {
  std::uint64_t seed = 1;
  ProblemConfig problem;
  PriorConfig prior;
  SolverConfig solver;
  McmcSection mcmc;
  BenchConfig bench;
  OutputConfig output;
  bool operator==(const RunConfig&) const = default;
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string show(const std::string& v) { return v; }
inline std::string show(bool v) { return v ? "true" : "false"; }
inline std::string show(double v) { return io::format_double(v); }
template <class T>
  requires std::is_integral_v<T>
std::string show(T v) {
  return std::to_string(v);
}
template <class T>
std::string show(const std::optional<T>& v) {
  return v ? show(*v) : "none";
}
template <class T>
std::string show(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + show(v[i]);
  return out;
}

[[noreturn]] inline void bad_value(const std::string& key, const std::string& v, const char* what) {
  throw Error(ErrorKind::InvalidConfig, "key '" + key + "': '" + v + "' is not " + what);
}

inline void parse_into(std::string& out, const std::string& v, const std::string& key) {
  if (v.find_first_of("#\n\r") != std::string::npos) bad_value(key, v, "free of '#' and line breaks");
  out = v;
}

inline void parse_into(bool& out, const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") {
    out = true;
  } else if (v == "false" || v == "0" || v == "no") {
    out = false;
  } else {
    bad_value(key, v, "a boolean");
  }
}

inline void parse_into(double& out, const std::string& v, const std::string& key) {
  try {
    out = io::parse_double(v);
  } catch (const Error&) {
    bad_value(key, v, "a number");
  }
}

template <class T>
  requires std::is_integral_v<T>
void parse_into(T& out, const std::string& v, const std::string& key) {
  T x{};
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || end != v.data() + v.size() || v.empty()) bad_value(key, v, "an integer in range");
  out = x;
}

template <class T>
void parse_into(std::optional<T>& out, const std::string& v, const std::string& key) {
  if (v == "none" || v.empty()) {
    out.reset();
    return;
  }
  T x{};
  parse_into(x, v, key);
  out = x;
}

template <class T>
void parse_into(std::vector<T>& out, const std::string& v, const std::string& key) {
  out.clear();
  if (trim(v).empty()) return;
  for (const std::string& part : io::split(v, ',')) {
    T x{};
    parse_into(x, trim(part), key);
    out.push_back(x);
  }
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <class Access>
Field field(std::string key, Access access) {
  return {key, [access](const RunConfig& c) { return show(access(c)); },
          [access, key](RunConfig& c, const std::string& v) { parse_into(access(c), v, key); }};
}

#define PVGA_FIELD(key, member) field(key, [](auto& c) -> auto& { return c.member; })

inline const std::vector<Field>& fields() {
  static const std::vector<Field> all = {
      PVGA_FIELD("seed", seed),
      PVGA_FIELD("problem.name", problem.name),
      PVGA_FIELD("problem.size", problem.size),
      PVGA_FIELD("problem.rate_scale", problem.rate_scale),
      PVGA_FIELD("problem.rate_min", problem.rate_min),
      PVGA_FIELD("problem.rate_max", problem.rate_max),
      PVGA_FIELD("problem.blur_width", problem.blur_width),
      PVGA_FIELD("problem.blur_variance", problem.blur_variance),
      PVGA_FIELD("prior.kind", prior.kind),
      PVGA_FIELD("prior.alpha", prior.alpha),
      PVGA_FIELD("prior.hierarchical", prior.hierarchical),
      PVGA_FIELD("prior.a", prior.a),
      PVGA_FIELD("prior.b", prior.b),
      PVGA_FIELD("prior.alpha_init", prior.alpha_init),
      PVGA_FIELD("prior.max_em", prior.max_em),
      PVGA_FIELD("prior.alpha_tol", prior.alpha_tol),
      PVGA_FIELD("prior.grid_points", prior.grid_points),
      PVGA_FIELD("prior.grid_spread", prior.grid_spread),
      PVGA_FIELD("solver.mode", solver.mode),
      PVGA_FIELD("solver.rank", solver.rank),
      PVGA_FIELD("solver.mask", solver.mask),
      PVGA_FIELD("solver.sparsity", solver.sparsity),
      PVGA_FIELD("solver.max_outer", solver.max_outer),
      PVGA_FIELD("solver.newton_steps", solver.newton_steps),
      PVGA_FIELD("solver.fixedpoint_steps", solver.fixedpoint_steps),
      PVGA_FIELD("solver.outer_tol_elbo", solver.outer_tol_elbo),
      PVGA_FIELD("solver.stop", solver.stop),
      PVGA_FIELD("solver.mean_change_tol", solver.mean_change_tol),
      PVGA_FIELD("solver.pcg_tol", solver.pcg_tol),
      PVGA_FIELD("solver.pcg_maxit", solver.pcg_maxit),
      PVGA_FIELD("solver.mean_solver", solver.mean_solver),
      PVGA_FIELD("solver.line_search", solver.line_search),
      PVGA_FIELD("solver.max_halvings", solver.max_halvings),
      PVGA_FIELD("solver.init_cov", solver.init_cov),
      PVGA_FIELD("solver.rsvd_oversample", solver.rsvd_oversample),
      PVGA_FIELD("solver.rsvd_power_iters", solver.rsvd_power_iters),
      PVGA_FIELD("mcmc.chain_length", mcmc.chain_length),
      PVGA_FIELD("mcmc.burn_in", mcmc.burn_in),
      PVGA_FIELD("mcmc.hpd_level", mcmc.hpd_level),
      PVGA_FIELD("mcmc.save_chain", mcmc.save_chain),
      PVGA_FIELD("bench.ranks", bench.ranks),
      PVGA_FIELD("bench.sparsities", bench.sparsities),
      PVGA_FIELD("output.dir", output.dir),
      PVGA_FIELD("output.csv", output.csv),
      PVGA_FIELD("output.json", output.json),
      PVGA_FIELD("output.binary", output.binary),
  };
  return all;
}

#undef PVGA_FIELD

inline void flatten_json(const io::Json& j, const std::string& prefix, std::vector<std::pair<std::string, std::string>>& out) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      flatten_json(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
    }
    return;
  }
  std::string v;
  if (j.is_string()) {
    v = j.get<std::string>();
  } else if (j.is_boolean()) {
    v = j.get<bool>() ? "true" : "false";
  } else if (j.is_number_integer()) {
    v = std::to_string(j.get<long long>());
  } else if (j.is_number_unsigned()) {
    v = std::to_string(j.get<unsigned long long>());
  } else if (j.is_number_float()) {
    v = io::format_double(j.get<double>());
  } else if (j.is_null()) {
    v = "none";
  } else if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) {
      if (!j[i].is_number()) throw Error(ErrorKind::InvalidConfig, "key '" + prefix + "': arrays must be numeric");
      v += (i ? "," : "") + (j[i].is_number_float() ? io::format_double(j[i].get<double>())
                                                    : std::to_string(j[i].get<long long>()));
    }
  }
  out.emplace_back(prefix, v);
}

}  // namespace config_detail

/// Set one dotted key; unknown keys are configuration errors.
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  for (const auto& f : config_detail::fields()) {
    if (f.key == key) {
      f.set(c, value);
      return;
    }
  }
  throw Error(ErrorKind::InvalidConfig, "unknown config key '" + key + "'");
}

inline std::string get_config_value(const RunConfig& c, const std::string& key) {
  for (const auto& f : config_detail::fields()) {
    if (f.key == key) return f.get(c);
  }
  throw Error(ErrorKind::InvalidConfig, "unknown config key '" + key + "'");
}

inline std::string serialize(const RunConfig& c) {
  std::string out = "# pvga run config v" + std::to_string(io::kArtifactVersion) + "\n";
  std::string section;
  for (const auto& f : config_detail::fields()) {
    const auto dot = f.key.find('.');
    const std::string s = dot == std::string::npos ? "" : f.key.substr(0, dot);
    if (s != section) {
      out += "\n";
      section = s;
    }
    out += f.key + " = " + f.get(c) + "\n";
  }
  return out;
}

inline RunConfig parse_config_text(const std::string& text) {
  using config_detail::trim;
  RunConfig c;
  std::string section;
  int lineno = 0;
  for (const std::string& raw : io::split(text, '\n')) {
    ++lineno;
    const std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw Error(ErrorKind::InvalidConfig, "line " + std::to_string(lineno) + ": bad section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::InvalidConfig, "line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    set_config_value(c, section.empty() ? key : section + "." + key, trim(line.substr(eq + 1)));
  }
  return c;
}

inline RunConfig parse_config_json(const std::string& text) {
  io::Json j;
  try {
    j = io::Json::parse(text);
  } catch (const std::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("malformed JSON config: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorKind::InvalidConfig, "JSON config must be an object");
  std::vector<std::pair<std::string, std::string>> kv;
  config_detail::flatten_json(j, "", kv);
  RunConfig c;
  for (const auto& [k, v] : kv) set_config_value(c, k, v);
  return c;
}

/// JSON when the first non-blank character is '{', flat text otherwise.
inline RunConfig parse_config(const std::string& text) {
  const auto p = text.find_first_not_of(" \t\r\n");
  if (p != std::string::npos && text[p] == '{') return parse_config_json(text);
  return parse_config_text(text);
}

inline RunConfig load_config(const std::filesystem::path& path) { return parse_config(io::read_text(path)); }

}  // namespace pvga
