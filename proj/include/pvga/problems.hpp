#pragma once

// Discretized first-kind Fredholm test problems and a 2D circular blur.
// 1D kernels follow the classical midpoint/Galerkin constructions; they are
// not bit-identical to any particular toolbox.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>

#include "pvga/forward_operator.hpp"
#include "pvga/model.hpp"

namespace pvga {

enum class ProblemName { Phillips, Gravity, Heat, Foxgood, Blur2d };

inline const char* to_string(ProblemName p) {
  switch (p) {
    case ProblemName::Phillips: return "phillips";
    case ProblemName::Gravity: return "gravity";
    case ProblemName::Heat: return "heat";
    case ProblemName::Foxgood: return "foxgood";
    case ProblemName::Blur2d: return "blur2d";
  }
  return "?";
}

inline ProblemName parse_problem_name(const std::string& s) {
  if (s == "phillips") return ProblemName::Phillips;
  if (s == "gravity") return ProblemName::Gravity;
  if (s == "heat") return ProblemName::Heat;
  if (s == "foxgood") return ProblemName::Foxgood;
  if (s == "blur2d") return ProblemName::Blur2d;
  throw Error(ErrorKind::UnknownProblem, "unknown test problem '" + s + "'");
}

struct TestProblemParams {
  /// Multiplier applied to the raw true solution; nullopt picks it so that
  /// e^{A x_true} lies in [rate_min, rate_max] as tightly as a pure scaling allows.
  std::optional<double> rate_scale;
  double rate_min = 0.5;
  double rate_max = 50.0;
  Index blur_width = 99;
  double blur_variance = 1.5;
};

struct TestProblem {
  ProblemName name;
  ForwardOperator a;
  Vector x_true;
  double rate_scale = 1.0;
};

/// Largest s with e^{s·(Ax)} inside [rate_min, rate_max]; 1 if Ax ≡ 0.
inline double auto_rate_scale(const Vector& ax, double rate_min, double rate_max) {
  require(rate_min > 0.0 && rate_min < 1.0 && rate_max > 1.0, ErrorKind::InvalidConfig,
          "rate interval must satisfy 0 < rate_min < 1 < rate_max");
  double s = std::numeric_limits<double>::infinity();
  const double hi = ax.maxCoeff();
  const double lo = ax.minCoeff();
  if (hi > 0.0) s = std::min(s, std::log(rate_max) / hi);
  if (lo < 0.0) s = std::min(s, std::log(rate_min) / lo);
  return std::isfinite(s) ? s : 1.0;
}

namespace detail {

inline TestProblem phillips(Index n) {
  require(n % 4 == 0, ErrorKind::InvalidConfig, "phillips needs a size divisible by 4");
  const double h = 12.0 / static_cast<double>(n);
  const Index n4 = n / 4;
  const double pi = std::numbers::pi;
  // Galerkin with box functions: entry depends on |i-j| only, support |i-j| <= n/4.
  auto c = [&](Index k) { return std::cos(static_cast<double>(k) * 4.0 * pi / static_cast<double>(n)); };
  Vector r(n4 + 1);
  for (Index k = 0; k < n4; ++k) r(k) = h + 9.0 / (h * pi * pi) * (2.0 * c(k) - c(k - 1) - c(k + 1));
  r(n4) = h / 2.0 + 9.0 / (h * pi * pi) * (c(1) - 1.0);

  ToeplitzKernel t{n, n, -n4, n4, Vector(2 * n4 + 1)};
  for (Index k = -n4; k <= n4; ++k) t.taps(k + n4) = r(std::abs(k));

  // Cell averages of 1 + cos(πt/3) on [-3, 3], scaled by 1/sqrt(h).
  Vector x = Vector::Zero(n);
  for (Index k = 1; k <= n4; ++k) {
    const double hi = static_cast<double>(k) * h;
    const double lo = static_cast<double>(k - 1) * h;
    const double v = (h + 3.0 / pi * (std::sin(pi * hi / 3.0) - std::sin(pi * lo / 3.0))) / std::sqrt(h);
    x(2 * n4 + k - 1) = v;
    x(2 * n4 - k) = v;
  }
  return {ProblemName::Phillips, ForwardOperator::toeplitz(std::move(t)), x, 1.0};
}

inline TestProblem gravity(Index n) {
  const double d = 0.25;
  const double h = 1.0 / static_cast<double>(n);
  ToeplitzKernel t{n, n, -(n - 1), n - 1, Vector(2 * n - 1)};
  for (Index k = -(n - 1); k <= n - 1; ++k) {
    const double ds = static_cast<double>(k) * h;
    t.taps(k + n - 1) = h * d / std::pow(d * d + ds * ds, 1.5);
  }
  Vector x(n);
  for (Index i = 0; i < n; ++i) {
    const double ti = (static_cast<double>(i) + 0.5) * h;
    x(i) = std::sin(std::numbers::pi * ti) + 0.5 * std::sin(2.0 * std::numbers::pi * ti);
  }
  return {ProblemName::Gravity, ForwardOperator::toeplitz(std::move(t)), x, 1.0};
}

inline TestProblem heat(Index n) {
  const double kappa = 1.0;
  const double h = 1.0 / static_cast<double>(n);
  const double c = h / (2.0 * kappa * std::sqrt(std::numbers::pi));
  // Lower-triangular Toeplitz: A_ij = k(t_{i-j}) for i >= j, t_k = (k + 1/2) h.
  ToeplitzKernel t{n, n, 0, n - 1, Vector(n)};
  for (Index k = 0; k < n; ++k) {
    const double tk = (static_cast<double>(k) + 0.5) * h;
    t.taps(k) = c * std::pow(tk, -1.5) * std::exp(-1.0 / (4.0 * kappa * kappa * tk));
  }
  Vector x = Vector::Zero(n);
  for (Index i = 1; i <= n / 2; ++i) {
    const double ti = static_cast<double>(i) * 20.0 / static_cast<double>(n);
    double v = 0.0;
    if (ti < 2.0) {
      v = 0.75 * ti * ti / 4.0;
    } else if (ti < 3.0) {
      v = 0.75 + (ti - 2.0) * (3.0 - ti);
    } else {
      v = 0.75 * std::exp(-(ti - 3.0) * 2.0);
    }
    x(i - 1) = v;
  }
  return {ProblemName::Heat, ForwardOperator::toeplitz(std::move(t)), x, 1.0};
}

inline TestProblem foxgood(Index n) {
  const double h = 1.0 / static_cast<double>(n);
  Matrix a(n, n);
  Vector x(n);
  for (Index i = 0; i < n; ++i) {
    const double si = (static_cast<double>(i) + 0.5) * h;
    x(i) = si;
    for (Index j = 0; j < n; ++j) {
      const double tj = (static_cast<double>(j) + 0.5) * h;
      a(i, j) = h * std::sqrt(si * si + tj * tj);
    }
  }
  return {ProblemName::Foxgood, ForwardOperator::dense(std::move(a)), x, 1.0};
}

inline TestProblem blur2d(Index side, Index width, double variance) {
  Vector x(side * side);
  auto blob = [](double px, double py, double cx, double cy, double w) {
    return std::exp(-((px - cx) * (px - cx) + (py - cy) * (py - cy)) / (2.0 * w * w));
  };
  for (Index iy = 0; iy < side; ++iy) {
    for (Index ix = 0; ix < side; ++ix) {
      const double px = (static_cast<double>(ix) + 0.5) / static_cast<double>(side);
      const double py = (static_cast<double>(iy) + 0.5) / static_cast<double>(side);
      x(iy * side + ix) = blob(px, py, 0.30, 0.35, 0.10) + 0.8 * blob(px, py, 0.68, 0.62, 0.12);
    }
  }
  return {ProblemName::Blur2d, ForwardOperator::blur2d(Blur2dKernel::make(side, width, variance)), x,
          1.0};
}

}  // namespace detail

/// Operator and true solution for a named problem. For blur2d, size is the
/// image side and the operator acts on R^{size²}.
inline TestProblem make_test_problem(ProblemName name, Index size, const TestProblemParams& params = {}) {
  require(size >= 8, ErrorKind::InvalidConfig, "test problems need size >= 8");
  TestProblem p = [&] {
    switch (name) {
      case ProblemName::Phillips: return detail::phillips(size);
      case ProblemName::Gravity: return detail::gravity(size);
      case ProblemName::Heat: return detail::heat(size);
      case ProblemName::Foxgood: return detail::foxgood(size);
      case ProblemName::Blur2d: return detail::blur2d(size, params.blur_width, params.blur_variance);
    }
    throw Error(ErrorKind::UnknownProblem, "unknown test problem");
  }();
  p.rate_scale = params.rate_scale ? *params.rate_scale
                                   : auto_rate_scale(p.a.apply(p.x_true), params.rate_min, params.rate_max);
  p.x_true *= p.rate_scale;
  return p;
}

inline TestProblem make_test_problem(const std::string& name, Index size,
                                     const TestProblemParams& params = {}) {
  return make_test_problem(parse_problem_name(name), size, params);
}

}  // namespace pvga
