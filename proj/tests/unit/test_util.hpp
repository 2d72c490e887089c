#pragma once

#include <gtest/gtest.h>

#include <cstdint>
#include <random>

#include "pvga/elbo.hpp"
#include "pvga/model.hpp"

namespace pvga::testing {

inline Matrix random_matrix(Index r, Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Matrix a(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) a(i, j) = nd(rng);
  return a;
}

inline Vector random_vector(Index n, std::mt19937_64& rng, double scale = 1.0) {
  return random_matrix(n, 1, rng, scale);
}

/// G Gᵗ/m + shift·I, scaled.
inline Matrix random_spd(Index m, std::mt19937_64& rng, double scale = 1.0, double shift = 0.2) {
  const Matrix g = random_matrix(m, m, rng);
  Matrix s = scale * (g * g.transpose() / static_cast<double>(m) + shift * Matrix::Identity(m, m));
  symmetrize(s);
  return s;
}

struct Instance {
  ForwardOperator a;
  PoissonData data;
  PriorSpec prior;
  GaussianState state;
};

/// Small random Poisson problem with a random (non-optimal) Gaussian state.
inline Instance random_instance(Index m, Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Matrix a = random_matrix(n, m, rng, 0.4);
  std::uniform_real_distribution<double> u(0.5, 3.0);
  const PriorKind kind = seed % 2 ? PriorKind::H1 : PriorKind::L2;
  PriorSpec prior = make_prior(kind, u(rng), m, random_vector(m, rng, 0.3));
  ForwardOperator op = ForwardOperator::dense(a);
  PoissonData data = sample_poisson_data(op, random_vector(m, rng, 0.8), seed + 1000);
  GaussianState s{random_vector(m, rng, 0.5), random_spd(m, rng, 0.3), std::nullopt};
  return {std::move(op), std::move(data), std::move(prior), std::move(s)};
}

inline void expect_error(ErrorKind kind, const auto& fn) {
  try {
    fn();
    ADD_FAILURE() << "expected error " << to_string(kind);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), kind) << e.what();
  }
}

}  // namespace pvga::testing
