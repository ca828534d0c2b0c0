#pragma once

// Central finite-difference checks of analytic backward passes. The probe only
// evaluates forward functions, so it stays independent of the backward code it
// verifies. Everything here runs in double precision.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "refsr/tensor.hpp"

namespace refsr::gradcheck {

/// |a - n| / max(|a|, |n|, floor); the floor keeps near-zero entries from dominating.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Perturb `param[i]` for each probed index and compare the central difference of
/// `loss` against `analytic[i]`. Returns the max relative error. `param` is restored.
double probe(std::vector<double>& param, const std::vector<double>& analytic,
             const std::function<double()>& loss, const std::vector<std::size_t>& indices,
             double step = 1e-5);

/// Up to `count` distinct indices in [0, n), deterministic for a given rng state.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t count, std::mt19937_64& rng);

/// Tensor filled with U(lo, hi) draws.
TensorD random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0);

/// Probe entries of a tensor argument in place.
double probe_tensor(TensorD& x, const TensorD& analytic, const std::function<double()>& loss,
                    std::mt19937_64& rng, std::size_t count = 24, double step = 1e-5);

/// Sum of w * out, the scalar objective used to drive backward passes in checks.
inline double weighted_sum(const TensorD& out, const TensorD& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * w[i];
  return s;
}

struct CheckResult {
  std::string name;
  int instances = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_rel_error < tolerance; }
};

/// Run `instance(seed_k)` for k in [0, instances), each returning a max relative error.
CheckResult run_check(const std::string& name, int instances, double tolerance, std::uint64_t seed,
                      const std::function<double(std::mt19937_64&)>& instance);

/// The full suite: every differentiable kernel (tolerance 1e-4) and every composite
/// operation including the end-to-end pipeline (tolerance 1e-3).
std::vector<CheckResult> run_suite(std::uint64_t seed, int instances = 20);

}  // namespace refsr::gradcheck
