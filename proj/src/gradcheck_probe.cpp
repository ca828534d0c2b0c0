#include <algorithm>
#include <numeric>

#include "refsr/gradcheck.hpp"

namespace refsr::gradcheck {

namespace {

// Relative error of `analytic` against the central difference at `*value`.
// When the two one-sided differences disagree, a kink (relu, |x|) lies within the
// step and the central difference mixes both sides; the analytic value must then
// match the one-sided slope of the side on which the function is smooth.
double derivative_error(double analytic, double* value, const std::function<double()>& loss, double h) {
  const double saved = *value;
  const double mid = loss();
  *value = saved + h;
  const double up = loss();
  *value = saved - h;
  const double down = loss();
  *value = saved;
  const double err = relative_error(analytic, (up - down) / (2.0 * h));
  const double fwd = (up - mid) / h, bwd = (mid - down) / h;
  if (relative_error(fwd, bwd) < 1e-4) return err;
  return std::min({err, relative_error(analytic, fwd), relative_error(analytic, bwd)});
}

}  // namespace

double probe(std::vector<double>& param, const std::vector<double>& analytic,
             const std::function<double()>& loss, const std::vector<std::size_t>& indices, double step) {
  double worst = 0.0;
  for (std::size_t i : indices)
    worst = std::max(worst, derivative_error(analytic[i], &param[i], loss, step));
  return worst;
}

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t count, std::mt19937_64& rng) {
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (count >= n) return all;
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(all[i], all[pick(rng)]);
  }
  all.resize(count);
  return all;
}

TensorD random_tensor(const Shape& shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  TensorD t(shape);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

double probe_tensor(TensorD& x, const TensorD& analytic, const std::function<double()>& loss,
                    std::mt19937_64& rng, std::size_t count, double step) {
  double worst = 0.0;
  for (std::size_t i : sample_indices(x.size(), count, rng))
    worst = std::max(worst, derivative_error(analytic[i], &x.data()[i], loss, step));
  return worst;
}

CheckResult run_check(const std::string& name, int instances, double tolerance, std::uint64_t seed,
                      const std::function<double(std::mt19937_64&)>& instance) {
  CheckResult r{name, instances, 0.0, tolerance};
  for (int k = 0; k < instances; ++k) {
    std::mt19937_64 rng(seed * 1000003ULL + static_cast<std::uint64_t>(k) * 7919ULL + 17ULL);
    r.max_rel_error = std::max(r.max_rel_error, instance(rng));
  }
  return r;
}

}  // namespace refsr::gradcheck
