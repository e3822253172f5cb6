#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "fat/model.hpp"
#include "fat/rng.hpp"
#include "fat/tensor.hpp"

namespace fat {

inline double gradcheck_relative_error(double fd, double ad) {
  return std::fabs(fd - ad) / std::max({std::fabs(fd), std::fabs(ad), 1e-8});
}

/// Central-difference check of a scalar function of the model parameters.
/// `f(params, grad)` returns the value; when grad is non-null it must also
/// accumulate the tape gradient into *grad. Probes n_probes randomly chosen
/// scalars and returns the worst relative error
/// |g_fd - g_ad| / max(|g_fd|, |g_ad|, 1e-8).
template <class F>
double finite_diff_check(F&& f, const ModelParams& params, double eps, int n_probes,
                         uint64_t seed) {
  require(eps > 0.0, "finite_diff_check: eps must be positive");
  require(n_probes >= 1, "finite_diff_check: need at least one probe");
  ModelParams analytic = zeros_like(params);
  const double base = f(params, &analytic);
  require(std::isfinite(base), "finite_diff_check: non-finite function value");
  const int64_t total = scalar_count(params);
  RngStream rng(seed);
  double worst = 0.0;
  for (int probe = 0; probe < n_probes; ++probe) {
    const int64_t idx = (int64_t)rng.next_below((uint64_t)total);
    ModelParams plus = params;
    add_scalar(plus, idx, (float)eps);
    const double vp = f(plus, nullptr);
    ModelParams minus = params;
    add_scalar(minus, idx, (float)-eps);
    const double vm = f(minus, nullptr);
    require(std::isfinite(vp) && std::isfinite(vm),
            "finite_diff_check: non-finite function value");
    const double fd = (vp - vm) / (2.0 * eps);
    worst = std::max(worst, gradcheck_relative_error(fd, (double)get_scalar(analytic, idx)));
  }
  return worst;
}

/// Same check over a flat float vector; used by the per-op property tests.
/// `f(x, grad)` mirrors the contract above.
template <class F>
double finite_diff_check_flat(F&& f, const std::vector<float>& x, double eps, int n_probes,
                              uint64_t seed) {
  require(eps > 0.0, "finite_diff_check: eps must be positive");
  require(n_probes >= 1, "finite_diff_check: need at least one probe");
  require(!x.empty(), "finite_diff_check: empty input");
  std::vector<float> analytic(x.size(), 0.0f);
  const double base = f(x, &analytic);
  require(std::isfinite(base), "finite_diff_check: non-finite function value");
  RngStream rng(seed);
  double worst = 0.0;
  for (int probe = 0; probe < n_probes; ++probe) {
    const size_t idx = (size_t)rng.next_below(x.size());
    std::vector<float> plus = x, minus = x;
    plus[idx] += (float)eps;
    minus[idx] -= (float)eps;
    const double vp = f(plus, nullptr);
    const double vm = f(minus, nullptr);
    require(std::isfinite(vp) && std::isfinite(vm),
            "finite_diff_check: non-finite function value");
    const double fd = (vp - vm) / (2.0 * eps);
    worst = std::max(worst, gradcheck_relative_error(fd, (double)analytic[idx]));
  }
  return worst;
}

}  // namespace fat
