#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

#include "hydra/numkit/tensor.hpp"

namespace hydra::num {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Relative error with a floored denominator, so coordinates whose true
/// gradient is ~0 are judged on absolute error at the floor's scale.
inline double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares the analytic gradient of `f` at `theta` against central
/// differences. `f(theta, grad)` returns the scalar value and, when `grad` is
/// non-null, writes the analytic gradient (same shape as theta) into it.
///
/// Per coordinate the error is |a - n| / max(|a|, |n|, floor) with
/// floor = max(abs_floor, rel_floor * max_i |a_i|): central differences carry
/// ~1e-10 absolute noise, which would swamp coordinates whose gradient is
/// many orders of magnitude below the largest one.
template <class F>
GradCheckResult finite_diff_check(F&& f, Tensor<double> theta, double h, double rel_floor = 1e-3,
                                  double abs_floor = 1e-8) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_check: h must be positive");
  Tensor<double> grad(theta.shape());
  const double f0 = f(theta, &grad);
  if (!std::isfinite(f0)) throw std::domain_error("finite_diff_check: f(theta) is not finite");

  double gmax = 0.0;
  for (double g : grad.values()) gmax = std::max(gmax, std::abs(g));
  const double floor = std::max(abs_floor, rel_floor * gmax);

  GradCheckResult res;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double orig = theta[i];
    theta[i] = orig + h;
    const double fp = f(theta, nullptr);
    theta[i] = orig - h;
    const double fm = f(theta, nullptr);
    theta[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw std::domain_error("finite_diff_check: non-finite value at coordinate " +
                              std::to_string(i));
    }
    const double numeric = (fp - fm) / (2.0 * h);
    const double err = relative_error(grad[i], numeric, floor);
    if (i == 0 || err > res.max_rel_error) res = {err, i, grad[i], numeric};
  }
  return res;
}

}  // namespace hydra::num
