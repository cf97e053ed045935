#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "htrlab/autodiff/tensor.hpp"

namespace htrlab::ad {

struct GradCheckOptions {
  double eps = 1e-6;
  /// Denominator floor for the relative error.
  double floor = 1e-8;
  /// When nonzero, only this many evenly spaced coordinates per input are
  /// perturbed (large parameter tensors).
  std::size_t max_coords = 0;
  /// Evaluate perturbed points with recording on and inputs marked as
  /// gradient targets, for functions that differentiate internally.
  bool record_evaluations = false;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences (f(x+eps e_i) - f(x-eps e_i)) / (2 eps). Returns
/// max_i |analytic_i - numeric_i| / max(max|analytic|, max|numeric|, floor)
/// over all inputs; +inf if f produces a non-finite value.
double finite_difference_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                               const std::vector<Tensor>& inputs, const GradCheckOptions& opts = {});

double finite_difference_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps = 1e-6);

}  // namespace htrlab::ad
