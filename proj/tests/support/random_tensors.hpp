#pragma once

#include "htrlab/autodiff/tensor.hpp"
#include "htrlab/rng.hpp"

namespace htrlab::testing {

inline ad::Tensor uniform_tensor(Rng& rng, ad::Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(ad::numel(shape)));
  for (double& x : v) x = rng.uniform(lo, hi);
  return ad::Tensor::from(std::move(shape), std::move(v));
}

/// Values bounded away from zero (for log/div/pow domains).
inline ad::Tensor positive_tensor(Rng& rng, ad::Shape shape, double lo = 0.5, double hi = 2.0) {
  return uniform_tensor(rng, std::move(shape), lo, hi);
}

}  // namespace htrlab::testing
