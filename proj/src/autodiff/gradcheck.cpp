#include "htrlab/autodiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "htrlab/autodiff/tape.hpp"
#include "htrlab/error.hpp"

namespace htrlab::ad {

double finite_difference_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                               const std::vector<Tensor>& inputs, const GradCheckOptions& opts) {
  require(opts.eps > 0.0 && opts.eps <= 1e-2, ErrorCode::InvalidArgument, "finite-difference eps must be in (0, 1e-2]");
  constexpr double inf = std::numeric_limits<double>::infinity();

  std::vector<Tensor> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& x : inputs) leaves.push_back(x.clone().set_requires_grad(true));

  std::vector<Tensor> analytic;
  {
    Tensor y = f(leaves);
    if (!std::isfinite(y.item())) return inf;
    analytic = gradients(y, leaves).grads;
  }

  auto eval = [&](std::size_t which, std::int64_t coord, double delta) {
    GradModeGuard mode(opts.record_evaluations);
    std::vector<Tensor> xs;
    xs.reserve(leaves.size());
    for (std::size_t k = 0; k < leaves.size(); ++k)
      xs.push_back(opts.record_evaluations ? leaves[k].clone().set_requires_grad(true) : leaves[k].detach());
    Tensor moved = leaves[which].clone();
    moved.mutable_data()[static_cast<std::size_t>(coord)] += delta;
    if (opts.record_evaluations) moved.set_requires_grad(true);
    xs[which] = moved;
    return f(xs).item();
  };

  double scale = opts.floor;
  double worst = 0.0;
  std::vector<std::pair<double, double>> pairs;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    const std::int64_t n = leaves[k].numel();
    std::int64_t step = 1;
    if (opts.max_coords > 0 && n > static_cast<std::int64_t>(opts.max_coords))
      step = (n + static_cast<std::int64_t>(opts.max_coords) - 1) / static_cast<std::int64_t>(opts.max_coords);
    for (std::int64_t i = 0; i < n; i += step) {
      const double up = eval(k, i, opts.eps);
      const double down = eval(k, i, -opts.eps);
      if (!std::isfinite(up) || !std::isfinite(down)) return inf;
      const double numeric = (up - down) / (2.0 * opts.eps);
      const double a = analytic[k][i];
      if (!std::isfinite(a)) return inf;
      pairs.emplace_back(a, numeric);
      scale = std::max({scale, std::abs(a), std::abs(numeric)});
    }
  }
  for (const auto& [a, numeric] : pairs) worst = std::max(worst, std::abs(a - numeric) / scale);
  return worst;
}

double finite_difference_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  GradCheckOptions opts;
  opts.eps = eps;
  return finite_difference_check([&](const std::vector<Tensor>& xs) { return f(xs[0]); }, {x}, opts);
}

}  // namespace htrlab::ad
