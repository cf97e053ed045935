#include "htrlab/nn/optim.hpp"

#include <cmath>

#include "htrlab/error.hpp"

namespace htrlab::nn {

double global_norm(const std::vector<ad::Tensor>& ts) {
  double s = 0.0;
  for (const auto& t : ts)
    for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

double clip_global_norm(std::vector<ad::Tensor>& grads, double max_norm) {
  const double n = global_norm(grads);
  if (n > max_norm && n > 0.0) {
    const double k = max_norm / n;
    for (auto& g : grads) {
      g = g.detach();
      for (double& v : g.mutable_data()) v *= k;
    }
  }
  return n;
}

void Adam::step(std::vector<ad::Tensor>& params, const std::vector<ad::Tensor>& grads) {
  require(params.size() == grads.size(), ErrorCode::LengthMismatch, "Adam: parameter and gradient counts differ");
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
      v_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
    }
  }
  require(m_.size() == params.size(), ErrorCode::LengthMismatch, "Adam: parameter list changed between steps");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    require(params[k].numel() == grads[k].numel() && static_cast<std::size_t>(params[k].numel()) == m_[k].size(),
            ErrorCode::ShapeMismatch, "Adam: gradient shape differs from parameter");
    auto p = params[k].mutable_data();
    const auto g = grads[k].data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      p[i] -= cfg_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
    }
  }
}

}  // namespace htrlab::nn
