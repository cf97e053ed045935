#pragma once

#include <cstdint>
#include <vector>

#include "htrlab/autodiff/tensor.hpp"

namespace htrlab::nn {

/// Global L2 norm over a list of tensors.
double global_norm(const std::vector<ad::Tensor>& ts);

/// Rescales `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_global_norm(std::vector<ad::Tensor>& grads, double max_norm);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over a fixed list of parameter tensors, updated in place.
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  void step(std::vector<ad::Tensor>& params, const std::vector<ad::Tensor>& grads);

  const AdamConfig& config() const { return cfg_; }
  std::int64_t steps() const { return t_; }
  // Moment buffers are exposed for checkpointing.
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void set_steps(std::int64_t t) { t_ = t; }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace htrlab::nn
