#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "htrlab/autodiff/tensor.hpp"

namespace htrlab::ad {

/// Per-thread recording context. Nodes are ordered by a process-wide
/// sequence number, which is a valid topological order because a node is
/// always created after its inputs. A backward pass run with create_graph
/// records its own nodes one generation higher than the pass it serves.
class Tape {
 public:
  static bool grad_enabled();
  static int generation();
  static bool nan_guard();
  static std::uint64_t next_seq();

  /// Nodes reachable from `root`, sorted inputs-first.
  static std::vector<Tensor> collect(const Tensor& root);

  friend class NoGradGuard;
  friend class GenerationScope;
  friend class NanGuard;
};

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Enables or disables recording for its lifetime.
class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled);
  ~GradModeGuard();
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool prev_;
};

class GenerationScope {
 public:
  explicit GenerationScope(int generation);
  ~GenerationScope();
  GenerationScope(const GenerationScope&) = delete;
  GenerationScope& operator=(const GenerationScope&) = delete;

 private:
  int prev_;
};

/// Debug mode: every primitive checks its output for NaN/Inf and throws
/// NonFinite naming the op and node sequence number.
class NanGuard {
 public:
  NanGuard();
  ~NanGuard();
  NanGuard(const NanGuard&) = delete;
  NanGuard& operator=(const NanGuard&) = delete;

 private:
  bool prev_;
};

/// Builds an op result, recording a node when recording is on and any input
/// requires grad.
Tensor make_result(Shape shape, std::vector<double> data, const char* op, std::vector<Tensor> inputs,
                   BackwardFn backward);

/// Result of gradients(): one entry per `wrt` tensor, in order.
struct GradMap {
  std::vector<Tensor> grads;
  /// True where the target was unreachable from the loss (gradient is zero).
  std::vector<bool> disconnected;

  const Tensor& operator[](std::size_t i) const { return grads[i]; }
  std::size_t size() const { return grads.size(); }
  bool any_disconnected() const;
};

/// Exact reverse-mode gradients of a scalar. With create_graph the returned
/// gradients are themselves recorded and can be differentiated again.
GradMap gradients(const Tensor& loss, const std::vector<Tensor>& wrt, bool create_graph = false);

}  // namespace htrlab::ad
