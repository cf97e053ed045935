#include "htrlab/autodiff/tape.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

#include "htrlab/autodiff/ops.hpp"
#include "htrlab/error.hpp"

namespace htrlab::ad {

namespace {

struct TapeState {
  bool grad_enabled = true;
  int generation = 0;
  bool nan_guard = false;
};

thread_local TapeState tape_state;
std::atomic<std::uint64_t> global_seq{0};

}  // namespace

bool Tape::grad_enabled() { return tape_state.grad_enabled; }
int Tape::generation() { return tape_state.generation; }
bool Tape::nan_guard() { return tape_state.nan_guard; }
std::uint64_t Tape::next_seq() { return ++global_seq; }

NoGradGuard::NoGradGuard() : prev_(tape_state.grad_enabled) { tape_state.grad_enabled = false; }
NoGradGuard::~NoGradGuard() { tape_state.grad_enabled = prev_; }

GradModeGuard::GradModeGuard(bool enabled) : prev_(tape_state.grad_enabled) { tape_state.grad_enabled = enabled; }
GradModeGuard::~GradModeGuard() { tape_state.grad_enabled = prev_; }

GenerationScope::GenerationScope(int generation) : prev_(tape_state.generation) {
  tape_state.generation = generation;
}
GenerationScope::~GenerationScope() { tape_state.generation = prev_; }

NanGuard::NanGuard() : prev_(tape_state.nan_guard) { tape_state.nan_guard = true; }
NanGuard::~NanGuard() { tape_state.nan_guard = prev_; }

Tensor make_result(Shape shape, std::vector<double> data, const char* op, std::vector<Tensor> inputs,
                   BackwardFn backward) {
  Tensor out = Tensor::from(std::move(shape), std::move(data));
  const bool record = tape_state.grad_enabled &&
                      std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  std::uint64_t seq = 0;
  if (record) {
    auto node = std::make_shared<Node>();
    node->seq = seq = Tape::next_seq();
    node->generation = tape_state.generation;
    node->op = op;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    node->output = out.impl_ptr();
    out.impl()->node = std::move(node);
    out.impl()->requires_grad = true;
  }
  if (tape_state.nan_guard) {
    for (double v : out.data()) {
      if (!std::isfinite(v)) {
        fail(ErrorCode::NonFinite, std::string("first non-finite value produced by op '") + op + "' (node seq " +
                                       std::to_string(seq) + ", generation " +
                                       std::to_string(tape_state.generation) + ")");
      }
    }
  }
  return out;
}

std::vector<Tensor> Tape::collect(const Tensor& root) {
  std::vector<Tensor> order;
  if (!root.defined() || !root.node()) return order;
  std::unordered_set<const TensorImpl*> seen;
  std::vector<Tensor> stack{root};
  seen.insert(root.impl());
  while (!stack.empty()) {
    Tensor t = std::move(stack.back());
    stack.pop_back();
    for (const Tensor& in : t.node()->inputs) {
      if (in.node() && seen.insert(in.impl()).second) stack.push_back(in);
    }
    order.push_back(std::move(t));
  }
  std::sort(order.begin(), order.end(),
            [](const Tensor& a, const Tensor& b) { return a.node()->seq < b.node()->seq; });
  return order;
}

bool GradMap::any_disconnected() const {
  return std::any_of(disconnected.begin(), disconnected.end(), [](bool b) { return b; });
}

GradMap gradients(const Tensor& loss, const std::vector<Tensor>& wrt, bool create_graph) {
  require(loss.numel() == 1, ErrorCode::ShapeMismatch,
          "gradients() needs a scalar loss, got shape " + shape_str(loss.shape()));
  for (const Tensor& w : wrt) {
    require(w.defined() && w.requires_grad(), ErrorCode::InvalidArgument,
            "differentiation target does not require grad");
  }

  const int gen = tape_state.generation + 1;
  GradModeGuard mode(create_graph);
  GenerationScope scope(gen);

  std::unordered_map<const TensorImpl*, Tensor> grads;
  grads.emplace(loss.impl(), Tensor::ones(loss.shape()));

  const std::vector<Tensor> order = Tape::collect(loss);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Tensor& out = *it;
    auto g = grads.find(out.impl());
    if (g == grads.end()) continue;
    const Node* node = out.node();
    std::vector<Tensor> in_grads = node->backward(g->second, out);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      const Tensor& in = node->inputs[i];
      if (!in.requires_grad() || i >= in_grads.size() || !in_grads[i].defined()) continue;
      auto [pos, inserted] = grads.try_emplace(in.impl(), in_grads[i]);
      if (!inserted) pos->second = add(pos->second, in_grads[i]);
    }
    // Intermediate gradients are no longer needed once propagated.
    if (out.impl() != loss.impl()) {
      bool is_target = false;
      for (const Tensor& w : wrt) is_target = is_target || w.impl() == out.impl();
      if (!is_target) grads.erase(out.impl());
    }
  }

  GradMap result;
  result.grads.reserve(wrt.size());
  for (const Tensor& w : wrt) {
    auto g = grads.find(w.impl());
    if (g == grads.end()) {
      result.grads.push_back(Tensor::zeros(w.shape()));
      result.disconnected.push_back(true);
    } else {
      result.grads.push_back(create_graph ? g->second : g->second.detach());
      result.disconnected.push_back(false);
    }
  }
  return result;
}

}  // namespace htrlab::ad
