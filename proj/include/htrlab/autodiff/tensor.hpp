#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace htrlab::ad {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tensor;
struct Node;

struct TensorImpl {
  Shape shape;
  std::shared_ptr<std::vector<double>> storage;
  bool requires_grad = false;
  std::shared_ptr<Node> node;
};

/// Computes input gradients from the output gradient. `out` is the
/// graph-connected output of the node, so formulas written in terms of it
/// stay differentiable when the backward pass itself is recorded.
using BackwardFn = std::function<std::vector<Tensor>(const Tensor& grad, const Tensor& out)>;

/// One recorded primitive application.
struct Node {
  std::uint64_t seq = 0;
  int generation = 0;
  const char* op = "";
  std::vector<Tensor> inputs;
  BackwardFn backward;
  std::weak_ptr<TensorImpl> output;
};

/// Dense n-dimensional array of doubles with an optional link into the
/// recorded computation graph. Copies are shallow handles; use clone() for
/// an independent value.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor from(Shape shape, std::vector<double> data);
  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor vector(std::initializer_list<double> values);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t dim(int axis) const;
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->storage->size()); }

  std::span<const double> data() const { return *impl_->storage; }
  const double* ptr() const { return impl_->storage->data(); }
  double item() const;
  double operator[](std::int64_t flat) const { return (*impl_->storage)[static_cast<std::size_t>(flat)]; }

  /// In-place access for optimizers and initializers. Storage shared with
  /// detached snapshots is copied first, so snapshots keep their values.
  std::span<double> mutable_data();

  bool requires_grad() const { return impl_->requires_grad; }
  /// Marks a leaf as a differentiation target.
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const { return !impl_->node; }
  const Node* node() const { return impl_->node.get(); }

  /// Same values, no graph link, requires_grad=false.
  Tensor detach() const;
  /// Fresh storage, no graph link.
  Tensor clone() const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

}  // namespace htrlab::ad
