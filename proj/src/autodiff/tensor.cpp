#include "htrlab/autodiff/tensor.hpp"

#include <sstream>

#include "htrlab/error.hpp"

namespace htrlab::ad {

std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

Tensor Tensor::from(Shape shape, std::vector<double> data) {
  for (auto d : shape) require(d >= 0, ErrorCode::ShapeMismatch, "negative dimension in " + shape_str(shape));
  require(ad::numel(shape) == static_cast<std::int64_t>(data.size()), ErrorCode::ShapeMismatch,
          "shape " + shape_str(shape) + " does not match " + std::to_string(data.size()) + " values");
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->storage = std::make_shared<std::vector<double>>(std::move(data));
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }
Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = ad::numel(shape);
  return from(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

Tensor Tensor::vector(std::initializer_list<double> values) {
  return from({static_cast<std::int64_t>(values.size())}, std::vector<double>(values));
}

std::int64_t Tensor::dim(int axis) const {
  const int n = ndim();
  if (axis < 0) axis += n;
  require(axis >= 0 && axis < n, ErrorCode::ShapeMismatch, "axis out of range for " + shape_str(shape()));
  return impl_->shape[static_cast<std::size_t>(axis)];
}

double Tensor::item() const {
  require(numel() == 1, ErrorCode::ShapeMismatch, "item() on tensor of shape " + shape_str(shape()));
  return (*impl_->storage)[0];
}

std::span<double> Tensor::mutable_data() {
  if (impl_->storage.use_count() > 1) impl_->storage = std::make_shared<std::vector<double>>(*impl_->storage);
  return *impl_->storage;
}

Tensor& Tensor::set_requires_grad(bool on) {
  require(is_leaf(), ErrorCode::InvalidArgument, "requires_grad can only be set on leaf tensors");
  impl_->requires_grad = on;
  return *this;
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->storage = impl_->storage;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->storage = std::make_shared<std::vector<double>>(*impl_->storage);
  return Tensor(std::move(impl));
}

}  // namespace htrlab::ad
