#include "htrlab/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "htrlab/autodiff/tape.hpp"
#include "htrlab/error.hpp"

namespace htrlab::ad {

namespace {

using Index = std::int64_t;

int norm_axis(int axis, int ndim) {
  const int a = axis < 0 ? axis + ndim : axis;
  require(a >= 0 && a < ndim, ErrorCode::ShapeMismatch,
          "axis " + std::to_string(axis) + " out of range for rank " + std::to_string(ndim));
  return a;
}

// Product of dims before `axis`, the axis size, and the product after it.
struct AxisSplit {
  Index outer = 1, size = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= s[static_cast<std::size_t>(i)];
  r.size = s[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t n = std::max(a.size(), b.size());
  Shape out(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    const Index da = i < n - a.size() ? 1 : a[i - (n - a.size())];
    const Index db = i < n - b.size() ? 1 : b[i - (n - b.size())];
    require(da == db || da == 1 || db == 1, ErrorCode::ShapeMismatch,
            "cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    out[i] = da == 1 ? db : da;
  }
  return out;
}

bool is_suffix(const Shape& in, const Shape& out) {
  if (in.size() > out.size()) return false;
  return std::equal(in.begin(), in.end(), out.end() - static_cast<std::ptrdiff_t>(in.size()));
}

// For every flat index of `out`, the flat index of the broadcast source.
std::vector<Index> broadcast_map(const Shape& in, const Shape& out) {
  const Index total = numel(out);
  std::vector<Index> map(static_cast<std::size_t>(total));
  const Index in_n = numel(in);
  if (in_n == 1) return std::vector<Index>(static_cast<std::size_t>(total), 0);
  if (is_suffix(in, out)) {
    for (Index i = 0; i < total; ++i) map[static_cast<std::size_t>(i)] = i % in_n;
    return map;
  }
  const std::size_t r = out.size();
  const std::size_t off = r - in.size();
  std::vector<Index> stride(r, 0);
  Index s = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    if (in[i] != 1) stride[i + off] = s;
    s *= in[i];
  }
  std::vector<Index> counter(r, 0);
  Index src = 0;
  for (Index i = 0; i < total; ++i) {
    map[static_cast<std::size_t>(i)] = src;
    for (std::size_t d = r; d-- > 0;) {
      if (++counter[d] < out[d]) {
        src += stride[d];
        break;
      }
      src -= stride[d] * (out[d] - 1);
      counter[d] = 0;
    }
  }
  return map;
}

template <class F>
std::vector<double> map_unary(const Tensor& x, F f) {
  std::vector<double> out(static_cast<std::size_t>(x.numel()));
  const double* p = x.ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(p[i]);
  return out;
}

template <class F>
std::vector<double> map_binary(const Tensor& a, const Tensor& b, const Shape& out_shape, F f) {
  const Index n = numel(out_shape);
  std::vector<double> out(static_cast<std::size_t>(n));
  const double* pa = a.ptr();
  const double* pb = b.ptr();
  if (a.shape() == out_shape && b.shape() == out_shape) {
    for (Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = f(pa[i], pb[i]);
  } else if (a.shape() == out_shape && b.numel() == 1) {
    const double v = pb[0];
    for (Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = f(pa[i], v);
  } else if (a.shape() == out_shape && is_suffix(b.shape(), out_shape)) {
    const Index bn = b.numel();
    for (Index i = 0; i < n; i += bn)
      for (Index j = 0; j < bn; ++j) out[static_cast<std::size_t>(i + j)] = f(pa[i + j], pb[j]);
  } else {
    const auto ma = broadcast_map(a.shape(), out_shape);
    const auto mb = broadcast_map(b.shape(), out_shape);
    for (Index i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      out[k] = f(pa[ma[k]], pb[mb[k]]);
    }
  }
  return out;
}

Tensor grad_if(const Tensor& in, const std::function<Tensor()>& f) {
  return in.requires_grad() ? f() : Tensor();
}

void check_finite_domain(bool ok, const char* op) {
  require(ok, ErrorCode::NumericDomain, std::string(op) + ": input outside the function domain");
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  Shape out = broadcast_shape(a.shape(), b.shape());
  auto data = map_binary(a, b, out, [](double x, double y) { return x + y; });
  return make_result(out, std::move(data), "add", {a, b}, [a, b](const Tensor& g, const Tensor&) {
    return std::vector<Tensor>{grad_if(a, [&] { return sum_to(g, a.shape()); }),
                               grad_if(b, [&] { return sum_to(g, b.shape()); })};
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Shape out = broadcast_shape(a.shape(), b.shape());
  auto data = map_binary(a, b, out, [](double x, double y) { return x - y; });
  return make_result(out, std::move(data), "sub", {a, b}, [a, b](const Tensor& g, const Tensor&) {
    return std::vector<Tensor>{grad_if(a, [&] { return sum_to(g, a.shape()); }),
                               grad_if(b, [&] { return sum_to(neg(g), b.shape()); })};
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Shape out = broadcast_shape(a.shape(), b.shape());
  auto data = map_binary(a, b, out, [](double x, double y) { return x * y; });
  return make_result(out, std::move(data), "mul", {a, b}, [a, b](const Tensor& g, const Tensor&) {
    return std::vector<Tensor>{grad_if(a, [&] { return sum_to(mul(g, b), a.shape()); }),
                               grad_if(b, [&] { return sum_to(mul(g, a), b.shape()); })};
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  Shape out = broadcast_shape(a.shape(), b.shape());
  auto data = map_binary(a, b, out, [](double x, double y) { return x / y; });
  return make_result(out, std::move(data), "div", {a, b}, [a, b](const Tensor& g, const Tensor&) {
    return std::vector<Tensor>{
        grad_if(a, [&] { return sum_to(div(g, b), a.shape()); }),
        grad_if(b, [&] { return sum_to(neg(div(mul(g, a), mul(b, b))), b.shape()); })};
  });
}

Tensor neg(const Tensor& x) {
  return make_result(x.shape(), map_unary(x, [](double v) { return -v; }), "neg", {x},
                     [](const Tensor& g, const Tensor&) { return std::vector<Tensor>{neg(g)}; });
}

Tensor add_scalar(const Tensor& x, double s) {
  return make_result(x.shape(), map_unary(x, [s](double v) { return v + s; }), "add_scalar", {x},
                     [](const Tensor& g, const Tensor&) { return std::vector<Tensor>{g}; });
}

Tensor mul_scalar(const Tensor& x, double s) {
  return make_result(x.shape(), map_unary(x, [s](double v) { return v * s; }), "mul_scalar", {x},
                     [s](const Tensor& g, const Tensor&) { return std::vector<Tensor>{mul_scalar(g, s)}; });
}

Tensor exp(const Tensor& x) {
  return make_result(x.shape(), map_unary(x, [](double v) { return std::exp(v); }), "exp", {x},
                     [](const Tensor& g, const Tensor& out) { return std::vector<Tensor>{mul(g, out)}; });
}

Tensor log(const Tensor& x) {
  const double* p = x.ptr();
  check_finite_domain(std::all_of(p, p + x.numel(), [](double v) { return v > 0.0; }), "log");
  return make_result(x.shape(), map_unary(x, [](double v) { return std::log(v); }), "log", {x},
                     [x](const Tensor& g, const Tensor&) { return std::vector<Tensor>{div(g, x)}; });
}

Tensor tanh(const Tensor& x) {
  return make_result(x.shape(), map_unary(x, [](double v) { return std::tanh(v); }), "tanh", {x},
                     [](const Tensor& g, const Tensor& out) {
                       return std::vector<Tensor>{mul(g, add_scalar(neg(mul(out, out)), 1.0))};
                     });
}

namespace {
double sigmoid_value(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}
}  // namespace

Tensor sigmoid(const Tensor& x) {
  return make_result(x.shape(), map_unary(x, sigmoid_value), "sigmoid", {x},
                     [](const Tensor& g, const Tensor& out) {
                       return std::vector<Tensor>{mul(g, mul(out, add_scalar(neg(out), 1.0)))};
                     });
}

Tensor relu(const Tensor& x) {
  return make_result(x.shape(), map_unary(x, [](double v) { return v > 0.0 ? v : 0.0; }), "relu", {x},
                     [x](const Tensor& g, const Tensor&) {
                       Tensor mask = Tensor::from(x.shape(), map_unary(x, [](double v) { return v > 0.0 ? 1.0 : 0.0; }));
                       return std::vector<Tensor>{mul(g, mask)};
                     });
}

Tensor softplus(const Tensor& x) {
  auto f = [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); };
  return make_result(x.shape(), map_unary(x, f), "softplus", {x},
                     [x](const Tensor& g, const Tensor&) { return std::vector<Tensor>{mul(g, sigmoid(x))}; });
}

Tensor pow(const Tensor& x, double p) {
  const bool integral = p == std::floor(p);
  if (!integral) {
    const double* d = x.ptr();
    check_finite_domain(std::all_of(d, d + x.numel(), [](double v) { return v >= 0.0; }), "pow");
  }
  return make_result(x.shape(), map_unary(x, [p](double v) { return std::pow(v, p); }), "pow", {x},
                     [x, p](const Tensor& g, const Tensor&) {
                       if (p == 0.0) return std::vector<Tensor>{mul_scalar(g, 0.0)};
                       if (p == 1.0) return std::vector<Tensor>{g};
                       return std::vector<Tensor>{mul(g, mul_scalar(pow(x, p - 1.0), p))};
                     });
}

Tensor sqrt(const Tensor& x) { return pow(x, 0.5); }
Tensor square(const Tensor& x) { return mul(x, x); }

// ---------------------------------------------------------------------------
// Matrix product

Tensor matmul(const Tensor& a, const Tensor& b) {
  const int ra = a.ndim(), rb = b.ndim();
  require((ra == 2 || ra == 3) && (rb == 2 || rb == 3), ErrorCode::ShapeMismatch,
          "matmul supports rank 2/3 operands, got " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const Index M = a.dim(-2), K = a.dim(-1), K2 = b.dim(-2), N = b.dim(-1);
  require(K == K2, ErrorCode::ShapeMismatch, "matmul inner dims: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const Index Ba = ra == 3 ? a.dim(0) : 1;
  const Index Bb = rb == 3 ? b.dim(0) : 1;
  require(Ba == Bb || ra == 2 || rb == 2, ErrorCode::ShapeMismatch,
          "matmul batch dims: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const Index B = std::max(Ba, Bb);
  const bool batched = ra == 3 || rb == 3;
  Shape out_shape = batched ? Shape{B, M, N} : Shape{M, N};
  std::vector<double> out(static_cast<std::size_t>(B * M * N), 0.0);
  const double* pa = a.ptr();
  const double* pb = b.ptr();
  for (Index bi = 0; bi < B; ++bi) {
    const double* A = pa + (ra == 3 ? bi * M * K : 0);
    const double* Bm = pb + (rb == 3 ? bi * K * N : 0);
    double* C = out.data() + bi * M * N;
    for (Index i = 0; i < M; ++i) {
      double* crow = C + i * N;
      const double* arow = A + i * K;
      for (Index k = 0; k < K; ++k) {
        const double av = arow[k];
        const double* brow = Bm + k * N;
        for (Index j = 0; j < N; ++j) crow[j] += av * brow[j];
      }
    }
  }
  return make_result(std::move(out_shape), std::move(out), "matmul", {a, b}, [a, b](const Tensor& g, const Tensor&) {
    return std::vector<Tensor>{
        grad_if(a, [&] { return sum_to(matmul(g, transpose(b, -1, -2)), a.shape()); }),
        grad_if(b, [&] { return sum_to(matmul(transpose(a, -1, -2), g), b.shape()); })};
  });
}

// ---------------------------------------------------------------------------
// Reductions and shape ops

Tensor sum(const Tensor& x, int axis, bool keepdim) {
  const int ax = norm_axis(axis, x.ndim());
  const AxisSplit s = split_at(x.shape(), ax);
  std::vector<double> out(static_cast<std::size_t>(s.outer * s.inner), 0.0);
  const double* p = x.ptr();
  for (Index o = 0; o < s.outer; ++o)
    for (Index k = 0; k < s.size; ++k) {
      const double* src = p + (o * s.size + k) * s.inner;
      double* dst = out.data() + o * s.inner;
      for (Index i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  Shape kshape = x.shape();
  kshape[static_cast<std::size_t>(ax)] = 1;
  Shape oshape = kshape;
  if (!keepdim) oshape.erase(oshape.begin() + ax);
  const Shape in_shape = x.shape();
  return make_result(oshape, std::move(out), "sum", {x}, [in_shape, kshape](const Tensor& g, const Tensor&) {
    return std::vector<Tensor>{expand(reshape(g, kshape), in_shape)};
  });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  const Shape in_shape = x.shape();
  return make_result({}, {acc}, "sum_all", {x},
                     [in_shape](const Tensor& g, const Tensor&) { return std::vector<Tensor>{expand(g, in_shape)}; });
}

Tensor mean(const Tensor& x, int axis, bool keepdim) {
  const auto n = static_cast<double>(x.dim(axis));
  return mul_scalar(sum(x, axis, keepdim), 1.0 / n);
}

Tensor mean(const Tensor& x) { return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor reshape(const Tensor& x, Shape shape) {
  Index known = 1;
  int infer = -1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      require(infer < 0, ErrorCode::ShapeMismatch, "reshape: more than one inferred dimension");
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) shape[static_cast<std::size_t>(infer)] = known == 0 ? 0 : x.numel() / known;
  require(numel(shape) == x.numel(), ErrorCode::ShapeMismatch,
          "reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  if (shape == x.shape()) return x;
  const Shape in_shape = x.shape();
  std::vector<double> data(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(data), "reshape", {x},
                     [in_shape](const Tensor& g, const Tensor&) { return std::vector<Tensor>{reshape(g, in_shape)}; });
}

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
  const int r = x.ndim();
  require(static_cast<int>(perm.size()) == r, ErrorCode::ShapeMismatch, "permute: rank mismatch");
  std::vector<int> p(perm.size());
  std::vector<bool> used(perm.size(), false);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    p[i] = norm_axis(perm[i], r);
    require(!used[static_cast<std::size_t>(p[i])], ErrorCode::ShapeMismatch, "permute: repeated axis");
    used[static_cast<std::size_t>(p[i])] = true;
  }
  bool identity = true;
  for (int i = 0; i < r; ++i) identity = identity && p[static_cast<std::size_t>(i)] == i;
  if (identity) return x;

  const Shape& in = x.shape();
  Shape out_shape(static_cast<std::size_t>(r));
  std::vector<Index> in_stride(static_cast<std::size_t>(r));
  Index s = 1;
  for (int i = r; i-- > 0;) {
    in_stride[static_cast<std::size_t>(i)] = s;
    s *= in[static_cast<std::size_t>(i)];
  }
  std::vector<Index> stride(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    out_shape[static_cast<std::size_t>(i)] = in[static_cast<std::size_t>(p[static_cast<std::size_t>(i)])];
    stride[static_cast<std::size_t>(i)] = in_stride[static_cast<std::size_t>(p[static_cast<std::size_t>(i)])];
  }
  const Index total = x.numel();
  std::vector<double> out(static_cast<std::size_t>(total));
  const double* src = x.ptr();
  std::vector<Index> counter(static_cast<std::size_t>(r), 0);
  Index pos = 0;
  for (Index i = 0; i < total; ++i) {
    out[static_cast<std::size_t>(i)] = src[pos];
    for (int d = r; d-- > 0;) {
      const auto du = static_cast<std::size_t>(d);
      if (++counter[du] < out_shape[du]) {
        pos += stride[du];
        break;
      }
      pos -= stride[du] * (out_shape[du] - 1);
      counter[du] = 0;
    }
  }
  std::vector<int> inverse(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) inverse[static_cast<std::size_t>(p[static_cast<std::size_t>(i)])] = i;
  return make_result(std::move(out_shape), std::move(out), "permute", {x},
                     [inverse](const Tensor& g, const Tensor&) { return std::vector<Tensor>{permute(g, inverse)}; });
}

Tensor transpose(const Tensor& x, int a, int b) {
  const int r = x.ndim();
  std::vector<int> perm(static_cast<std::size_t>(r));
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[static_cast<std::size_t>(norm_axis(a, r))], perm[static_cast<std::size_t>(norm_axis(b, r))]);
  return permute(x, perm);
}

Tensor expand(const Tensor& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  require(broadcast_shape(x.shape(), shape) == shape, ErrorCode::ShapeMismatch,
          "expand " + shape_str(x.shape()) + " -> " + shape_str(shape));
  const auto m = broadcast_map(x.shape(), shape);
  std::vector<double> out(m.size());
  const double* p = x.ptr();
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = p[m[i]];
  const Shape in_shape = x.shape();
  return make_result(shape, std::move(out), "expand", {x},
                     [in_shape](const Tensor& g, const Tensor&) { return std::vector<Tensor>{sum_to(g, in_shape)}; });
}

Tensor sum_to(const Tensor& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  require(broadcast_shape(shape, x.shape()) == x.shape(), ErrorCode::ShapeMismatch,
          "sum_to " + shape_str(x.shape()) + " -> " + shape_str(shape));
  std::vector<double> out(static_cast<std::size_t>(numel(shape)), 0.0);
  const double* p = x.ptr();
  if (is_suffix(shape, x.shape())) {
    const std::size_t n = out.size();
    const auto total = static_cast<std::size_t>(x.numel());
    for (std::size_t i = 0; i < total; i += n)
      for (std::size_t j = 0; j < n; ++j) out[j] += p[i + j];
  } else {
    const auto m = broadcast_map(shape, x.shape());
    for (std::size_t i = 0; i < m.size(); ++i) out[static_cast<std::size_t>(m[i])] += p[i];
  }
  const Shape big = x.shape();
  return make_result(shape, std::move(out), "sum_to", {x},
                     [big](const Tensor& g, const Tensor&) { return std::vector<Tensor>{expand(g, big)}; });
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  require(!xs.empty(), ErrorCode::ShapeMismatch, "concat of zero tensors");
  const int ax = norm_axis(axis, xs[0].ndim());
  Shape out_shape = xs[0].shape();
  Index total_axis = 0;
  for (const Tensor& t : xs) {
    require(t.ndim() == xs[0].ndim(), ErrorCode::ShapeMismatch, "concat: rank mismatch");
    for (int d = 0; d < t.ndim(); ++d) {
      if (d == ax) continue;
      require(t.shape()[static_cast<std::size_t>(d)] == out_shape[static_cast<std::size_t>(d)], ErrorCode::ShapeMismatch,
              "concat: " + shape_str(t.shape()) + " vs " + shape_str(out_shape));
    }
    total_axis += t.dim(ax);
  }
  out_shape[static_cast<std::size_t>(ax)] = total_axis;
  const AxisSplit s = split_at(out_shape, ax);
  std::vector<double> out(static_cast<std::size_t>(numel(out_shape)));
  Index offset = 0;
  std::vector<std::pair<Index, Index>> ranges;
  for (const Tensor& t : xs) {
    const Index len = t.dim(ax);
    const double* p = t.ptr();
    for (Index o = 0; o < s.outer; ++o)
      std::copy(p + o * len * s.inner, p + (o + 1) * len * s.inner,
                out.begin() + static_cast<std::ptrdiff_t>((o * total_axis + offset) * s.inner));
    ranges.emplace_back(offset, offset + len);
    offset += len;
  }
  return make_result(std::move(out_shape), std::move(out), "concat", xs,
                     [ranges, ax, xs](const Tensor& g, const Tensor&) {
                       std::vector<Tensor> grads;
                       for (std::size_t i = 0; i < ranges.size(); ++i)
                         grads.push_back(grad_if(xs[i], [&] { return slice(g, ax, ranges[i].first, ranges[i].second); }));
                       return grads;
                     });
}

Tensor slice(const Tensor& x, int axis, Index start, Index end) {
  const int ax = norm_axis(axis, x.ndim());
  const Index n = x.dim(ax);
  require(0 <= start && start <= end && end <= n, ErrorCode::ShapeMismatch,
          "slice [" + std::to_string(start) + "," + std::to_string(end) + ") of axis size " + std::to_string(n));
  if (start == 0 && end == n) return x;
  const AxisSplit s = split_at(x.shape(), ax);
  const Index len = end - start;
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(ax)] = len;
  std::vector<double> out(static_cast<std::size_t>(s.outer * len * s.inner));
  const double* p = x.ptr();
  for (Index o = 0; o < s.outer; ++o)
    std::copy(p + (o * n + start) * s.inner, p + (o * n + end) * s.inner,
              out.begin() + static_cast<std::ptrdiff_t>(o * len * s.inner));
  return make_result(std::move(out_shape), std::move(out), "slice", {x}, [ax, start, n](const Tensor& g, const Tensor&) {
    return std::vector<Tensor>{pad_slice(g, ax, start, n)};
  });
}

Tensor pad_slice(const Tensor& x, int axis, Index start, Index full) {
  const int ax = norm_axis(axis, x.ndim());
  const Index len = x.dim(ax);
  require(start >= 0 && start + len <= full, ErrorCode::ShapeMismatch, "pad_slice out of range");
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(ax)] = full;
  const AxisSplit s = split_at(out_shape, ax);
  std::vector<double> out(static_cast<std::size_t>(numel(out_shape)), 0.0);
  const double* p = x.ptr();
  for (Index o = 0; o < s.outer; ++o)
    std::copy(p + o * len * s.inner, p + (o + 1) * len * s.inner,
              out.begin() + static_cast<std::ptrdiff_t>((o * full + start) * s.inner));
  return make_result(std::move(out_shape), std::move(out), "pad_slice", {x},
                     [ax, start, len](const Tensor& g, const Tensor&) {
                       return std::vector<Tensor>{slice(g, ax, start, start + len)};
                     });
}

Tensor index_select(const Tensor& x, const std::vector<Index>& ids) {
  require(x.ndim() >= 1, ErrorCode::ShapeMismatch, "index_select on a scalar");
  const Index rows = x.dim(0);
  const Index row = rows == 0 ? 0 : x.numel() / rows;
  Shape out_shape = x.shape();
  out_shape[0] = static_cast<Index>(ids.size());
  std::vector<double> out(static_cast<std::size_t>(numel(out_shape)));
  const double* p = x.ptr();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < rows, ErrorCode::ShapeMismatch, "index_select: id out of range");
    std::copy(p + ids[i] * row, p + (ids[i] + 1) * row, out.begin() + static_cast<std::ptrdiff_t>(i) * row);
  }
  return make_result(std::move(out_shape), std::move(out), "index_select", {x}, [ids, rows](const Tensor& g, const Tensor&) {
    return std::vector<Tensor>{index_add(g, ids, rows)};
  });
}

Tensor index_add(const Tensor& x, const std::vector<Index>& ids, Index rows) {
  require(x.ndim() >= 1 && x.dim(0) == static_cast<Index>(ids.size()), ErrorCode::ShapeMismatch,
          "index_add: row count mismatch");
  const Index row = ids.empty() ? 0 : x.numel() / static_cast<Index>(ids.size());
  Shape out_shape = x.shape();
  out_shape[0] = rows;
  std::vector<double> out(static_cast<std::size_t>(numel(out_shape)), 0.0);
  const double* p = x.ptr();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < rows, ErrorCode::ShapeMismatch, "index_add: id out of range");
    for (Index j = 0; j < row; ++j) out[static_cast<std::size_t>(ids[i] * row + j)] += p[static_cast<Index>(i) * row + j];
  }
  return make_result(std::move(out_shape), std::move(out), "index_add", {x},
                     [ids](const Tensor& g, const Tensor&) { return std::vector<Tensor>{index_select(g, ids)}; });
}

Tensor gather_flat(const Tensor& x, const std::vector<Index>& idx, Shape out_shape) {
  require(numel(out_shape) == static_cast<Index>(idx.size()), ErrorCode::ShapeMismatch, "gather_flat: shape/index mismatch");
  std::vector<double> out(idx.size());
  const double* p = x.ptr();
  const Index n = x.numel();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] >= 0 && idx[i] < n, ErrorCode::ShapeMismatch, "gather_flat: index out of range");
    out[i] = p[idx[i]];
  }
  const Shape in_shape = x.shape();
  return make_result(std::move(out_shape), std::move(out), "gather_flat", {x}, [idx, in_shape](const Tensor& g, const Tensor&) {
    return std::vector<Tensor>{scatter_flat(g, idx, in_shape)};
  });
}

Tensor scatter_flat(const Tensor& x, const std::vector<Index>& idx, Shape out_shape) {
  require(x.numel() == static_cast<Index>(idx.size()), ErrorCode::ShapeMismatch, "scatter_flat: size mismatch");
  std::vector<double> out(static_cast<std::size_t>(numel(out_shape)), 0.0);
  const double* p = x.ptr();
  for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<std::size_t>(idx[i])] += p[i];
  const Shape small = x.shape();
  return make_result(std::move(out_shape), std::move(out), "scatter_flat", {x}, [idx, small](const Tensor& g, const Tensor&) {
    return std::vector<Tensor>{gather_flat(g, idx, small)};
  });
}

// ---------------------------------------------------------------------------
// Convolution and pooling

namespace {
struct ConvDims {
  Index N, C, H, W, Ho, Wo;
};

ConvDims conv_dims(const Shape& s, const Conv2dGeometry& g) {
  require(s.size() == 4, ErrorCode::ShapeMismatch, "expected [N,C,H,W], got " + shape_str(s));
  ConvDims d{s[0], s[1], s[2], s[3], 0, 0};
  require(g.stride_h > 0 && g.stride_w > 0, ErrorCode::ShapeMismatch, "conv stride must be positive");
  d.Ho = (d.H + 2 * g.pad_h - g.kernel_h) / g.stride_h + 1;
  d.Wo = (d.W + 2 * g.pad_w - g.kernel_w) / g.stride_w + 1;
  require(d.Ho > 0 && d.Wo > 0, ErrorCode::ShapeMismatch, "kernel larger than padded input " + shape_str(s));
  return d;
}
}  // namespace

Tensor im2col(const Tensor& x, const Conv2dGeometry& g) {
  const ConvDims d = conv_dims(x.shape(), g);
  const Index rows = d.C * g.kernel_h * g.kernel_w;
  const Index L = d.Ho * d.Wo;
  std::vector<double> out(static_cast<std::size_t>(d.N * rows * L), 0.0);
  const double* p = x.ptr();
  for (Index n = 0; n < d.N; ++n)
    for (Index c = 0; c < d.C; ++c)
      for (Index ki = 0; ki < g.kernel_h; ++ki)
        for (Index kj = 0; kj < g.kernel_w; ++kj) {
          const Index r = (c * g.kernel_h + ki) * g.kernel_w + kj;
          double* dst = out.data() + (n * rows + r) * L;
          const double* src = p + (n * d.C + c) * d.H * d.W;
          for (Index oh = 0; oh < d.Ho; ++oh) {
            const Index ih = oh * g.stride_h - g.pad_h + ki;
            if (ih < 0 || ih >= d.H) continue;
            for (Index ow = 0; ow < d.Wo; ++ow) {
              const Index iw = ow * g.stride_w - g.pad_w + kj;
              if (iw >= 0 && iw < d.W) dst[oh * d.Wo + ow] = src[ih * d.W + iw];
            }
          }
        }
  const Shape in_shape = x.shape();
  return make_result({d.N, rows, L}, std::move(out), "im2col", {x}, [in_shape, g](const Tensor& gr, const Tensor&) {
    return std::vector<Tensor>{col2im(gr, in_shape, g)};
  });
}

Tensor col2im(const Tensor& cols, const Shape& image_shape, const Conv2dGeometry& g) {
  const ConvDims d = conv_dims(image_shape, g);
  const Index rows = d.C * g.kernel_h * g.kernel_w;
  const Index L = d.Ho * d.Wo;
  require(cols.shape() == Shape{d.N, rows, L}, ErrorCode::ShapeMismatch, "col2im: column shape mismatch");
  std::vector<double> out(static_cast<std::size_t>(numel(image_shape)), 0.0);
  const double* p = cols.ptr();
  for (Index n = 0; n < d.N; ++n)
    for (Index c = 0; c < d.C; ++c)
      for (Index ki = 0; ki < g.kernel_h; ++ki)
        for (Index kj = 0; kj < g.kernel_w; ++kj) {
          const Index r = (c * g.kernel_h + ki) * g.kernel_w + kj;
          const double* src = p + (n * rows + r) * L;
          double* dst = out.data() + (n * d.C + c) * d.H * d.W;
          for (Index oh = 0; oh < d.Ho; ++oh) {
            const Index ih = oh * g.stride_h - g.pad_h + ki;
            if (ih < 0 || ih >= d.H) continue;
            for (Index ow = 0; ow < d.Wo; ++ow) {
              const Index iw = ow * g.stride_w - g.pad_w + kj;
              if (iw >= 0 && iw < d.W) dst[ih * d.W + iw] += src[oh * d.Wo + ow];
            }
          }
        }
  return make_result(image_shape, std::move(out), "col2im", {cols},
                     [g](const Tensor& gr, const Tensor&) { return std::vector<Tensor>{im2col(gr, g)}; });
}

Tensor conv2d(const Tensor& x, const Tensor& w, Index stride, Index pad) {
  require(w.ndim() == 4, ErrorCode::ShapeMismatch, "conv2d weight must be [O,C,kh,kw]");
  require(x.ndim() == 4 && x.dim(1) == w.dim(1), ErrorCode::ShapeMismatch,
          "conv2d channels: input " + shape_str(x.shape()) + " weight " + shape_str(w.shape()));
  Conv2dGeometry g{w.dim(2), w.dim(3), stride, stride, pad, pad};
  const ConvDims d = conv_dims(x.shape(), g);
  Tensor cols = im2col(x, g);
  Tensor wm = reshape(w, {w.dim(0), w.dim(1) * w.dim(2) * w.dim(3)});
  return reshape(matmul(wm, cols), {d.N, w.dim(0), d.Ho, d.Wo});
}

Tensor max_pool2d(const Tensor& x, Index kh, Index kw) {
  require(x.ndim() == 4, ErrorCode::ShapeMismatch, "max_pool2d expects [N,C,H,W]");
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index Ho = H / kh, Wo = W / kw;
  require(Ho > 0 && Wo > 0, ErrorCode::ShapeMismatch, "max_pool2d kernel larger than input");
  std::vector<Index> idx(static_cast<std::size_t>(N * C * Ho * Wo));
  const double* p = x.ptr();
  std::size_t o = 0;
  for (Index nc = 0; nc < N * C; ++nc) {
    const Index base = nc * H * W;
    for (Index oh = 0; oh < Ho; ++oh)
      for (Index ow = 0; ow < Wo; ++ow) {
        Index best = base + (oh * kh) * W + ow * kw;
        for (Index i = 0; i < kh; ++i)
          for (Index j = 0; j < kw; ++j) {
            const Index at = base + (oh * kh + i) * W + ow * kw + j;
            if (p[at] > p[best]) best = at;
          }
        idx[o++] = best;
      }
  }
  return gather_flat(x, idx, {N, C, Ho, Wo});
}

// ---------------------------------------------------------------------------
// Softmax family

Tensor softmax(const Tensor& x, int axis) {
  const int ax = norm_axis(axis, x.ndim());
  const AxisSplit s = split_at(x.shape(), ax);
  std::vector<double> out(static_cast<std::size_t>(x.numel()));
  const double* p = x.ptr();
  for (Index o = 0; o < s.outer; ++o)
    for (Index i = 0; i < s.inner; ++i) {
      const Index base = o * s.size * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (Index k = 0; k < s.size; ++k) mx = std::max(mx, p[base + k * s.inner]);
      double z = 0.0;
      for (Index k = 0; k < s.size; ++k) {
        const double e = std::exp(p[base + k * s.inner] - mx);
        out[static_cast<std::size_t>(base + k * s.inner)] = e;
        z += e;
      }
      for (Index k = 0; k < s.size; ++k) out[static_cast<std::size_t>(base + k * s.inner)] /= z;
    }
  return make_result(x.shape(), std::move(out), "softmax", {x}, [ax](const Tensor& g, const Tensor& y) {
    return std::vector<Tensor>{mul(y, sub(g, sum(mul(g, y), ax, true)))};
  });
}

Tensor log_softmax(const Tensor& x, int axis) {
  const int ax = norm_axis(axis, x.ndim());
  const AxisSplit s = split_at(x.shape(), ax);
  std::vector<double> out(static_cast<std::size_t>(x.numel()));
  const double* p = x.ptr();
  for (Index o = 0; o < s.outer; ++o)
    for (Index i = 0; i < s.inner; ++i) {
      const Index base = o * s.size * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (Index k = 0; k < s.size; ++k) mx = std::max(mx, p[base + k * s.inner]);
      double z = 0.0;
      for (Index k = 0; k < s.size; ++k) z += std::exp(p[base + k * s.inner] - mx);
      const double lz = mx + std::log(z);
      for (Index k = 0; k < s.size; ++k)
        out[static_cast<std::size_t>(base + k * s.inner)] = p[base + k * s.inner] - lz;
    }
  return make_result(x.shape(), std::move(out), "log_softmax", {x}, [ax](const Tensor& g, const Tensor& y) {
    return std::vector<Tensor>{sub(g, mul(exp(y), sum(g, ax, true)))};
  });
}

// ---------------------------------------------------------------------------
// Dropout

Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
  require(p >= 0.0 && p < 1.0, ErrorCode::InvalidArgument, "dropout probability must be in [0,1)");
  if (!training || p == 0.0) return x;
  const double keep = 1.0 - p;
  std::vector<double> mask(static_cast<std::size_t>(x.numel()));
  for (double& m : mask) m = rng.uniform() < keep ? 1.0 / keep : 0.0;
  return dropout_with_mask(x, Tensor::from(x.shape(), std::move(mask)));
}

Tensor dropout_with_mask(const Tensor& x, const Tensor& mask) {
  require(x.shape() == mask.shape(), ErrorCode::ShapeMismatch, "dropout mask shape mismatch");
  return mul(x, mask);
}

}  // namespace htrlab::ad
