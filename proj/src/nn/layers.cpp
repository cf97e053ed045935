#include "htrlab/nn/layers.hpp"

#include <cmath>

#include "htrlab/autodiff/ops.hpp"
#include "htrlab/autodiff/tape.hpp"
#include "htrlab/error.hpp"

namespace htrlab::nn {

using namespace htrlab::ad;

Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias) {
  require(x.dim(-1) == w.dim(0), ErrorCode::ShapeMismatch,
          "linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  Tensor y;
  if (x.ndim() <= 3) {
    y = x.ndim() == 1 ? reshape(matmul(reshape(x, {1, x.dim(0)}), w), {w.dim(1)}) : matmul(x, w);
  } else {
    Shape out = x.shape();
    out.back() = w.dim(1);
    y = reshape(matmul(reshape(x, {-1, x.dim(-1)}), w), out);
  }
  return bias ? y + *bias : y;
}

// ---------------------------------------------------------------- batch norm

BatchNormState BatchNormState::identity(std::int64_t channels) {
  BatchNormState s;
  s.running_mean = Tensor::zeros({channels});
  s.running_var = Tensor::ones({channels});
  return s;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  bool training) {
  require(x.ndim() == 2 || x.ndim() == 4, ErrorCode::ShapeMismatch,
          "batch_norm expects [N,C] or [N,C,H,W], got " + shape_str(x.shape()));
  const std::int64_t C = x.dim(1);
  require(C == state.channels() && gamma.numel() == C && beta.numel() == C, ErrorCode::ShapeMismatch,
          "batch_norm: " + std::to_string(C) + " channels vs state of " + std::to_string(state.channels()));
  const Shape bshape = x.ndim() == 4 ? Shape{1, C, 1, 1} : Shape{1, C};
  const Tensor g = reshape(gamma, bshape);
  const Tensor b = reshape(beta, bshape);

  if (state.stats_mode == StatsMode::RunningStats) {
    const Tensor mu = reshape(state.running_mean.detach(), bshape);
    const Tensor sd = sqrt(reshape(state.running_var.detach(), bshape) + state.eps);
    return (x - mu) / sd * g + b;
  }

  const Tensor flat = x.ndim() == 4 ? reshape(permute(x, {1, 0, 2, 3}), {C, -1}) : transpose(x, 0, 1);
  const std::int64_t count = flat.dim(1);
  if (training)
    require(count >= 2, ErrorCode::ShapeMismatch, "batch statistics need at least two values per channel");
  const Tensor mu = mean(flat, 1, true);
  const Tensor var = mean(square(flat - mu), 1, true);

  if (training) {
    // Fresh tensors rather than in-place writes: earlier graphs may still
    // hold the previous running values.
    std::vector<double> rm(static_cast<std::size_t>(C)), rv(static_cast<std::size_t>(C));
    const double m = state.momentum;
    const double unbias = static_cast<double>(count) / static_cast<double>(count - 1);
    for (std::int64_t c = 0; c < C; ++c) {
      const auto i = static_cast<std::size_t>(c);
      rm[i] = (1.0 - m) * state.running_mean.data()[i] + m * mu.data()[i];
      rv[i] = (1.0 - m) * state.running_var.data()[i] + m * var.data()[i] * unbias;
    }
    state.running_mean = Tensor::from({C}, std::move(rm));
    state.running_var = Tensor::from({C}, std::move(rv));
  }
  const Tensor sd = sqrt(reshape(var, bshape) + state.eps);
  return (x - reshape(mu, bshape)) / sd * g + b;
}

// ---------------------------------------------------------------- layer norm

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require(gain.numel() == x.dim(-1) && bias.numel() == x.dim(-1), ErrorCode::ShapeMismatch,
          "layer_norm: feature size mismatch");
  const Tensor mu = mean(x, -1, true);
  const Tensor xc = x - mu;
  const Tensor var = mean(square(xc), -1, true);
  return xc / sqrt(var + eps) * gain + bias;
}

// ---------------------------------------------------------------- LSTM

LstmState lstm_cell(const Tensor& x, const LstmState& state, const LstmParams& p) {
  const std::int64_t H = p.w_hh.dim(0);
  require(p.w_ih.ndim() == 2 && p.w_ih.dim(1) == 4 * H && p.w_hh.dim(1) == 4 * H && p.bias.numel() == 4 * H,
          ErrorCode::ShapeMismatch, "lstm_cell: inconsistent gate parameters");
  const bool vec = x.ndim() == 1;
  const Tensor x2 = vec ? reshape(x, {1, x.dim(0)}) : x;
  const Tensor h2 = vec ? reshape(state.h, {1, H}) : state.h;
  const Tensor c2 = vec ? reshape(state.c, {1, H}) : state.c;
  require(x2.dim(1) == p.w_ih.dim(0) && h2.dim(-1) == H && c2.dim(-1) == H, ErrorCode::ShapeMismatch,
          "lstm_cell: input/state sizes do not match the parameters");

  const Tensor gates = matmul(x2, p.w_ih) + matmul(h2, p.w_hh) + p.bias;
  const Tensor i = sigmoid(slice(gates, 1, 0, H));
  const Tensor f = sigmoid(slice(gates, 1, H, 2 * H));
  const Tensor g = tanh(slice(gates, 1, 2 * H, 3 * H));
  const Tensor o = sigmoid(slice(gates, 1, 3 * H, 4 * H));
  const Tensor c = f * c2 + i * g;
  const Tensor h = o * tanh(c);
  if (vec) return {reshape(h, {H}), reshape(c, {H})};
  return {h, c};
}

// ---------------------------------------------------------------- 2D attention

Attention2DContext prepare_attention_2d(const Tensor& V, const Attention2DParams& p) {
  require(V.ndim() == 4, ErrorCode::ShapeMismatch, "attention_2d expects V as [N,D,H,W]");
  const std::int64_t N = V.dim(0), D = V.dim(1), H = V.dim(2), W = V.dim(3);
  const std::int64_t A = p.w_v.dim(1);
  require(p.w_v.dim(0) == D && p.w_tilde.ndim() == 4 && p.w_tilde.dim(0) == A && p.w_tilde.dim(1) == D &&
              p.w_tilde.dim(2) == 3 && p.w_tilde.dim(3) == 3 && p.w_h.dim(1) == A && p.w_e.numel() == A,
          ErrorCode::ShapeMismatch, "attention_2d: parameter shapes disagree");

  // Neighbour bank with the center tap zeroed; W_v carries the center.
  std::vector<double> mask(9, 1.0);
  mask[4] = 0.0;
  const Tensor bank = p.w_tilde * Tensor::from({3, 3}, mask);
  const Tensor neigh = conv2d(V, bank, 1, 1);  // [N,A,H,W]

  Attention2DContext ctx;
  ctx.height = H;
  ctx.width = W;
  ctx.values = reshape(permute(V, {0, 2, 3, 1}), {N, H * W, D});
  ctx.projected = reshape(permute(neigh, {0, 2, 3, 1}), {N, H * W, A}) + matmul(ctx.values, p.w_v);
  return ctx;
}

Attention2DResult attend_2d(const Attention2DContext& ctx, const Tensor& h_prev, const Attention2DParams& p) {
  const std::int64_t N = ctx.values.dim(0), HW = ctx.values.dim(1), D = ctx.values.dim(2);
  const std::int64_t A = p.w_v.dim(1);
  const Tensor h2 = h_prev.ndim() == 1 ? reshape(h_prev, {1, h_prev.dim(0)}) : h_prev;
  require(h2.dim(0) == N && h2.dim(1) == p.w_h.dim(0), ErrorCode::ShapeMismatch,
          "attention_2d: hidden state " + shape_str(h_prev.shape()) + " does not match W_h");
  const Tensor e = tanh(ctx.projected + reshape(matmul(h2, p.w_h), {N, 1, A}));
  const Tensor scores = reshape(matmul(e, reshape(p.w_e, {A, 1})), {N, HW});
  const Tensor alpha = softmax(scores, 1);
  const Tensor glimpse = reshape(matmul(reshape(alpha, {N, 1, HW}), ctx.values), {N, D});
  return {glimpse, reshape(alpha, {N, ctx.height, ctx.width})};
}

Attention2DResult attention_2d(const Tensor& V, const Tensor& h_prev, const Attention2DParams& p) {
  return attend_2d(prepare_attention_2d(V, p), h_prev, p);
}

// ---------------------------------------------------------------- transformer

namespace {

Tensor split_heads(const Tensor& x, std::int64_t heads) {
  const std::int64_t N = x.dim(0), T = x.dim(1), D = x.dim(2);
  return reshape(permute(reshape(x, {N, T, heads, D / heads}), {0, 2, 1, 3}), {N * heads, T, D / heads});
}

Tensor merge_heads(const Tensor& x, std::int64_t n, std::int64_t heads) {
  const std::int64_t T = x.dim(1), dh = x.dim(2);
  return reshape(permute(reshape(x, {n, heads, T, dh}), {0, 2, 1, 3}), {n, T, heads * dh});
}

Tensor causal_mask(std::int64_t T, std::int64_t S) {
  std::vector<double> m(static_cast<std::size_t>(T * S), 0.0);
  for (std::int64_t t = 0; t < T; ++t)
    for (std::int64_t s = t + 1; s < S; ++s) m[static_cast<std::size_t>(t * S + s)] = -1e30;
  return Tensor::from({T, S}, std::move(m));
}

}  // namespace

Tensor multi_head_attention(const Tensor& q_in, const Tensor& kv, const MultiHeadParams& p, std::int64_t heads,
                            bool causal, Tensor* weights) {
  require(q_in.ndim() == 3 && kv.ndim() == 3 && q_in.dim(0) == kv.dim(0) && q_in.dim(2) == kv.dim(2),
          ErrorCode::ShapeMismatch, "attention: query " + shape_str(q_in.shape()) + " vs memory " +
                                        shape_str(kv.shape()));
  const std::int64_t N = q_in.dim(0), D = q_in.dim(2);
  require(heads >= 1 && D % heads == 0, ErrorCode::ShapeMismatch,
          std::to_string(heads) + " heads do not divide width " + std::to_string(D));
  const Tensor q = split_heads(linear(q_in, p.wq, &p.bq), heads);
  const Tensor k = split_heads(linear(kv, p.wk, &p.bk), heads);
  const Tensor v = split_heads(linear(kv, p.wv, &p.bv), heads);
  Tensor scores = matmul(q, transpose(k, 1, 2)) * (1.0 / std::sqrt(static_cast<double>(D / heads)));
  if (causal) scores = scores + causal_mask(q.dim(1), k.dim(1));
  const Tensor attn = softmax(scores, 2);
  if (weights) *weights = attn;
  return linear(merge_heads(matmul(attn, v), N, heads), p.wo, &p.bo);
}

Tensor transformer_decoder_block(const Tensor& tokens, const Tensor& memory, const TransformerBlockParams& p,
                                 const BlockOptions& opt) {
  const bool unbatched = tokens.ndim() == 2;
  Tensor x = unbatched ? reshape(tokens, {1, tokens.dim(0), tokens.dim(1)}) : tokens;
  const Tensor mem = memory.ndim() == 2 ? reshape(memory, {1, memory.dim(0), memory.dim(1)}) : memory;

  auto drop = [&](const Tensor& t) {
    if (!opt.training || opt.dropout <= 0.0) return t;
    require(opt.rng != nullptr, ErrorCode::InvalidArgument, "dropout during training needs an rng");
    return dropout(t, opt.dropout, true, *opt.rng);
  };

  x = layer_norm(x + drop(multi_head_attention(x, x, p.self_attn, opt.heads, opt.causal)), p.ln1.gain, p.ln1.bias);
  x = layer_norm(x + drop(multi_head_attention(x, mem, p.cross_attn, opt.heads, false)), p.ln2.gain, p.ln2.bias);
  const Tensor ff = linear(relu(linear(x, p.ff_w1, &p.ff_b1)), p.ff_w2, &p.ff_b2);
  x = layer_norm(x + drop(ff), p.ln3.gain, p.ln3.bias);
  return unbatched ? reshape(x, {x.dim(1), x.dim(2)}) : x;
}

// ---------------------------------------------------------------- positions

Tensor sinusoid_1d(std::int64_t length, std::int64_t dim) {
  require(dim > 0 && dim % 2 == 0, ErrorCode::OddDimension, "sinusoidal encoding needs an even width, got " +
                                                                std::to_string(dim));
  std::vector<double> v(static_cast<std::size_t>(length * dim));
  for (std::int64_t pos = 0; pos < length; ++pos) {
    for (std::int64_t i = 0; i < dim / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
      v[static_cast<std::size_t>(pos * dim + 2 * i)] = std::sin(static_cast<double>(pos) * freq);
      v[static_cast<std::size_t>(pos * dim + 2 * i + 1)] = std::cos(static_cast<double>(pos) * freq);
    }
  }
  return Tensor::from({length, dim}, std::move(v));
}

Tensor sinusoid_2d(std::int64_t h, std::int64_t w, std::int64_t dim) {
  require(dim > 0 && dim % 4 == 0, ErrorCode::OddDimension,
          "2D sinusoidal encoding splits the width over two axes and needs a multiple of 4, got " +
              std::to_string(dim));
  const Tensor rows = sinusoid_1d(h, dim / 2);
  const Tensor cols = sinusoid_1d(w, dim / 2);
  std::vector<double> v(static_cast<std::size_t>(h * w * dim));
  const std::int64_t half = dim / 2;
  for (std::int64_t i = 0; i < h; ++i)
    for (std::int64_t j = 0; j < w; ++j) {
      double* out = v.data() + (i * w + j) * dim;
      for (std::int64_t k = 0; k < half; ++k) {
        out[k] = rows.data()[static_cast<std::size_t>(i * half + k)];
        out[half + k] = cols.data()[static_cast<std::size_t>(j * half + k)];
      }
    }
  return Tensor::from({h * w, dim}, std::move(v));
}

Tensor positional_encoding(PositionKind kind, const std::vector<std::int64_t>& dims) {
  if (kind == PositionKind::Sin1D) {
    require(dims.size() == 2, ErrorCode::InvalidArgument, "Sin1D takes (length, dim)");
    return sinusoid_1d(dims[0], dims[1]);
  }
  require(dims.size() == 3, ErrorCode::InvalidArgument, "Sin2D takes (height, width, dim)");
  return sinusoid_2d(dims[0], dims[1], dims[2]);
}

}  // namespace htrlab::nn
