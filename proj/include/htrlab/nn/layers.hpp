#pragma once

#include <cstdint>
#include <optional>

#include "htrlab/autodiff/tensor.hpp"
#include "htrlab/rng.hpp"

namespace htrlab::nn {

using ad::Tensor;

/// x [..., in] times w [in, out] plus optional bias [out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias = nullptr);

// ---------------------------------------------------------------- batch norm

enum class StatsMode { BatchStats, RunningStats };

/// Running statistics and mode for one normalization layer. The affine
/// gamma/beta live with the model parameters so they can be swapped for
/// adapted or modulated copies without touching this state.
struct BatchNormState {
  Tensor running_mean;  // [C]
  Tensor running_var;   // [C]
  double momentum = 0.1;
  double eps = 1e-5;
  StatsMode stats_mode = StatsMode::BatchStats;

  static BatchNormState identity(std::int64_t channels);
  std::int64_t channels() const { return running_mean.numel(); }
};

/// x is [N,C] or [N,C,H,W]; gamma and beta are [C]. Running values are
/// updated (momentum, unbiased variance) only when training in BatchStats.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  bool training);

// ---------------------------------------------------------------- layer norm

/// Normalizes over the last axis.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// ---------------------------------------------------------------- LSTM

struct LstmParams {
  Tensor w_ih;  // [in, 4H], gate order i, f, g, o
  Tensor w_hh;  // [H, 4H]
  Tensor bias;  // [4H]
};

struct LstmState {
  Tensor h;  // [N, H]
  Tensor c;  // [N, H]
};

/// One step. x may be [in] or [N, in]; state tensors follow the same rank.
LstmState lstm_cell(const Tensor& x, const LstmState& state, const LstmParams& p);

// ---------------------------------------------------------------- 2D attention

struct Attention2DParams {
  Tensor w_v;      // [D, A], center term
  Tensor w_h;      // [Hd, A]
  Tensor w_tilde;  // [A, D, 3, 3]; the center tap is ignored
  Tensor w_e;      // [A]
};

/// Position-dependent part of the attention energies, computed once per image.
struct Attention2DContext {
  Tensor projected;  // [N, H*W, A]
  Tensor values;     // [N, H*W, D]
  std::int64_t height = 0, width = 0;
};

struct Attention2DResult {
  Tensor glimpse;  // [N, D]
  Tensor alpha;    // [N, H, W]
};

/// V is [N, D, H, W]. Missing neighbours at the border are zero.
Attention2DContext prepare_attention_2d(const Tensor& V, const Attention2DParams& p);
Attention2DResult attend_2d(const Attention2DContext& ctx, const Tensor& h_prev, const Attention2DParams& p);
Attention2DResult attention_2d(const Tensor& V, const Tensor& h_prev, const Attention2DParams& p);

// ---------------------------------------------------------------- transformer

struct MultiHeadParams {
  Tensor wq, wk, wv, wo;  // [D, D]
  Tensor bq, bk, bv, bo;  // [D]
};

/// q_in [N,T,D] attends over kv [N,S,D]. When `weights` is given it receives
/// the attention matrix [N*heads, T, S].
Tensor multi_head_attention(const Tensor& q_in, const Tensor& kv, const MultiHeadParams& p, std::int64_t heads,
                            bool causal, Tensor* weights = nullptr);

struct LayerNormParams {
  Tensor gain, bias;  // [D]
};

struct TransformerBlockParams {
  MultiHeadParams self_attn;
  MultiHeadParams cross_attn;
  LayerNormParams ln1, ln2, ln3;
  Tensor ff_w1, ff_b1;  // [D, F], [F]
  Tensor ff_w2, ff_b2;  // [F, D], [D]
};

struct BlockOptions {
  std::int64_t heads = 1;
  bool causal = true;
  double dropout = 0.0;
  bool training = false;
  Rng* rng = nullptr;
};

/// Post-norm decoder block: self-attention, cross-attention to `memory`,
/// feed-forward, each with a residual connection. tokens [N,T,D] (or [T,D]),
/// memory [N,S,D] (or [S,D]).
Tensor transformer_decoder_block(const Tensor& tokens, const Tensor& memory, const TransformerBlockParams& p,
                                 const BlockOptions& opt);

// ---------------------------------------------------------------- positions

enum class PositionKind { Sin1D, Sin2D };

/// [length, dim] table; dim must be even.
Tensor sinusoid_1d(std::int64_t length, std::int64_t dim);
/// [h*w, dim] table over row-major positions. The first dim/2 features
/// encode the row and the rest the column, so dim must be divisible by 4.
Tensor sinusoid_2d(std::int64_t h, std::int64_t w, std::int64_t dim);
Tensor positional_encoding(PositionKind kind, const std::vector<std::int64_t>& dims);

}  // namespace htrlab::nn
