#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "htrlab/autodiff/gradcheck.hpp"
#include "htrlab/autodiff/ops.hpp"
#include "htrlab/autodiff/tape.hpp"
#include "htrlab/error.hpp"
#include "htrlab/nn/layers.hpp"
#include "htrlab/nn/loss.hpp"
#include "htrlab/nn/optim.hpp"
#include "support/random_tensors.hpp"

using namespace htrlab;
using namespace htrlab::ad;
using namespace htrlab::nn;
using htrlab::testing::uniform_tensor;

namespace {

Tensor project(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(y * uniform_tensor(rng, y.shape()));
}

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::FormatError;
}

MultiHeadParams random_mha(Rng& r, std::int64_t D) {
  return {uniform_tensor(r, {D, D}, -0.5, 0.5), uniform_tensor(r, {D, D}, -0.5, 0.5),
          uniform_tensor(r, {D, D}, -0.5, 0.5), uniform_tensor(r, {D, D}, -0.5, 0.5),
          uniform_tensor(r, {D}, -0.1, 0.1),    uniform_tensor(r, {D}, -0.1, 0.1),
          uniform_tensor(r, {D}, -0.1, 0.1),    uniform_tensor(r, {D}, -0.1, 0.1)};
}

TransformerBlockParams random_block(Rng& r, std::int64_t D, std::int64_t F) {
  TransformerBlockParams p;
  p.self_attn = random_mha(r, D);
  p.cross_attn = random_mha(r, D);
  for (auto* ln : {&p.ln1, &p.ln2, &p.ln3}) {
    ln->gain = uniform_tensor(r, {D}, 0.8, 1.2);
    ln->bias = uniform_tensor(r, {D}, -0.1, 0.1);
  }
  p.ff_w1 = uniform_tensor(r, {D, F}, -0.5, 0.5);
  p.ff_b1 = uniform_tensor(r, {F}, -0.1, 0.1);
  p.ff_w2 = uniform_tensor(r, {F, D}, -0.5, 0.5);
  p.ff_b2 = uniform_tensor(r, {D}, -0.1, 0.1);
  return p;
}

Attention2DParams random_attention(Rng& r, std::int64_t D, std::int64_t Hd, std::int64_t A) {
  return {uniform_tensor(r, {D, A}), uniform_tensor(r, {Hd, A}), uniform_tensor(r, {A, D, 3, 3}, -0.5, 0.5),
          uniform_tensor(r, {A})};
}

TokenBatch tokens(std::int64_t n, std::int64_t t, std::vector<std::int64_t> ids) { return {n, t, std::move(ids)}; }

}  // namespace

// ------------------------------------------------------------------ batch norm

TEST(BatchNorm, ThreeValuesNormalizeToHandComputedResult) {
  auto st = BatchNormState::identity(1);
  st.eps = 0.0;
  const Tensor y = batch_norm(Tensor::from({3, 1}, {1, 2, 3}), Tensor::ones({1}), Tensor::zeros({1}), st, true);
  // mean 2, biased variance 2/3
  const double k = 1.0 / std::sqrt(2.0 / 3.0);
  EXPECT_NEAR(y[0], -k, 1e-12);
  EXPECT_DOUBLE_EQ(y[1], 0.0);
  EXPECT_NEAR(y[2], k, 1e-12);
  EXPECT_NEAR(y[2], 1.2247, 1e-4);
}

TEST(BatchNorm, IdentityRunningStatsReturnInputExactly) {
  Rng r(1);
  auto st = BatchNormState::identity(3);
  st.eps = 0.0;
  st.stats_mode = StatsMode::RunningStats;
  const Tensor x = uniform_tensor(r, {2, 3, 4, 5}, -3, 3);
  const Tensor y = batch_norm(x, Tensor::ones({3}), Tensor::zeros({3}), st, true);
  for (std::int64_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(BatchNorm, ZeroDeltasMatchUnconditionedCall) {
  Rng r(2);
  const Tensor x = uniform_tensor(r, {4, 2, 3, 3});
  const Tensor gamma = uniform_tensor(r, {2}, 0.5, 1.5), beta = uniform_tensor(r, {2});
  for (auto mode : {StatsMode::BatchStats, StatsMode::RunningStats}) {
    auto a = BatchNormState::identity(2), b = BatchNormState::identity(2);
    a.stats_mode = b.stats_mode = mode;
    const Tensor y0 = batch_norm(x, gamma, beta, a, false);
    const Tensor y1 = batch_norm(x, gamma + Tensor::zeros({2}), beta + Tensor::zeros({2}), b, false);
    for (std::int64_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y0[i], y1[i]);
  }
}

TEST(BatchNorm, BatchStatsStandardizeEveryChannel) {
  Rng r(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = uniform_tensor(r, {3, 4, 2, 5}, -10.0 * r.uniform(), 10.0);
    auto st = BatchNormState::identity(4);
    st.eps = 0.0;
    const Tensor y = batch_norm(x, Tensor::ones({4}), Tensor::zeros({4}), st, true);
    for (std::int64_t c = 0; c < 4; ++c) {
      double s = 0, s2 = 0;
      int n = 0;
      for (std::int64_t b = 0; b < 3; ++b)
        for (std::int64_t k = 0; k < 10; ++k) {
          const double v = y[(b * 4 + c) * 10 + k];
          s += v;
          s2 += v * v;
          ++n;
        }
      EXPECT_LT(std::abs(s / n), 1e-8);
      EXPECT_LT(std::abs(s2 / n - 1.0), 1e-6);
    }
  }
}

TEST(BatchNorm, RunningStatsNeverChangeRunningValues) {
  Rng r(4);
  auto st = BatchNormState::identity(2);
  st.running_mean = Tensor::from({2}, {0.3, -0.7});
  st.running_var = Tensor::from({2}, {1.7, 0.2});
  st.stats_mode = StatsMode::RunningStats;
  const auto m0 = std::vector<double>(st.running_mean.data().begin(), st.running_mean.data().end());
  const auto v0 = std::vector<double>(st.running_var.data().begin(), st.running_var.data().end());
  for (int i = 0; i < 25; ++i) batch_norm(uniform_tensor(r, {3, 2}), Tensor::ones({2}), Tensor::zeros({2}), st, true);
  for (int c = 0; c < 2; ++c) {
    EXPECT_EQ(st.running_mean[c], m0[static_cast<std::size_t>(c)]);
    EXPECT_EQ(st.running_var[c], v0[static_cast<std::size_t>(c)]);
  }
}

TEST(BatchNorm, RunningUpdateUsesMomentumAndUnbiasedVariance) {
  auto st = BatchNormState::identity(1);
  batch_norm(Tensor::from({4, 1}, {1, 2, 3, 6}), Tensor::ones({1}), Tensor::zeros({1}), st, true);
  // batch mean 3, unbiased variance 14/3
  EXPECT_NEAR(st.running_mean[0], 0.9 * 0.0 + 0.1 * 3.0, 1e-15);
  EXPECT_NEAR(st.running_var[0], 0.9 * 1.0 + 0.1 * 14.0 / 3.0, 1e-15);

  auto frozen = BatchNormState::identity(1);
  batch_norm(Tensor::from({4, 1}, {1, 2, 3, 6}), Tensor::ones({1}), Tensor::zeros({1}), frozen, false);
  EXPECT_EQ(frozen.running_mean[0], 0.0);
  EXPECT_EQ(frozen.running_var[0], 1.0);
}

TEST(BatchNorm, ChannelMismatchIsShapeError) {
  auto st = BatchNormState::identity(3);
  EXPECT_EQ(code_of([&] { batch_norm(Tensor::zeros({2, 4}), Tensor::ones({3}), Tensor::zeros({3}), st, true); }),
            ErrorCode::ShapeMismatch);
  EXPECT_EQ(code_of([&] { batch_norm(Tensor::zeros({1, 3}), Tensor::ones({3}), Tensor::zeros({3}), st, true); }),
            ErrorCode::ShapeMismatch);
}

TEST(BatchNorm, GradientsPassFiniteDifferenceCheck) {
  Rng r(5);
  for (auto mode : {StatsMode::BatchStats, StatsMode::RunningStats}) {
    const double err = finite_difference_check(
        [mode](const std::vector<Tensor>& in) {
          auto st = BatchNormState::identity(2);
          st.running_mean = Tensor::from({2}, {0.1, -0.2});
          st.running_var = Tensor::from({2}, {0.9, 1.3});
          st.stats_mode = mode;
          return project(batch_norm(in[0], in[1], in[2], st, true), 11);
        },
        {uniform_tensor(r, {3, 2, 2, 2}), uniform_tensor(r, {2}, 0.5, 1.5), uniform_tensor(r, {2})});
    EXPECT_LT(err, 1e-4);
  }
}

TEST(LayerNorm, GradientsPassFiniteDifferenceCheck) {
  Rng r(6);
  const double err = finite_difference_check(
      [](const std::vector<Tensor>& in) { return project(layer_norm(in[0], in[1], in[2]), 12); },
      {uniform_tensor(r, {2, 3, 6}), uniform_tensor(r, {6}, 0.5, 1.5), uniform_tensor(r, {6})});
  EXPECT_LT(err, 1e-4);
}

// ------------------------------------------------------------------ LSTM

TEST(Lstm, ZeroWeightsAndInputsGiveZeroState) {
  LstmParams p{Tensor::zeros({3, 8}), Tensor::zeros({2, 8}), Tensor::zeros({8})};
  const auto s = lstm_cell(Tensor::zeros({3}), {Tensor::zeros({2}), Tensor::zeros({2})}, p);
  for (int i = 0; i < 2; ++i) {
    EXPECT_EQ(s.h[i], 0.0);
    EXPECT_EQ(s.c[i], 0.0);
  }
}

TEST(Lstm, CellStateGrowsByAtMostOne) {
  Rng r(7);
  for (int trial = 0; trial < 50; ++trial) {
    LstmParams p{uniform_tensor(r, {4, 12}, -3, 3), uniform_tensor(r, {3, 12}, -3, 3), uniform_tensor(r, {12}, -3, 3)};
    const Tensor c = uniform_tensor(r, {2, 3}, -5, 5);
    const auto s = lstm_cell(uniform_tensor(r, {2, 4}, -3, 3), {uniform_tensor(r, {2, 3}), c}, p);
    for (std::int64_t i = 0; i < 6; ++i) EXPECT_LE(std::abs(s.c[i]), std::abs(c[i]) + 1.0);
  }
}

TEST(Lstm, ThreeChainedCellsPassFiniteDifferenceCheck) {
  Rng r(8);
  const double err = finite_difference_check(
      [](const std::vector<Tensor>& in) {
        LstmParams p{in[0], in[1], in[2]};
        LstmState s{Tensor::zeros({2, 3}), Tensor::zeros({2, 3})};
        for (int t = 0; t < 3; ++t) s = lstm_cell(reshape(slice(in[3], 0, t, t + 1), {2, 4}), s, p);
        return project(s.h, 13) + project(s.c, 14);
      },
      {uniform_tensor(r, {4, 12}), uniform_tensor(r, {3, 12}), uniform_tensor(r, {12}), uniform_tensor(r, {3, 2, 4})});
  EXPECT_LT(err, 1e-4);
}

TEST(Lstm, MismatchedGateShapesAreRejected) {
  LstmParams p{Tensor::zeros({3, 8}), Tensor::zeros({2, 8}), Tensor::zeros({7})};
  EXPECT_EQ(code_of([&] { lstm_cell(Tensor::zeros({3}), {Tensor::zeros({2}), Tensor::zeros({2})}, p); }),
            ErrorCode::ShapeMismatch);
}

// ------------------------------------------------------------------ 2D attention

TEST(Attention2D, WeightsFormDistributionAndGlimpseIsConvexCombination) {
  Rng r(9);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = random_attention(r, 3, 4, 5);
    const Tensor V = uniform_tensor(r, {2, 3, 2, 4}, -2, 2);
    const auto out = attention_2d(V, uniform_tensor(r, {2, 4}), p);
    for (std::int64_t b = 0; b < 2; ++b) {
      double s = 0;
      for (std::int64_t k = 0; k < 8; ++k) {
        EXPECT_GE(out.alpha[b * 8 + k], 0.0);
        s += out.alpha[b * 8 + k];
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
      for (std::int64_t d = 0; d < 3; ++d) {
        double lo = 1e9, hi = -1e9;
        for (std::int64_t k = 0; k < 8; ++k) {
          lo = std::min(lo, V[(b * 3 + d) * 8 + k]);
          hi = std::max(hi, V[(b * 3 + d) * 8 + k]);
        }
        EXPECT_GE(out.glimpse[b * 3 + d], lo - 1e-12);
        EXPECT_LE(out.glimpse[b * 3 + d], hi + 1e-12);
      }
    }
  }
}

TEST(Attention2D, ConstantMapWithoutNeighbourTermIsUniform) {
  Rng r(10);
  auto p = random_attention(r, 2, 3, 4);
  p.w_tilde = Tensor::zeros({4, 2, 3, 3});
  std::vector<double> v;
  for (int d = 0; d < 2; ++d)
    for (int k = 0; k < 6; ++k) v.push_back(d == 0 ? 0.7 : -0.4);
  const auto out = attention_2d(Tensor::from({1, 2, 2, 3}, v), uniform_tensor(r, {1, 3}), p);
  for (std::int64_t k = 0; k < 6; ++k) EXPECT_NEAR(out.alpha[k], 1.0 / 6.0, 1e-14);
  EXPECT_NEAR(out.glimpse[0], 0.7, 1e-14);
  EXPECT_NEAR(out.glimpse[1], -0.4, 1e-14);
}

TEST(Attention2D, SingleCellMapAttendsToItself) {
  Rng r(11);
  const auto p = random_attention(r, 3, 2, 4);
  const Tensor V = uniform_tensor(r, {1, 3, 1, 1});
  const auto out = attention_2d(V, uniform_tensor(r, {1, 2}), p);
  EXPECT_EQ(out.alpha[0], 1.0);
  for (int d = 0; d < 3; ++d) EXPECT_NEAR(out.glimpse[d], V[d], 1e-15);
}

TEST(Attention2D, MatchesDirectEnergySumWithZeroBorders) {
  // Independent loop evaluation of the energies: center through W_v, the
  // eight neighbours through their own bank entry, zeros past the border.
  Rng r(12);
  const std::int64_t D = 2, Hd = 3, A = 4, H = 3, W = 4;
  const auto p = random_attention(r, D, Hd, A);
  const Tensor V = uniform_tensor(r, {1, D, H, W});
  const Tensor h = uniform_tensor(r, {1, Hd});
  const auto out = attention_2d(V, h, p);

  auto v = [&](std::int64_t d, std::int64_t i, std::int64_t j) {
    if (i < 0 || j < 0 || i >= H || j >= W) return 0.0;
    return V[(d * H + i) * W + j];
  };
  std::vector<double> score(static_cast<std::size_t>(H * W));
  for (std::int64_t i = 0; i < H; ++i)
    for (std::int64_t j = 0; j < W; ++j) {
      double s = 0;
      for (std::int64_t a = 0; a < A; ++a) {
        double e = 0;
        for (std::int64_t d = 0; d < D; ++d) e += p.w_v[d * A + a] * v(d, i, j);
        for (std::int64_t k = 0; k < Hd; ++k) e += p.w_h[k * A + a] * h[k];
        for (std::int64_t di = -1; di <= 1; ++di)
          for (std::int64_t dj = -1; dj <= 1; ++dj) {
            if (di == 0 && dj == 0) continue;
            for (std::int64_t d = 0; d < D; ++d)
              e += p.w_tilde[((a * D + d) * 3 + di + 1) * 3 + dj + 1] * v(d, i + di, j + dj);
          }
        s += p.w_e[a] * std::tanh(e);
      }
      score[static_cast<std::size_t>(i * W + j)] = s;
    }
  const double mx = *std::max_element(score.begin(), score.end());
  double z = 0;
  for (double s : score) z += std::exp(s - mx);
  for (std::size_t k = 0; k < score.size(); ++k)
    EXPECT_NEAR(out.alpha[static_cast<std::int64_t>(k)], std::exp(score[k] - mx) / z, 1e-12);
}

TEST(Attention2D, GradientsPassFiniteDifferenceCheck) {
  Rng r(13);
  const double err = finite_difference_check(
      [](const std::vector<Tensor>& in) {
        Attention2DParams p{in[0], in[1], in[2], in[3]};
        const auto out = attention_2d(in[4], in[5], p);
        return project(out.glimpse, 15) + project(out.alpha, 16);
      },
      {uniform_tensor(r, {2, 3}), uniform_tensor(r, {2, 3}), uniform_tensor(r, {3, 2, 3, 3}, -0.5, 0.5),
       uniform_tensor(r, {3}), uniform_tensor(r, {2, 2, 2, 3}), uniform_tensor(r, {2, 2})});
  EXPECT_LT(err, 1e-4);
}

// ------------------------------------------------------------------ transformer

TEST(Transformer, CausalOutputIgnoresLaterTokens) {
  Rng r(14);
  const auto p = random_block(r, 8, 16);
  const Tensor mem = uniform_tensor(r, {1, 5, 8});
  Tensor x = uniform_tensor(r, {1, 6, 8});
  BlockOptions opt;
  opt.heads = 2;
  const Tensor y0 = transformer_decoder_block(x, mem, p, opt);
  for (std::int64_t t = 0; t < 6; ++t) {
    Tensor x2 = x.clone();
    auto d = x2.mutable_data();
    for (std::int64_t k = (t + 1) * 8; k < 48; ++k) d[static_cast<std::size_t>(k)] += r.uniform(-3, 3);
    const Tensor y1 = transformer_decoder_block(x2, mem, p, opt);
    for (std::int64_t s = 0; s <= t; ++s)
      for (std::int64_t k = 0; k < 8; ++k) EXPECT_EQ(y0[s * 8 + k], y1[s * 8 + k]) << "t=" << t << " s=" << s;
  }
}

TEST(Transformer, SingleTokenAndSingleMemoryKeepShape) {
  Rng r(15);
  const auto p = random_block(r, 4, 8);
  const Tensor y = transformer_decoder_block(uniform_tensor(r, {1, 4}), uniform_tensor(r, {1, 4}), p, {});
  EXPECT_EQ(y.shape(), (Shape{1, 4}));
}

TEST(Transformer, AttentionRowsSumToOne) {
  Rng r(16);
  const auto p = random_mha(r, 6);
  Tensor w;
  multi_head_attention(uniform_tensor(r, {2, 4, 6}), uniform_tensor(r, {2, 4, 6}), p, 3, true, &w);
  ASSERT_EQ(w.shape(), (Shape{6, 4, 4}));
  for (std::int64_t row = 0; row < 24; ++row) {
    double s = 0;
    for (std::int64_t k = 0; k < 4; ++k) s += w[row * 4 + k];
    EXPECT_NEAR(s, 1.0, 1e-12);
    const std::int64_t t = row % 4;
    for (std::int64_t k = t + 1; k < 4; ++k) EXPECT_EQ(w[row * 4 + k], 0.0);
  }
}

TEST(Transformer, HeadsMustDivideWidth) {
  Rng r(17);
  const auto p = random_block(r, 6, 8);
  BlockOptions opt;
  opt.heads = 4;
  EXPECT_EQ(code_of([&] { transformer_decoder_block(uniform_tensor(r, {2, 6}), uniform_tensor(r, {3, 6}), p, opt); }),
            ErrorCode::ShapeMismatch);
}

TEST(Transformer, GradientsPassFiniteDifferenceCheck) {
  Rng r(18);
  const auto p0 = random_block(r, 4, 6);
  const double err = finite_difference_check(
      [&p0](const std::vector<Tensor>& in) {
        auto p = p0;
        p.self_attn.wq = in[2];
        p.cross_attn.wv = in[3];
        p.ff_w1 = in[4];
        p.ln2.gain = in[5];
        BlockOptions opt;
        opt.heads = 2;
        return project(transformer_decoder_block(in[0], in[1], p, opt), 19);
      },
      {uniform_tensor(r, {2, 3, 4}), uniform_tensor(r, {2, 2, 4}), p0.self_attn.wq, p0.cross_attn.wv, p0.ff_w1,
       p0.ln2.gain});
  EXPECT_LT(err, 1e-4);
}

// ------------------------------------------------------------------ positions

TEST(Positions, Sin1DAtOriginAlternatesZeroOne) {
  const Tensor pe = positional_encoding(PositionKind::Sin1D, {3, 8});
  for (int k = 0; k < 8; ++k) EXPECT_EQ(pe[k], k % 2 == 0 ? 0.0 : 1.0);
}

TEST(Positions, ValuesAreBounded) {
  for (const Tensor& pe : {sinusoid_1d(60, 16), sinusoid_2d(5, 9, 12)})
    for (double v : pe.data()) {
      EXPECT_GE(v, -1.0);
      EXPECT_LE(v, 1.0);
    }
}

TEST(Positions, Sin2DRowsAreDistinct) {
  const Tensor pe = positional_encoding(PositionKind::Sin2D, {2, 2, 8});
  ASSERT_EQ(pe.shape(), (Shape{4, 8}));
  std::set<std::vector<double>> rows;
  for (int i = 0; i < 4; ++i) rows.insert(std::vector<double>(pe.data().begin() + i * 8, pe.data().begin() + i * 8 + 8));
  EXPECT_EQ(rows.size(), 4u);
  // Row (0,1): first half encodes row 0, second half column 1.
  EXPECT_EQ(pe[1 * 8 + 0], 0.0);
  EXPECT_EQ(pe[1 * 8 + 1], 1.0);
  EXPECT_NEAR(pe[1 * 8 + 4], std::sin(1.0), 1e-15);
  EXPECT_NEAR(pe[1 * 8 + 5], std::cos(1.0), 1e-15);
}

TEST(Positions, OddWidthsAreRejected) {
  EXPECT_EQ(code_of([] { sinusoid_1d(4, 7); }), ErrorCode::OddDimension);
  EXPECT_EQ(code_of([] { sinusoid_2d(2, 2, 6); }), ErrorCode::OddDimension);
}

// ------------------------------------------------------------------ cross-entropy

TEST(CrossEntropy, ConfidentCorrectLogitsGiveZeroLoss) {
  std::vector<double> lg(3 * 5, -200.0);
  const std::vector<std::int64_t> y{3, 4, 2};
  for (int t = 0; t < 3; ++t) lg[static_cast<std::size_t>(t * 5 + y[static_cast<std::size_t>(t)])] = 200.0;
  EXPECT_EQ(sequence_cross_entropy(Tensor::from({3, 5}, lg), tokens(1, 3, y)).item(), 0.0);
}

TEST(CrossEntropy, UniformLogitsGiveLogVocab) {
  const Tensor loss = sequence_cross_entropy(Tensor::zeros({2, 3, 4}), tokens(2, 3, {3, 3, 2, 1, 2, 0}));
  EXPECT_NEAR(loss.item(), std::log(4.0), 1e-14);
}

TEST(CrossEntropy, ZeroWeightsGiveZeroLoss) {
  Rng r(20);
  const Tensor w = Tensor::zeros({4});
  EXPECT_EQ(sequence_cross_entropy(uniform_tensor(r, {4, 6}, -5, 5), tokens(1, 4, {3, 5, 4, 2}), &w).item(), 0.0);
}

TEST(CrossEntropy, UnitWeightsMatchUnweightedExactly) {
  Rng r(21);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor lg = uniform_tensor(r, {3, 5, 7}, -4, 4);
    std::vector<std::int64_t> ids(15);
    for (auto& i : ids) i = static_cast<std::int64_t>(r.index(7));
    const auto y = tokens(3, 5, ids);
    const Tensor w = Tensor::ones({3, 5});
    EXPECT_EQ(sequence_cross_entropy(lg, y).item(), sequence_cross_entropy(lg, y, &w).item());
  }
}

TEST(CrossEntropy, PadStepsAreIgnored) {
  Rng r(22);
  const Tensor a = uniform_tensor(r, {1, 4, 5});
  Tensor b = a.clone();
  for (int k = 15; k < 20; ++k) b.mutable_data()[static_cast<std::size_t>(k)] = 50.0 * (k - 17);
  const auto y = tokens(1, 4, {3, 4, 2, Vocabulary::kPad});
  EXPECT_EQ(sequence_cross_entropy(a, y).item(), sequence_cross_entropy(b, y).item());

  // Average over the three kept steps only.
  const Tensor lp = log_softmax(a, 2);
  const double expect = -(lp[0 * 5 + 3] + lp[1 * 5 + 4] + lp[2 * 5 + 2]) / 3.0;
  EXPECT_NEAR(sequence_cross_entropy(a, y).item(), expect, 1e-14);
}

TEST(CrossEntropy, OutOfRangeTargetIsRejected) {
  EXPECT_EQ(code_of([] { sequence_cross_entropy(Tensor::zeros({2, 4}), tokens(1, 2, {1, 4})); }),
            ErrorCode::IndexOutOfVocab);
}

TEST(CrossEntropy, GradientsPassFiniteDifferenceCheck) {
  Rng r(23);
  const auto y = tokens(2, 3, {3, 4, 2, 5, 2, 0});
  for (double smooth : {0.0, 0.1}) {
    const double err = finite_difference_check(
        [&](const std::vector<Tensor>& in) { return sequence_cross_entropy(in[0], y, &in[1], smooth); },
        {uniform_tensor(r, {2, 3, 6}, -2, 2), uniform_tensor(r, {2, 3}, 0, 1)});
    EXPECT_LT(err, 1e-4);
  }
}

// ------------------------------------------------------------------ vocabulary and optimizer

TEST(Vocab, SpecialsAndRoundTrip) {
  const Vocabulary v("dcba");
  EXPECT_EQ(v.size(), 7);
  EXPECT_EQ(v.id('a'), 3);
  EXPECT_EQ(v.decode(v.encode("cab")), "cab");
  EXPECT_EQ(code_of([&] { v.id('z'); }), ErrorCode::IndexOutOfVocab);

  const auto tb = make_teacher_batch(v, {"ab", "c"});
  EXPECT_EQ(tb.inputs.ids, (std::vector<std::int64_t>{1, 3, 4, 1, 5, 0}));
  EXPECT_EQ(tb.targets.ids, (std::vector<std::int64_t>{3, 4, 2, 5, 2, 0}));
}

TEST(Optim, FirstAdamStepMovesByLearningRate) {
  Tensor p = Tensor::from({3}, {1.0, -2.0, 0.5});
  std::vector<Tensor> params{p};
  Adam adam({0.01});
  adam.step(params, {Tensor::from({3}, {4.0, -0.5, 0.0})});
  EXPECT_NEAR(p[0], 0.99, 1e-9);
  EXPECT_NEAR(p[1], -1.99, 1e-9);
  EXPECT_EQ(p[2], 0.5);
}

TEST(Optim, GlobalNormClipping) {
  std::vector<Tensor> g{Tensor::from({2}, {3.0, 0.0}), Tensor::from({1}, {4.0})};
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 1.0), 5.0);
  EXPECT_NEAR(global_norm(g), 1.0, 1e-15);
  EXPECT_NEAR(g[0][0], 0.6, 1e-15);
  std::vector<Tensor> small{Tensor::from({1}, {0.5})};
  clip_global_norm(small, 1.0);
  EXPECT_EQ(small[0][0], 0.5);
}
