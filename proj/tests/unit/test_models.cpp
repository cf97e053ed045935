#include <gtest/gtest.h>

#include <filesystem>

#include "htrlab/autodiff/gradcheck.hpp"
#include "htrlab/autodiff/ops.hpp"
#include "htrlab/autodiff/tape.hpp"
#include "htrlab/error.hpp"
#include "htrlab/io/bundle.hpp"
#include "htrlab/models/model.hpp"
#include "support/random_tensors.hpp"

using namespace htrlab;
using namespace htrlab::ad;
using namespace htrlab::models;
using htrlab::testing::uniform_tensor;

namespace {

ModelConfig small_config(Arch arch) {
  ModelConfig c;
  c.arch = arch;
  c.conv_channels = {4, 8};
  c.d_model = 8;
  c.heads = 2;
  c.ff_dim = 16;
  c.dropout = 0.0;
  c.image_height = 16;
  c.image_width = 32;
  c.loss.vocab = nn::Vocabulary("abc");
  return c;
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

nn::TokenBatch sos_only(std::int64_t n) { return {n, 1, std::vector<std::int64_t>(static_cast<std::size_t>(n), 1)}; }

class BothArchs : public ::testing::TestWithParam<Arch> {};

}  // namespace

INSTANTIATE_TEST_SUITE_P(Models, BothArchs, ::testing::Values(Arch::SARLite, Arch::FPHTRLite),
                         [](const auto& info) { return info.param == Arch::SARLite ? "SAR" : "FPHTR"; });

TEST_P(BothArchs, SameSeedGivesIdenticalParameters) {
  const auto c = small_config(GetParam());
  const Model a = build_model(c, 7), b = build_model(c, 7), other = build_model(c, 8);
  EXPECT_EQ(io::checksum(a.params()), io::checksum(b.params()));
  EXPECT_NE(io::checksum(a.params()), io::checksum(other.params()));
  EXPECT_EQ(a.names(), b.names());
}

TEST_P(BothArchs, SosOnlyInputGivesOneStepOfLogits) {
  auto c = small_config(GetParam());
  Model m = build_model(c, 1);
  Rng r(2);
  const Tensor logits = forward_teacher_forcing(m, uniform_tensor(r, {1, 1, 16, 32}, 0, 1), sos_only(1), false);
  EXPECT_EQ(logits.shape(), (Shape{1, 1, c.loss.vocab.size()}));
}

TEST_P(BothArchs, EvaluationForwardIsDeterministic) {
  auto c = small_config(GetParam());
  c.dropout = 0.3;
  Model m = build_model(c, 3);
  Rng r(4);
  const Tensor x = uniform_tensor(r, {2, 1, 16, 32}, 0, 1);
  const auto tb = nn::make_teacher_batch(c.loss.vocab, {"abc", "ca"});
  const Tensor a = forward_teacher_forcing(m, x, tb.inputs, false);
  const Tensor b = forward_teacher_forcing(m, x, tb.inputs, false);
  for (std::int64_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a[i], b[i]);
}

TEST_P(BothArchs, LossGradientsPassFiniteDifferenceCheck) {
  auto c = small_config(GetParam());
  Model m = build_model(c, 5);
  Rng r(6);
  const Tensor x = uniform_tensor(r, {2, 1, 16, 32}, 0, 1);
  const std::vector<std::string> texts{"ab", "cba"};
  for (auto mode : {nn::StatsMode::BatchStats, nn::StatsMode::RunningStats}) {
    m.set_bn_mode(mode);
    GradCheckOptions opts;
    opts.max_coords = 6;
    const double err = finite_difference_check(
        [&](const std::vector<Tensor>& ps) { return batch_loss(m, ps, x, texts); },
        std::vector<Tensor>(m.params().begin(), m.params().end()), opts);
    EXPECT_LT(err, 1e-4);
  }
}

TEST_P(BothArchs, TooLongInputIsRejected) {
  auto c = small_config(GetParam());
  c.max_seq_len = 3;
  Model m = build_model(c, 1);
  const auto tb = nn::make_teacher_batch(c.loss.vocab, {"abc"});
  EXPECT_EQ(code_of([&] { forward_teacher_forcing(m, Tensor::zeros({1, 1, 16, 32}), tb.inputs, false); }),
            ErrorCode::SequenceTooLong);
}

TEST_P(BothArchs, ForcedEndTokenDecodesToEmptyString) {
  auto c = small_config(GetParam());
  Model m = build_model(c, 9);
  auto& bias = m.params()[m.index_of("decoder.out.bias")];
  bias.mutable_data()[nn::Vocabulary::kEos] = 1e6;
  const auto out = decode_greedy(m, Tensor::zeros({3, 1, 16, 32}));
  EXPECT_EQ(out, (std::vector<std::string>{"", "", ""}));
}

TEST_P(BothArchs, DecodeIsBoundedAndIdempotent) {
  auto c = small_config(GetParam());
  c.max_seq_len = 6;
  Model m = build_model(c, 10);
  // A head that never emits EOS runs into the length cap.
  m.params()[m.index_of("decoder.out.bias")].mutable_data()[3] = 1e6;
  Rng r(11);
  const Tensor x = uniform_tensor(r, {2, 1, 16, 32}, 0, 1);
  const auto a = decode_greedy(m, x);
  EXPECT_EQ(a, decode_greedy(m, x));
  for (const auto& s : a) EXPECT_EQ(s, "aaaaa");

  Model fresh = build_model(small_config(GetParam()), 12);
  for (const auto& s : decode_greedy(fresh, x)) EXPECT_LE(static_cast<std::int64_t>(s.size()), 54);
}

TEST_P(BothArchs, ParameterTableSumsExactly) {
  const auto c = small_config(GetParam());
  const Model m = build_model(c, 1);
  const auto t = count_parameters(m);
  std::int64_t by_tensor = 0, by_module = 0, by_part = 0;
  for (const auto& [k, v] : t.tensors) by_tensor += v;
  for (const auto& [k, v] : t.modules) by_module += v;
  for (const auto& [k, v] : t.parts) by_part += v;
  EXPECT_EQ(by_tensor, t.total);
  EXPECT_EQ(by_module, t.total);
  EXPECT_EQ(by_part, t.total);
  ASSERT_EQ(t.parts.size(), 3u);
  EXPECT_EQ(t.parts[0].first, "backbone");
  EXPECT_EQ(t.parts[1].first, "encoder");
  EXPECT_EQ(t.parts[2].first, "decoder");

  const std::int64_t in = GetParam() == Arch::SARLite ? c.d_model + c.conv_channels.back() : c.d_model;
  const std::int64_t V = c.loss.vocab.size();
  for (const auto& [k, v] : t.modules)
    if (k == "decoder.out") EXPECT_EQ(v, in * V + V);
}

TEST_P(BothArchs, OverfitsTwoSamplesAndDecodesThem) {
  auto c = small_config(GetParam());
  c.d_model = 16;
  c.ff_dim = 32;
  Model m = build_model(c, 21);
  Rng r(22);
  const Tensor x = uniform_tensor(r, {2, 1, 16, 32}, 0, 1);
  const std::vector<std::string> texts{"abca", "cb"};
  nn::Adam adam({3e-3});
  Rng drop(0);
  const double first = train_step(m, adam, x, texts, drop);
  double last = first;
  for (int step = 1; step < 500; ++step) last = train_step(m, adam, x, texts, drop);
  EXPECT_LT(last, 0.1 * first) << "first " << first << " last " << last;
  EXPECT_EQ(decode_greedy(m, x), texts);
}

TEST_P(BothArchs, CheckpointRoundTripIsBitExact) {
  auto c = small_config(GetParam());
  Model m = build_model(c, 31);
  Rng r(32);
  nn::Adam adam;
  Rng drop(1);
  train_step(m, adam, uniform_tensor(r, {2, 1, 16, 32}, 0, 1), {"ab", "c"}, drop);
  const auto path = std::filesystem::temp_directory_path() / ("htrlab_model_" + to_string(c.arch) + ".bin");
  save_model(path, m, "state-token");
  std::string rng_state;
  Model back = load_model(path, &rng_state);
  EXPECT_EQ(rng_state, "state-token");
  EXPECT_EQ(back.config(), m.config());
  EXPECT_EQ(back.names(), m.names());
  EXPECT_EQ(io::checksum(back.params()), io::checksum(m.params()));
  for (std::size_t i = 0; i < m.bn_states().size(); ++i) {
    EXPECT_EQ(io::checksum({back.bn_states()[i].running_mean, back.bn_states()[i].running_var}),
              io::checksum({m.bn_states()[i].running_mean, m.bn_states()[i].running_var}));
  }
  std::filesystem::remove(path);
}

TEST_P(BothArchs, TrainStepRestoresStatsModeAndUpdatesRunningValues) {
  auto c = small_config(GetParam());
  Model m = build_model(c, 41);
  Rng r(42);
  nn::Adam adam;
  Rng drop(1);
  const auto before = io::checksum({m.bn_states()[0].running_mean});
  train_step(m, adam, uniform_tensor(r, {2, 1, 16, 32}, 0, 1), {"ab", "c"}, drop);
  EXPECT_NE(io::checksum({m.bn_states()[0].running_mean}), before);
  for (const auto& s : m.bn_states()) EXPECT_EQ(s.stats_mode, nn::StatsMode::RunningStats);
}

TEST_P(BothArchs, CloneIsIndependent) {
  Model m = build_model(small_config(GetParam()), 51);
  Model c = m.clone();
  const auto sum0 = io::checksum(m.params());
  c.params()[0].mutable_data()[0] += 1.0;
  EXPECT_EQ(io::checksum(m.params()), sum0);
  EXPECT_TRUE(c.params()[0].requires_grad());
}

TEST(Models, FphtrLogitsIgnoreLaterTargets) {
  auto c = small_config(Arch::FPHTRLite);
  Model m = build_model(c, 61);
  Rng r(62);
  const Tensor x = uniform_tensor(r, {1, 1, 16, 32}, 0, 1);
  nn::TokenBatch in{1, 6, {1, 3, 4, 5, 3, 4}};
  const Tensor base = forward_teacher_forcing(m, x, in, false);
  const std::int64_t V = c.loss.vocab.size();
  for (std::int64_t t = 1; t < 6; ++t) {
    auto changed = in;
    changed.ids[static_cast<std::size_t>(t)] = changed.ids[static_cast<std::size_t>(t)] == 5 ? 3 : 5;
    const Tensor y = forward_teacher_forcing(m, x, changed, false);
    for (std::int64_t s = 0; s < t; ++s)
      for (std::int64_t v = 0; v < V; ++v) ASSERT_EQ(y[s * V + v], base[s * V + v]) << "t=" << t;
    bool moved = false;
    for (std::int64_t v = 0; v < V; ++v) moved = moved || y[t * V + v] != base[t * V + v];
    EXPECT_TRUE(moved);
  }
}

TEST(Models, SarBuildsAtWidth32AndReportsCount) {
  auto c = small_config(Arch::SARLite);
  c.conv_channels = {8, 16, 32};
  c.d_model = 32;
  c.image_width = 64;
  c.loss.vocab = nn::Vocabulary::lowercase_latin();
  const Model m = build_model(c, 1);
  std::int64_t manual = 0;
  for (const auto& p : m.params()) manual += p.numel();
  EXPECT_EQ(count_parameters(m).total, manual);
  EXPECT_GT(manual, 0);
}

TEST(Models, HeadsMustDivideWidth) {
  auto c = small_config(Arch::FPHTRLite);
  c.d_model = 32;
  c.heads = 3;
  EXPECT_EQ(code_of([&] { build_model(c, 1); }), ErrorCode::InvalidConfig);
  c.heads = 4;
  EXPECT_NO_THROW(build_model(c, 1));
}

TEST(Models, ConfigRoundTripsThroughKeyValues) {
  auto c = small_config(Arch::SARLite);
  c.dropout = 0.125;
  c.loss.label_smoothing = 0.05;
  EXPECT_EQ(ModelConfig::from_kv(c.to_kv()), c);
  EXPECT_EQ(code_of([] { ModelConfig::from_kv({{"d_model", "wide"}}); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([] { ModelConfig::from_kv({{"arch", "resnet"}}); }), ErrorCode::InvalidConfig);
}

TEST(Models, CheckpointFromAnotherArchitectureIsRejected) {
  const auto path = std::filesystem::temp_directory_path() / "htrlab_model_mismatch.bin";
  const Model m = build_model(small_config(Arch::FPHTRLite), 1);
  save_model(path, m);
  auto b = io::read_bundle(path);
  b.arrays[0].shape = {1, 2, 3};
  b.arrays[0].values.assign(6, 0.0);
  io::write_bundle(path, b);
  EXPECT_EQ(code_of([&] { load_model(path); }), ErrorCode::CheckpointMismatch);
  std::filesystem::remove(path);
}
