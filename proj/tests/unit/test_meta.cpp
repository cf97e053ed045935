#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "htrlab/autodiff/gradcheck.hpp"
#include "htrlab/autodiff/ops.hpp"
#include "htrlab/autodiff/tape.hpp"
#include "htrlab/error.hpp"
#include "htrlab/io/bundle.hpp"
#include "htrlab/meta/meta.hpp"

using namespace htrlab;
using namespace htrlab::ad;
using namespace htrlab::meta;
using models::Arch;
using models::ModelConfig;

namespace {

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

ModelConfig tiny(Arch arch) {
  ModelConfig c;
  c.arch = arch;
  c.conv_channels = {4, 8};
  c.d_model = 8;
  c.heads = 2;
  c.ff_dim = 16;
  c.dropout = 0.1;
  c.max_seq_len = 8;
  c.image_height = 16;
  c.image_width = 64;
  c.loss.vocab = nn::Vocabulary("abc");
  return c;
}

const data::Dataset& corpus() {
  static const data::Dataset ds = [] {
    data::GeneratorConfig g;
    g.n_writers = 4;
    g.words_per_writer = 12;
    g.test_writers = 2;
    g.lexicon = {"ab", "ba", "cab", "abc", "ca", "bca", "acb", "cc"};
    g.seed = 3;
    return data::generate_synthetic_dataset(g);
  }();
  return ds;
}

MetaConfig small_meta(Variant v) {
  MetaConfig m;
  m.variant = v;
  m.shots = 3;
  m.ways = 2;
  m.inner_lr = 0.05;
  m.outer_lr = 1e-3;
  m.weight_features = 8;
  m.weight_hidden = 6;
  return m;
}

Batch batch_of(std::vector<std::size_t> idx) { return data::make_batch(corpus(), idx); }

std::vector<std::vector<double>> snapshot_bn(const models::Model& m) {
  std::vector<std::vector<double>> out;
  for (const auto& s : m.bn_states()) {
    out.emplace_back(s.running_mean.data().begin(), s.running_mean.data().end());
    out.emplace_back(s.running_var.data().begin(), s.running_var.data().end());
  }
  return out;
}

class Variants : public ::testing::TestWithParam<Variant> {};

}  // namespace

INSTANTIATE_TEST_SUITE_P(Meta, Variants, ::testing::Values(Variant::MAML, Variant::MAML_LLR, Variant::MetaHTR),
                         [](const auto& info) {
                           switch (info.param) {
                             case Variant::MAML: return std::string("MAML");
                             case Variant::MAML_LLR: return std::string("LLR");
                             default: return std::string("MetaHTR");
                           }
                         });

// ---- analytic bilevel quadratic ------------------------------------------
// inner 0.5 (theta - a)^2, outer 0.5 (theta' - b)^2, one step of size alpha:
// theta' = theta - alpha (theta - a), d outer / d theta = (theta' - b)(1 - alpha).

namespace {

double quadratic_meta_grad(double theta0, double a, double b, double alpha, int steps, bool first_order) {
  Tensor theta = Tensor::scalar(theta0);
  theta.set_requires_grad(true);
  std::vector<Tensor> cur{theta};
  const std::vector<Tensor> rate{Tensor::scalar(alpha)};
  for (int s = 0; s < steps; ++s) {
    const Tensor inner = 0.5 * square(cur[0] - a);
    cur = gradient_step(cur, inner, rate, !first_order);
  }
  const Tensor outer = 0.5 * square(cur[0] - b);
  return gradients(outer, {theta})[0].item();
}

}  // namespace

TEST(Quadratic, SecondOrderAndFirstOrderClosedForms) {
  EXPECT_NEAR(quadratic_meta_grad(0.0, 1.0, 0.0, 0.5, 1, false), 0.25, 1e-12);
  EXPECT_NEAR(quadratic_meta_grad(0.0, 1.0, 0.0, 0.5, 1, true), 0.5, 1e-12);
}

TEST(Quadratic, BatteryOverRatesStartsAndSteps) {
  for (double alpha : {0.0, 0.1, 0.3, 0.9})
    for (double theta0 : {-1.5, 0.0, 2.0})
      for (int steps : {1, 2, 3}) {
        const double a = 0.7, b = -0.4;
        double th = theta0;
        for (int s = 0; s < steps; ++s) th -= alpha * (th - a);
        const double full = (th - b) * std::pow(1.0 - alpha, steps);
        EXPECT_NEAR(quadratic_meta_grad(theta0, a, b, alpha, steps, false), full, 1e-10);
        EXPECT_NEAR(quadratic_meta_grad(theta0, a, b, alpha, steps, true), th - b, 1e-10);
      }
}

TEST(Quadratic, LearnedRateReceivesItsGradient) {
  // d outer / d alpha = (theta' - b) * -(theta - a), through softplus.
  Tensor theta = Tensor::scalar(0.0), raw = Tensor::scalar(std::log(std::expm1(0.5)));
  theta.set_requires_grad(true);
  raw.set_requires_grad(true);
  const std::vector<Tensor> rate{softplus(raw)};
  const auto next = gradient_step(std::vector<Tensor>{theta}, 0.5 * square(theta - 1.0), rate, true);
  const auto g = gradients(0.5 * square(next[0]), {theta, raw});
  const double sig = 1.0 / (1.0 + std::exp(-raw.item()));
  EXPECT_NEAR(g[0].item(), 0.25, 1e-12);
  EXPECT_NEAR(g[1].item(), 0.5 * 1.0 * sig, 1e-12);
}

// ---- episodes ----------------------------------------------------------------

TEST(Episodes, TestModeSplitsSupportAndRest) {
  data::GeneratorConfig g;
  g.n_writers = 2;
  g.words_per_writer = 40;
  g.height = 8;
  g.width = 16;
  g.lexicon = {"ab"};
  const auto ds = data::generate_synthetic_dataset(g);
  Rng rng(1), same(1);
  const auto e = sample_episode(ds, "w000", 16, rng, EpisodeMode::Test);
  EXPECT_EQ(e.support.size(), 16u);
  EXPECT_EQ(e.query.size(), 24u);
  std::set<std::size_t> all(e.support.begin(), e.support.end());
  all.insert(e.query.begin(), e.query.end());
  EXPECT_EQ(all.size(), 40u);
  for (auto i : all) EXPECT_EQ(ds.samples[i].writer, "w000");
  const auto again = sample_episode(ds, "w000", 16, same, EpisodeMode::Test);
  EXPECT_EQ(again.support, e.support);
  EXPECT_EQ(again.query, e.query);

  const auto t = sample_episode(ds, "w001", 16, rng, EpisodeMode::Train);
  EXPECT_EQ(t.support.size(), 16u);
  EXPECT_EQ(t.query.size(), 16u);

  EXPECT_EQ(code_of([&] { sample_episode(ds, "w000", 40, rng, EpisodeMode::Test); }),
            ErrorCode::InsufficientSamples);
  EXPECT_EQ(code_of([&] { sample_episode(ds, "w000", 21, rng, EpisodeMode::Train); }),
            ErrorCode::InsufficientSamples);
  EXPECT_EQ(code_of([&] { sample_episode(ds, "nobody", 2, rng, EpisodeMode::Test); }), ErrorCode::UnknownWriter);
}

TEST(Episodes, SixteenSamplesLeaveNoQuery) {
  data::GeneratorConfig g;
  g.n_writers = 1;
  g.words_per_writer = 16;
  g.height = 8;
  g.width = 16;
  g.lexicon = {"ab"};
  const auto ds = data::generate_synthetic_dataset(g);
  Rng rng(0);
  EXPECT_EQ(code_of([&] { sample_episode(ds, "w000", 16, rng, EpisodeMode::Test); }),
            ErrorCode::InsufficientSamples);
}

// ---- inner loop ----------------------------------------------------------------

TEST_P(Variants, ZeroRateLeavesParametersExactlyUnchanged) {
  auto cfg = small_meta(GetParam());
  cfg.inner_lr = 0.0;
  MetaLearner l(models::build_model(tiny(Arch::FPHTRLite), 1), cfg, 2);
  const Batch s = batch_of({0, 1, 2});
  const auto a = l.adapt(s);
  ASSERT_EQ(a.params.size(), l.model().params().size());
  for (std::size_t i = 0; i < a.params.size(); ++i)
    EXPECT_TRUE(std::equal(a.params[i].data().begin(), a.params[i].data().end(),
                           l.model().params()[i].data().begin()))
        << a.names[i];
}

TEST_P(Variants, AdaptationNeverTouchesStoredParametersOrBnStatistics) {
  auto c = tiny(Arch::FPHTRLite);
  auto m = models::build_model(c, 4);
  // Non-trivial running statistics.
  for (auto& s : m.bn_states()) {
    for (double& v : s.running_mean.mutable_data()) v = 0.1;
    for (double& v : s.running_var.mutable_data()) v = 1.7;
  }
  MetaLearner l(std::move(m), small_meta(GetParam()), 5);
  const auto before = io::checksum(l.model().params());
  const auto bn = snapshot_bn(l.model());
  for (int k = 0; k < 3; ++k) {
    l.adapt(batch_of({0, 1, 2}));
    inner_adapt(l.model(), l.model().params(), batch_of({3, 4, 5}), l.config(), l.rates(), l.weight_net(), true);
  }
  EXPECT_EQ(io::checksum(l.model().params()), before);
  EXPECT_EQ(snapshot_bn(l.model()), bn);
  l.step(corpus(), corpus().writers(data::Split::Train));
  EXPECT_EQ(snapshot_bn(l.model()), bn);
  EXPECT_NE(io::checksum(l.model().params()), before);
}

TEST(InnerLoop, VariantAndHelperMismatchesAreConfigErrors) {
  auto m = models::build_model(tiny(Arch::FPHTRLite), 1);
  const Batch s = batch_of({0, 1});
  LayerLearningRates lrs(m, 0.1);
  auto cfg = small_meta(Variant::MAML);
  EXPECT_EQ(code_of([&] { inner_adapt(m, m.params(), s, cfg, &lrs, nullptr, false); }), ErrorCode::InvalidConfig);
  cfg.variant = Variant::MetaHTR;
  EXPECT_EQ(code_of([&] { inner_adapt(m, m.params(), s, cfg, &lrs, nullptr, false); }), ErrorCode::InvalidConfig);
}

TEST(InnerLoop, UnitWeightsReproduceTheUnweightedLossExactly) {
  for (Arch arch : {Arch::SARLite, Arch::FPHTRLite}) {
    auto m = models::build_model(tiny(arch), 2);
    const Batch s = batch_of({0, 5, 9, 13});
    const auto tb = nn::make_teacher_batch(m.config().loss.vocab, s.texts);
    const Tensor ones = Tensor::ones({tb.targets.batch, tb.targets.length});
    EXPECT_EQ(support_loss(m, m.params(), s, &ones).item(), support_loss(m, m.params(), s, nullptr).item());
  }
}

TEST(InnerLoop, LayerRatesAreSoftplusOfRawValues) {
  auto m = models::build_model(tiny(Arch::SARLite), 2);
  LayerLearningRates lrs(m, 0.01);
  ASSERT_EQ(lrs.size(), m.params().size());
  for (double v : lrs.values()) EXPECT_NEAR(v, 0.01, 1e-15);
  LayerLearningRates zero(m, 0.0);
  for (double v : zero.values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(lrs.names(), m.names());
}

// The step-gradient features must match autodiff gradients of the individual
// per-character losses with respect to the classifier, pushed through the
// same projection.
TEST(InstanceWeights, FeaturesMatchClassifierGradients) {
  for (Arch arch : {Arch::SARLite, Arch::FPHTRLite}) {
    auto c = tiny(arch);
    c.dropout = 0.0;
    auto m = models::build_model(c, 6);
    InstanceWeightNet iw(m, 5, 4, 9);
    const Batch s = batch_of({1, 2, 7});
    const auto tb = nn::make_teacher_batch(c.loss.vocab, s.texts);
    const auto r = models::forward(m, m.params(), s.images, tb.inputs);
    const Tensor feats = iw.features(r.logits, r.features, tb.targets, 0.0);

    const auto idx = m.classifier_indices();
    const std::vector<Tensor> phi{m.params()[idx[0]], m.params()[idx[1]]};
    auto flat_grad = [&](const Tensor& loss) {
      const auto g = gradients(loss, phi);
      std::vector<double> out(g[0].data().begin(), g[0].data().end());
      out.insert(out.end(), g[1].data().begin(), g[1].data().end());
      return out;
    };
    const std::int64_t N = tb.targets.batch, T = tb.targets.length, V = c.loss.vocab.size();
    const std::int64_t D = static_cast<std::int64_t>(flat_grad(sum(r.logits)).size());
    ASSERT_EQ(iw.raw_width(), 2 * D);
    const auto whole = flat_grad(nn::sequence_cross_entropy(r.logits, tb.targets));
    const Tensor logp = log_softmax(r.logits, 2);
    const double* P = iw.projection().ptr();
    for (std::int64_t b = 0; b < N; ++b)
      for (std::int64_t t = 0; t < T; ++t) {
        const auto y = tb.targets.at(b, t);
        if (y == nn::Vocabulary::kPad) continue;
        const Tensor term = neg(reshape(slice(slice(slice(logp, 0, b, b + 1), 1, t, t + 1), 2, y, y + 1), {}));
        const auto g = flat_grad(term);
        for (std::int64_t k = 0; k < 5; ++k) {
          double expect = 0.0;
          for (std::int64_t j = 0; j < D; ++j) expect += g[j] * P[j * 5 + k] + whole[j] * P[(D + j) * 5 + k];
          EXPECT_NEAR(feats[(b * T + t) * 5 + k], expect, 1e-10);
        }
      }
    (void)V;
  }
}

TEST(InstanceWeights, WeightsLieInUnitIntervalAndDependOnPsi) {
  auto m = models::build_model(tiny(Arch::FPHTRLite), 6);
  InstanceWeightNet iw(m, 8, 6, 1);
  const Batch s = batch_of({0, 1, 2, 3});
  const auto tb = nn::make_teacher_batch(m.config().loss.vocab, s.texts);
  const auto r = models::forward(m, m.params(), s.images, tb.inputs);
  const Tensor w = iw.weights(r.logits, r.features, tb.targets, 0.0);
  EXPECT_EQ(w.shape(), (Shape{tb.targets.batch, tb.targets.length}));
  for (double v : w.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  const auto g = gradients(sum(w), iw.params());
  EXPECT_FALSE(g.any_disconnected());
  const auto theta_g = gradients(sum(w), m.params());
  EXPECT_TRUE(theta_g.disconnected[0]);  // features are constants for theta
}

// ---- outer loop ----------------------------------------------------------------

TEST_P(Variants, MetaGradientMatchesFiniteDifferences) {
  auto c = tiny(Arch::FPHTRLite);
  c.dropout = 0.0;
  auto cfg = small_meta(GetParam());
  cfg.outer_dropout = false;
  cfg.augment = data::AugmentConfig::identity();
  cfg.inner_lr = 0.3;
  MetaLearner l(models::build_model(c, 8), cfg, 3);
  // Blank background convolves to exactly zero, so zero BN biases would sit
  // on the ReLU kink where central differences are meaningless.
  for (std::size_t i = 0; i < l.model().names().size(); ++i)
    if (l.model().names()[i].find(".bn") != std::string::npos && l.model().names()[i].ends_with(".bias"))
      for (double& v : l.model().params()[i].mutable_data()) v = 0.1;
  const Batch s = batch_of({0, 1, 2}), q = batch_of({3, 4, 5});

  // The instance-weight features are constants with respect to theta by
  // design, so for MetaHTR theta is held fixed and only the rates and psi
  // are perturbed.
  const bool hold_theta = GetParam() == Variant::MetaHTR;
  const std::size_t n_theta = hold_theta ? 0 : l.model().params().size();
  const std::size_t n_rates = l.rates() ? l.rates()->size() : 0;
  std::vector<Tensor> inputs;
  const auto all = l.meta_parameters();
  for (std::size_t i = hold_theta ? l.model().params().size() : 0; i < all.size(); ++i)
    inputs.push_back(all[i]->clone().set_requires_grad(true));

  auto outer = [&](const std::vector<Tensor>& in) {
    std::vector<Tensor> theta = hold_theta ? l.model().params()
                                           : std::vector<Tensor>(in.begin(), in.begin() + static_cast<std::ptrdiff_t>(n_theta));
    LayerLearningRates lrs;
    InstanceWeightNet iw;
    if (l.rates()) {
      lrs = *l.rates();
      std::copy(in.begin() + static_cast<std::ptrdiff_t>(n_theta),
                in.begin() + static_cast<std::ptrdiff_t>(n_theta + n_rates), lrs.raw().begin());
    }
    if (l.weight_net()) {
      iw = *l.weight_net();
      std::copy(in.begin() + static_cast<std::ptrdiff_t>(n_theta + n_rates), in.end(), iw.params().begin());
    }
    const auto a = inner_adapt(l.model(), theta, s, cfg, l.rates() ? &lrs : nullptr,
                               l.weight_net() ? &iw : nullptr, true);
    return support_loss(l.model(), a.params, q, nullptr);
  };
  GradCheckOptions o;
  o.eps = 1e-5;
  o.max_coords = 3;
  o.record_evaluations = true;
  EXPECT_LT(finite_difference_check(outer, inputs, o), 1e-5);
}

TEST(OuterLoop, SecondOrderDiffersFromFirstOrder) {
  auto c = tiny(Arch::SARLite);
  c.dropout = 0.0;
  auto cfg = small_meta(Variant::MAML);
  cfg.outer_dropout = false;
  cfg.augment = data::AugmentConfig::identity();
  cfg.inner_lr = 0.5;
  const std::vector<Episode> eps{{"w000", {0, 1, 2}, {3, 4, 5}}};
  MetaLearner full(models::build_model(c, 1), cfg, 1);
  cfg.first_order = true;
  MetaLearner first(models::build_model(c, 1), cfg, 1);
  Rng r1(0), r2(0);
  const auto [l1, g1] = full.meta_gradient(corpus(), eps, r1);
  const auto [l2, g2] = first.meta_gradient(corpus(), eps, r2);
  EXPECT_EQ(l1, l2);
  double diff = 0.0;
  for (std::size_t i = 0; i < g1.size(); ++i)
    for (std::int64_t k = 0; k < g1[i].numel(); ++k) diff = std::max(diff, std::abs(g1[i][k] - g2[i][k]));
  EXPECT_GT(diff, 1e-8);
}

TEST(OuterLoop, EpisodeOrderDoesNotMatter) {
  auto c = tiny(Arch::FPHTRLite);
  auto cfg = small_meta(Variant::MetaHTR);
  cfg.outer_dropout = false;
  cfg.augment = data::AugmentConfig::identity();
  MetaLearner l(models::build_model(c, 1), cfg, 1);
  std::vector<Episode> eps{{"w000", {0, 1, 2}, {3, 4, 5}}, {"w001", {12, 13, 14}, {15, 16, 17}}};
  Rng r(0);
  const auto [la, ga] = l.meta_gradient(corpus(), eps, r);
  std::reverse(eps.begin(), eps.end());
  const auto [lb, gb] = l.meta_gradient(corpus(), eps, r);
  EXPECT_NEAR(la, lb, 1e-12 * std::abs(la));
  for (std::size_t i = 0; i < ga.size(); ++i)
    for (std::int64_t k = 0; k < ga[i].numel(); ++k)
      EXPECT_NEAR(ga[i][k], gb[i][k], 1e-9 * (std::abs(ga[i][k]) + 1e-12));
}

TEST(OuterLoop, SingleEpisodeGradientIsThatEpisodesGradient) {
  auto c = tiny(Arch::FPHTRLite);
  c.dropout = 0.0;
  auto cfg = small_meta(Variant::MAML);
  cfg.outer_dropout = false;
  cfg.augment = data::AugmentConfig::identity();
  MetaLearner l(models::build_model(c, 2), cfg, 1);
  Rng r(0);
  const auto [loss, g] = l.meta_gradient(corpus(), {{"w001", {12, 13, 14}, {15, 16, 17}}}, r);
  const auto a = inner_adapt(l.model(), l.model().params(), batch_of({12, 13, 14}), cfg, nullptr, nullptr, true);
  const Tensor q = support_loss(l.model(), a.params, batch_of({15, 16, 17}), nullptr);
  const auto direct = gradients(q, l.model().params());
  EXPECT_EQ(loss, q.item());
  for (std::size_t i = 0; i < direct.size(); ++i)
    for (std::int64_t k = 0; k < direct[i].numel(); ++k) EXPECT_EQ(g[i][k], direct[i][k]);
}

TEST(OuterLoop, StepIsDeterministicAndCheckpointResumesExactly) {
  const auto path = std::filesystem::temp_directory_path() / "htrlab_meta_ckpt.bin";
  const auto writers = corpus().writers(data::Split::Train);
  MetaLearner a(models::build_model(tiny(Arch::FPHTRLite), 3), small_meta(Variant::MetaHTR), 4);
  MetaLearner b(models::build_model(tiny(Arch::FPHTRLite), 3), small_meta(Variant::MetaHTR), 4);
  const auto ra = a.step(corpus(), writers);
  const auto rb = b.step(corpus(), writers);
  EXPECT_EQ(ra.outer_loss, rb.outer_loss);
  EXPECT_FALSE(ra.skipped);
  EXPECT_EQ(ra.writers.size(), 2u);

  a.save(path);
  MetaLearner c = MetaLearner::load(path);
  const auto r2a = a.step(corpus(), writers);
  const auto r2c = c.step(corpus(), writers);
  EXPECT_EQ(r2a.outer_loss, r2c.outer_loss);
  std::vector<Tensor> pa, pc;
  for (Tensor* p : a.meta_parameters()) pa.push_back(*p);
  for (Tensor* p : c.meta_parameters()) pc.push_back(*p);
  EXPECT_EQ(io::checksum(pa), io::checksum(pc));
}

TEST(OuterLoop, TooFewEligibleWritersIsReported) {
  auto cfg = small_meta(Variant::MAML);
  cfg.shots = 7;  // 14 samples needed, writers have 12
  MetaLearner l(models::build_model(tiny(Arch::FPHTRLite), 3), cfg, 4);
  EXPECT_EQ(code_of([&] { l.step(corpus(), corpus().writers(data::Split::Train)); }),
            ErrorCode::InsufficientSamples);
}

TEST(OuterLoop, ConfigRoundTripsThroughKeyValues) {
  auto cfg = small_meta(Variant::MAML_LLR);
  cfg.first_order = true;
  cfg.augment.noise_max = 0.125;
  const auto back = MetaConfig::from_kv(cfg.to_kv());
  EXPECT_EQ(back.to_kv(), cfg.to_kv());
  EXPECT_EQ(code_of([] { MetaConfig::from_kv({{"variant", "reptile"}}); }), ErrorCode::InvalidConfig);
  cfg.shots = 0;
  EXPECT_EQ(code_of([&] { cfg.validate(); }), ErrorCode::InvalidConfig);
}

// ---- baseline and evaluation ---------------------------------------------------

TEST(Finetune, OnlyClassifierMovesAndLossDoesNotRise) {
  auto c = tiny(Arch::FPHTRLite);
  auto m = models::build_model(c, 5);
  const Batch s = batch_of({0, 1, 2, 3});
  const auto idx = m.classifier_indices();
  const auto before = io::checksum(m.params());
  const auto a = finetune_baseline(m, s, 3, 1e-2);
  EXPECT_EQ(io::checksum(m.params()), before);
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    const bool cls = std::find(idx.begin(), idx.end(), i) != idx.end();
    const bool same = std::equal(a.params[i].data().begin(), a.params[i].data().end(), m.params()[i].data().begin());
    EXPECT_EQ(same, !cls) << a.names[i];
  }
  const auto none = finetune_baseline(m, s, 0);
  EXPECT_EQ(io::checksum(none.params), before);

  double prev = support_loss(m, m.params(), s, nullptr).item();
  for (int steps = 1; steps <= 3; ++steps) {
    const double cur = support_loss(m, finetune_baseline(m, s, steps, 1e-2).params, s, nullptr).item();
    EXPECT_LE(cur, prev + 1e-12);
    prev = cur;
  }
}

TEST(Protocol, ZeroRateCheckpointGivesIdenticalConditions) {
  auto cfg = small_meta(Variant::MAML_LLR);
  cfg.inner_lr = 0.0;
  MetaLearner l(models::build_model(tiny(Arch::FPHTRLite), 5), cfg, 1);
  const auto r = evaluate_adaptation_premise(l, corpus(), data::Split::Test, 3, 9, "llr");
  EXPECT_EQ(r.with_adaptation.rows.size(), corpus().writers(data::Split::Test).size());
  EXPECT_EQ(r.paired.with_wer.size() + r.paired.without_wer.size(), 2 * r.with_adaptation.rows.size());
  EXPECT_EQ(r.paired.delta(), 0.0);
  for (std::size_t i = 0; i < r.with_adaptation.rows.size(); ++i)
    EXPECT_EQ(r.with_adaptation.rows[i].counts, r.without_adaptation.rows[i].counts);
}

TEST(Protocol, AdaptationIsRepeatableAndSplitsAreShared) {
  MetaLearner l(models::build_model(tiny(Arch::SARLite), 5), small_meta(Variant::MAML), 1);
  const Batch s = batch_of({36, 37, 38});
  const auto a = l.adapt(s), b = l.adapt(s);
  EXPECT_EQ(io::checksum(a.params), io::checksum(b.params));

  std::vector<std::vector<std::string>> seen_a, seen_b;
  auto recorder = [&](std::vector<std::vector<std::string>>& seen) {
    return [&](const Batch& sup, const Episode&) {
      seen.push_back(sup.texts);
      return Adaptation{l.model().params(), {}};
    };
  };
  const auto ra = evaluate_protocol(l.model(), corpus(), data::Split::Test, 3, 4, 2, "a", recorder(seen_a));
  const auto rb = evaluate_protocol(l.model(), corpus(), data::Split::Test, 3, 4, 2, "b", recorder(seen_b));
  EXPECT_EQ(seen_a, seen_b);
  EXPECT_EQ(ra.rows, rb.rows);
  EXPECT_EQ(ra.rows[0].runs, 4);
  EXPECT_EQ(ra.rows[0].n_query, 9);
}
