#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "htrlab/data/dataset.hpp"
#include "htrlab/eval/report.hpp"
#include "htrlab/models/model.hpp"
#include "htrlab/nn/optim.hpp"
#include "htrlab/rng.hpp"

namespace htrlab::meta {

using ad::Tensor;
using data::Batch;
using models::Model;

enum class Variant { MAML, MAML_LLR, MetaHTR };

std::string to_string(Variant v);
/// "maml", "maml-llr", "metahtr"; InvalidConfig otherwise.
Variant variant_from_string(const std::string& s);

struct MetaConfig {
  std::int64_t shots = 16;  // K
  std::int64_t ways = 8;    // N, episodes per outer step
  std::int64_t inner_steps = 1;
  /// Scalar inner rate for MAML; initial per-layer rate otherwise.
  double inner_lr = 1e-4;
  double outer_lr = 3e-5;
  Variant variant = Variant::MAML;
  double max_grad_norm = 5.0;
  bool outer_dropout = true;
  /// Drop second-order terms: inner gradients are treated as constants.
  bool first_order = false;
  /// Width of the fixed projection applied to instance-weight features.
  std::int64_t weight_features = 64;
  std::int64_t weight_hidden = 128;
  data::AugmentConfig augment;

  /// InvalidConfig on K, N or inner_steps < 1, or a non-positive outer
  /// rate. A zero inner rate is allowed (it disables adaptation).
  void validate() const;
  std::map<std::string, std::string> to_kv() const;
  static MetaConfig from_kv(const std::map<std::string, std::string>& kv);
};

struct Episode {
  std::string writer;
  std::vector<std::size_t> support;  // dataset indices
  std::vector<std::size_t> query;
};

enum class EpisodeMode {
  Train,  // 2K samples split K/K
  Test,   // K support, every other sample of the writer as query
};

/// InsufficientSamples when the writer has fewer than 2K (train) or K+1
/// (test) samples; UnknownWriter when it has none.
Episode sample_episode(const data::Dataset& ds, const std::string& writer, std::int64_t shots, Rng& rng,
                       EpisodeMode mode);

/// One learnable inner rate per named parameter tensor, stored as raw values
/// and read through softplus so every rate stays non-negative.
class LayerLearningRates {
 public:
  LayerLearningRates() = default;
  /// Every rate starts at `rate`; 0 gives raw -inf, which pins it at 0.
  LayerLearningRates(const Model& model, double rate);

  const std::vector<std::string>& names() const { return names_; }
  std::vector<Tensor>& raw() { return raw_; }
  const std::vector<Tensor>& raw() const { return raw_; }
  /// softplus(raw), connected to raw when recording.
  std::vector<Tensor> rates() const;
  std::vector<double> values() const;
  std::size_t size() const { return raw_.size(); }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> raw_;
};

/// g_psi: maps per-character classifier-gradient features to a weight in
/// [0,1]. Inputs are [grad of step t ; grad of the whole support loss],
/// both taken with respect to the output classifier and projected to a
/// fixed width by a seeded random matrix.
class InstanceWeightNet {
 public:
  InstanceWeightNet() = default;
  InstanceWeightNet(const Model& model, std::int64_t feature_width, std::int64_t hidden, std::uint64_t seed);

  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  static const std::vector<std::string>& param_names();
  const Tensor& projection() const { return projection_; }
  void set_projection(Tensor p) { projection_ = std::move(p); }
  std::int64_t raw_width() const { return projection_.dim(0); }

  /// Projected features for every (sample, step) of a teacher-forced
  /// forward pass. Computed from values only, so no gradient reaches the
  /// recognizer. Returns [N*T, feature_width]; PAD steps give zero rows.
  Tensor features(const Tensor& logits, const Tensor& classifier_inputs, const nn::TokenBatch& targets,
                  double label_smoothing) const;
  /// Per-step weights [N,T] in [0,1], differentiable in the net parameters.
  Tensor weights(const Tensor& logits, const Tensor& classifier_inputs, const nn::TokenBatch& targets,
                 double label_smoothing) const;

 private:
  Tensor projection_;
  std::vector<Tensor> params_;  // w1 b1 w2 b2 w3 b3
};

/// Inner-loop support loss. With `gamma` the per-character terms are
/// reweighted; gamma of all ones gives exactly the unweighted loss.
Tensor support_loss(Model& model, std::span<const Tensor> params, const Batch& support, const Tensor* gamma,
                    const models::ForwardOptions& opt = {});

/// theta_i - rate_i * grad_i for every tensor. rates holds one scalar
/// tensor per parameter (or a single shared one). With create_graph the
/// result stays differentiable through the gradient; otherwise the
/// gradient enters as a constant (first-order).
std::vector<Tensor> gradient_step(std::span<const Tensor> theta, const Tensor& loss, std::span<const Tensor> rates,
                                  bool create_graph);

struct AdaptedParams {
  std::vector<std::string> names;
  std::vector<Tensor> params;
  std::string writer;
  Variant variant = Variant::MAML;
  std::int64_t inner_steps = 0;
};

/// Inner loop on a support batch. BN layers run on their running
/// statistics throughout and are left untouched; the model's stored
/// parameters are never modified. `lrs` is required for MAML_LLR and
/// MetaHTR, `iw` for MetaHTR (InvalidConfig otherwise).
AdaptedParams inner_adapt(Model& model, std::span<const Tensor> theta, const Batch& support, const MetaConfig& cfg,
                          const LayerLearningRates* lrs, const InstanceWeightNet* iw, bool create_graph,
                          const std::string& writer = "");

/// Test-time adaptation for one writer: no dropout, no second-order graph.
AdaptedParams adapt_at_inference(Model& model, const Batch& support, const MetaConfig& cfg,
                                 const LayerLearningRates* lrs, const InstanceWeightNet* iw,
                                 const std::string& writer = "");

/// Adam on the output classifier only, with fresh optimizer state.
AdaptedParams finetune_baseline(Model& model, const Batch& support, std::int64_t steps = 3, double lr = 1e-3,
                                const std::string& writer = "");

struct StepResult {
  double outer_loss = 0.0;
  double grad_norm = 0.0;  // before clipping
  bool skipped = false;    // non-finite loss or gradient; nothing was updated
  std::vector<std::string> writers;
};

/// Owns the meta-parameters (theta, rates, psi), the outer optimizer and the
/// episode sampler state.
class MetaLearner {
 public:
  MetaLearner(Model model, MetaConfig cfg, std::uint64_t seed);

  Model& model() { return model_; }
  const Model& model() const { return model_; }
  const MetaConfig& config() const { return cfg_; }
  const LayerLearningRates* rates() const { return lrs_ ? &*lrs_ : nullptr; }
  LayerLearningRates* rates() { return lrs_ ? &*lrs_ : nullptr; }
  const InstanceWeightNet* weight_net() const { return iw_ ? &*iw_ : nullptr; }
  InstanceWeightNet* weight_net() { return iw_ ? &*iw_ : nullptr; }
  nn::Adam& optimizer() { return opt_; }
  Rng& sampler() { return sampler_; }

  /// Everything the outer optimizer updates, in a fixed order.
  std::vector<Tensor*> meta_parameters();

  /// Outer loss summed over `episodes` with their gradients, without
  /// touching any state. Gradients follow meta_parameters() order.
  std::pair<double, std::vector<Tensor>> meta_gradient(const data::Dataset& ds, const std::vector<Episode>& episodes,
                                                       Rng& rng);

  /// Samples N training episodes from `writers` and takes one outer step.
  StepResult step(const data::Dataset& ds, const std::vector<std::string>& writers);

  AdaptedParams adapt(const Batch& support, const std::string& writer = "");

  void save(const std::filesystem::path& path) const;
  static MetaLearner load(const std::filesystem::path& path);

 private:
  Model model_;
  MetaConfig cfg_;
  std::optional<LayerLearningRates> lrs_;
  std::optional<InstanceWeightNet> iw_;
  nn::Adam opt_;
  Rng sampler_;
};

/// What an adaptation method hands back for decoding a writer's queries.
struct Adaptation {
  std::vector<Tensor> params;
  std::vector<models::BnModulation> bn_deltas;  // empty: plain BN
};

/// The episode carries the writer id and the dataset indices of the support
/// set, for methods that look at the raw images.
using Adapter = std::function<Adaptation(const Batch& support, const Episode& episode)>;

/// Seed of the support/query split for (seed, writer, run).
std::uint64_t protocol_seed(std::uint64_t seed, const std::string& writer, std::int64_t run);

/// The test-writer protocol: for each writer of `split` and each run, a
/// K-support / rest-query split drawn from (seed, writer, run), adaptation
/// on the support set, greedy decoding of the queries. Splits depend only on
/// (seed, writer, run), so different methods see identical query sets.
eval::EvalReport evaluate_protocol(Model& model, const data::Dataset& ds, data::Split split, std::int64_t shots,
                                   std::int64_t runs, std::uint64_t seed, const std::string& condition,
                                   const Adapter& adapter);

struct PremiseResult {
  eval::EvalReport with_adaptation;
  eval::EvalReport without_adaptation;
  eval::PairedReport paired;
};

/// Same query sets decoded with the adapted and with the unadapted
/// parameters; per-writer means are compared with a Welch t-test.
PremiseResult evaluate_adaptation_premise(MetaLearner& learner, const data::Dataset& ds, data::Split split,
                                          std::int64_t runs, std::uint64_t seed, const std::string& name);

}  // namespace htrlab::meta
