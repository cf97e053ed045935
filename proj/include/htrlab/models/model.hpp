#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "htrlab/autodiff/tensor.hpp"
#include "htrlab/io/bundle.hpp"
#include "htrlab/nn/layers.hpp"
#include "htrlab/nn/loss.hpp"
#include "htrlab/nn/optim.hpp"
#include "htrlab/rng.hpp"

namespace htrlab::models {

using ad::Tensor;

enum class Arch { SARLite, FPHTRLite };

std::string to_string(Arch a);
Arch arch_from_string(const std::string& s);

struct ModelConfig {
  Arch arch = Arch::FPHTRLite;
  /// Output channels of each conv+BN+relu+pool stage; the last one is the
  /// depth of the feature map handed to the decoder.
  std::vector<std::int64_t> conv_channels{8, 16, 32};
  /// Decoder width: LSTM hidden size and attention size for SAR-lite,
  /// transformer width for FPHTR-lite.
  std::int64_t d_model = 32;
  std::int64_t decoder_layers = 1;
  std::int64_t heads = 2;
  std::int64_t ff_dim = 64;
  double dropout = 0.1;
  std::int64_t max_seq_len = 55;
  std::int64_t image_height = 16;
  std::int64_t image_width = 64;
  nn::LossSpec loss;

  /// Throws InvalidConfig.
  void validate() const;
  std::int64_t feature_height() const;
  std::int64_t feature_width() const;

  std::map<std::string, std::string> to_kv() const;
  static ModelConfig from_kv(const std::map<std::string, std::string>& kv);
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Per-pass offsets to one BN layer's affine parameters.
struct BnModulation {
  Tensor d_gamma;  // [C]
  Tensor d_beta;   // [C]
};

struct ForwardOptions {
  /// Enables dropout; BN statistics follow each state's own mode.
  bool training = false;
  Rng* rng = nullptr;
  /// One entry per BN layer, or null for the plain network.
  const std::vector<BnModulation>* bn_deltas = nullptr;
};

struct ForwardResult {
  Tensor logits;    // [N, T, V]
  Tensor features;  // [N, T, F], the input of the output classifier
};

/// Parameter list plus BN running statistics for one recognizer. Forward
/// passes take the parameter values explicitly so adapted copies can be run
/// through the same graph without touching the stored ones.
class Model {
 public:
  Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  Model clone() const;

  const ModelConfig& config() const { return config_; }
  const std::vector<std::string>& names() const { return names_; }
  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  std::vector<nn::BatchNormState>& bn_states() { return bn_; }
  const std::vector<nn::BatchNormState>& bn_states() const { return bn_; }

  std::size_t index_of(const std::string& name) const;
  const Tensor& param(const std::string& name) const { return params_[index_of(name)]; }
  void set_bn_mode(nn::StatsMode mode);
  /// Channel count of each BN layer, in forward order.
  std::vector<std::int64_t> bn_channels() const;
  /// Indices of the output classifier (weight, bias).
  std::vector<std::size_t> classifier_indices() const;
  /// Toggles requires_grad on every stored parameter.
  void set_trainable(bool on);

  friend Model build_model(const ModelConfig& config, std::uint64_t seed);
  friend Model model_from_bundle(const io::Bundle& b, const std::string& origin);

 private:
  Tensor& add(const std::string& name, Tensor t);

  ModelConfig config_;
  std::vector<std::string> names_;
  std::vector<Tensor> params_;
  std::vector<nn::BatchNormState> bn_;
};

/// Forces every BN layer into one statistics mode and restores the old
/// modes on exit.
class BnModeGuard {
 public:
  BnModeGuard(Model& m, nn::StatsMode mode) : model_(m) {
    for (const auto& s : m.bn_states()) saved_.push_back(s.stats_mode);
    m.set_bn_mode(mode);
  }
  ~BnModeGuard() {
    for (std::size_t i = 0; i < saved_.size(); ++i) model_.bn_states()[i].stats_mode = saved_[i];
  }
  BnModeGuard(const BnModeGuard&) = delete;
  BnModeGuard& operator=(const BnModeGuard&) = delete;

 private:
  Model& model_;
  std::vector<nn::StatsMode> saved_;
};

/// Deterministic initialization from `seed`. InvalidConfig on bad settings.
Model build_model(const ModelConfig& config, std::uint64_t seed);

/// images [N,1,H,W] (ink-high), inputs start with SOS. SequenceTooLong when
/// the input exceeds max_seq_len. Uses model.bn_states() for statistics.
ForwardResult forward(Model& model, std::span<const Tensor> params, const Tensor& images,
                      const nn::TokenBatch& inputs, const ForwardOptions& opt = {});

/// Convenience: forward with the model's own parameters; logits only.
Tensor forward_teacher_forcing(Model& model, const Tensor& images, const nn::TokenBatch& inputs, bool training,
                               Rng* rng = nullptr);

/// Teacher-forced loss on a batch of transcriptions.
Tensor batch_loss(Model& model, std::span<const Tensor> params, const Tensor& images,
                  const std::vector<std::string>& texts, const ForwardOptions& opt = {},
                  const Tensor* weights = nullptr);

/// Greedy autoregressive decoding, one string per image. Runs without
/// recording and without dropout.
std::vector<std::string> decode_greedy(Model& model, std::span<const Tensor> params, const Tensor& images,
                                       const std::vector<BnModulation>* bn_deltas = nullptr);
std::vector<std::string> decode_greedy(Model& model, const Tensor& images);

struct ParameterTable {
  std::vector<std::pair<std::string, std::int64_t>> tensors;  // per named tensor, model order
  std::vector<std::pair<std::string, std::int64_t>> modules;  // per module path (name minus leaf)
  std::vector<std::pair<std::string, std::int64_t>> parts;    // backbone / encoder / decoder
  std::int64_t total = 0;
};

ParameterTable count_parameters(const Model& model);

/// One supervised step: loss, backward, global-norm clip, Adam. BN runs in
/// BatchStats mode for the step. Returns the loss before the update.
double train_step(Model& model, nn::Adam& opt, const Tensor& images, const std::vector<std::string>& texts,
                  Rng& dropout_rng, double max_grad_norm = 5.0);

/// Config, parameters and BN statistics into / out of a bundle, so other
/// checkpoint kinds can embed a model. CheckpointMismatch on shape errors.
void add_model(io::Bundle& b, const Model& model);
Model model_from_bundle(const io::Bundle& b, const std::string& origin);

void save_model(const std::filesystem::path& path, const Model& model, const std::string& rng_state = "");
Model load_model(const std::filesystem::path& path, std::string* rng_state = nullptr);

}  // namespace htrlab::models
