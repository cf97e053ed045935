#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "htrlab/codes/codes.hpp"
#include "htrlab/data/dataset.hpp"
#include "htrlab/meta/meta.hpp"
#include "htrlab/models/model.hpp"

namespace htrlab::app {

enum class Method { Base, FinetuneBaseline, MAML, MAML_LLR, MetaHTR, CodeLearned, CodeHinge, CodeStyle, CodeZero };

std::string to_string(Method m);
/// "base", "finetune", "maml", "maml-llr", "metahtr", "code-learned",
/// "code-hinge", "code-style", "code-zero"; InvalidConfig otherwise.
Method method_from_string(const std::string& s);
bool is_meta(Method m);
bool is_code(Method m);
meta::Variant variant_of(Method m);
codes::CodeKind code_kind_of(Method m);

/// Everything a run needs. Text form is flat "key = value" lines; see
/// to_kv() for the full key list with defaults.
struct ExperimentConfig {
  Method method = Method::Base;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::string output_dir = "runs";

  // Dataset: a manifest when set, otherwise the synthetic generator.
  std::string manifest;
  data::GeneratorConfig synth = [] {
    data::GeneratorConfig g;
    g.n_writers = 25;
    g.words_per_writer = 40;
    g.test_writers = 5;
    return g;
  }();
  /// Number of default-lexicon words the generator draws from; 0 = all.
  std::int64_t lexicon_size = 0;

  models::ModelConfig model;
  /// Take the vocabulary from the dataset's alphabet at train time.
  bool auto_vocab = true;

  data::AugmentConfig augment;
  meta::MetaConfig meta;
  codes::CodeTrainConfig codes;

  // Supervised pretraining, shared by every method.
  std::int64_t base_steps = 1500;
  std::int64_t batch = 16;
  double lr = 1e-3;
  double max_grad_norm = 5.0;
  std::int64_t meta_steps = 100;
  /// Start from this checkpoint's model instead of pretraining.
  std::string init;

  std::int64_t eval_runs = 10;
  std::int64_t finetune_steps = 3;
  double finetune_lr = 1e-3;

  /// InvalidConfig on missing or contradictory settings.
  void validate() const;
  std::map<std::string, std::string> to_kv() const;
  /// Unknown keys are InvalidConfig.
  static ExperimentConfig from_kv(const std::map<std::string, std::string>& kv);
};

/// "key = value" lines; '#' starts a comment, blank lines are skipped.
/// InvalidConfig on lines without '=' or repeated keys.
std::map<std::string, std::string> parse_kv_text(const std::string& text, const std::string& origin = "config");
std::string format_kv_text(const std::map<std::string, std::string>& kv);

/// File values first, then `overrides` ("key=value") on top.
ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
ExperimentConfig config_from_overrides(const std::vector<std::string>& overrides);

/// $HTRLAB_OUTPUT_ROOT when set, else the working directory.
std::filesystem::path output_root();
/// Relative paths resolve under output_root().
std::filesystem::path resolve_output(const std::string& dir);

}  // namespace htrlab::app
