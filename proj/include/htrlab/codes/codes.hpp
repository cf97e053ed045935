#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "htrlab/data/dataset.hpp"
#include "htrlab/models/model.hpp"
#include "htrlab/rng.hpp"

namespace htrlab::codes {

using ad::Tensor;
using models::Model;

enum class CodeKind { Learned, Hinge, Style, Zero };

std::string to_string(CodeKind k);
/// "learned", "hinge", "style", "zero"; InvalidConfig otherwise.
CodeKind code_kind_from_string(const std::string& s);

constexpr std::int64_t kHingeBins = 30;
constexpr std::int64_t kHingeSize = kHingeBins * (kHingeBins + 1) / 2;  // 465
constexpr std::int64_t kHingeLeg = 5;
/// Contour pixels a hinge histogram needs before it means anything.
constexpr std::int64_t kMinContourPixels = 50;

struct WriterCode {
  std::vector<double> values;
  CodeKind kind = CodeKind::Zero;
  std::string id;  // writer or cluster

  friend bool operator==(const WriterCode&, const WriterCode&) = default;
};

// ---------------------------------------------------------------------------
// Hinge features

/// Otsu threshold over 256 grey levels; pixels at or below it count as ink.
/// Returns the level in [0,255].
int otsu_threshold(const data::Image& img);

/// Ink mask (row-major, 1 = ink) after Otsu binarization.
std::vector<std::uint8_t> binarize(const data::Image& img);

struct Pixel {
  std::int64_t r = 0, c = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

/// Outer boundary of every 8-connected ink component, traced clockwise with
/// the Moore neighbourhood from its top-left pixel. Components come in
/// raster order of those start pixels.
std::vector<std::vector<Pixel>> trace_contours(const std::vector<std::uint8_t>& mask, std::int64_t height,
                                               std::int64_t width);

/// Index of the unordered bin pair (a <= b) in the 465-entry layout.
std::int64_t hinge_pair_index(std::int64_t a, std::int64_t b);

/// Leg-angle pair histogram over all contours, L1-normalized. Contours too
/// short to carry two legs are skipped. InsufficientInk with fewer than
/// kMinContourPixels usable contour pixels.
std::vector<double> hinge_histogram(const data::Image& img);

/// Elementwise mean; each entry is summed in sorted order so the result does
/// not depend on the order of the inputs. InsufficientSamples when empty.
std::vector<double> mean_vector(const std::vector<std::vector<double>>& vs);

/// Mean histogram over the images that carry enough ink; InsufficientInk
/// when none does, InsufficientSamples when `images` is empty.
std::vector<double> writer_hinge(const std::vector<const data::Image*>& images);

// ---------------------------------------------------------------------------
// k-means

struct KMeansResult {
  std::vector<std::vector<double>> centroids;
  std::vector<std::int64_t> assignment;
  /// Within-cluster SSE after every assignment step of the final attempt.
  std::vector<double> sse_history;
  std::int64_t restarts = 0;
};

/// Lloyd iterations from k-means++ seeds; stops when no centroid moves by
/// more than `tol` (Euclidean) or after max_iter rounds. An empty cluster
/// triggers a reseed, up to max_restarts times, then DegenerateClustering.
/// InsufficientSamples when there are fewer than k distinct points.
KMeansResult kmeans(const std::vector<std::vector<double>>& points, std::int64_t k, Rng& rng,
                    std::int64_t max_iter = 300, double tol = 1e-6, std::int64_t max_restarts = 10);

/// Lowest index wins ties.
std::int64_t nearest_centroid(const std::vector<std::vector<double>>& centroids, const std::vector<double>& v);

// ---------------------------------------------------------------------------
// Conditional batch norm

/// One pair of two-layer MLPs per BN layer, mapping a code to that layer's
/// (d_beta, d_gamma). Output layers start at zero, so a fresh adapter leaves
/// the network unchanged.
class CodeAdapter {
 public:
  CodeAdapter() = default;
  CodeAdapter(const Model& model, std::int64_t code_size, std::int64_t hidden, std::uint64_t seed);

  std::int64_t code_size() const { return code_size_; }
  std::int64_t hidden() const { return hidden_; }
  const std::vector<std::string>& names() const { return names_; }
  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  std::size_t layers() const { return params_.size() / 8; }

  /// code: [code_size]. Differentiable in the adapter parameters and in the
  /// code when recording. ShapeMismatch on a wrong code length.
  std::vector<models::BnModulation> deltas(const Tensor& code) const;

 private:
  std::int64_t code_size_ = 0;
  std::int64_t hidden_ = 0;
  std::vector<std::string> names_;
  std::vector<Tensor> params_;  // per layer: beta w1 b1 w2 b2, gamma w1 b1 w2 b2
};

/// Teacher-forced loss of `model` on a batch under the given code. BN runs
/// on running statistics; the model is only read.
Tensor code_loss(Model& model, const CodeAdapter& adapter, const Tensor& code, const data::Batch& batch,
                 bool dropout = false, Rng* rng = nullptr);

// ---------------------------------------------------------------------------
// Training

struct CodeTrainConfig {
  std::int64_t steps = 300;
  std::int64_t batch = 16;
  double lr = 1e-3;
  double max_grad_norm = 5.0;
  std::int64_t hidden = 64;
  /// Size of learned, style and zero codes; hinge codes are always 465.
  std::int64_t code_size = 64;
  std::int64_t clusters = 3;
  /// Gradient steps and init scale for codes of unseen writers.
  std::int64_t new_writer_steps = 3;
  double init_sigma = 0.01;
  bool augment = true;
  data::AugmentConfig aug;

  void validate() const;
  std::map<std::string, std::string> to_kv() const;
  static CodeTrainConfig from_kv(const std::map<std::string, std::string>& kv);
};

std::int64_t code_size_for(CodeKind kind, const CodeTrainConfig& cfg);

/// Trainable or fixed codes plus the writer -> slot map used in training.
struct CodeTable {
  std::vector<Tensor> codes;
  bool trainable = false;
  std::map<std::string, std::size_t> slot_of;
};

/// Adam state for the adapter and one per code slot, so a slot that is not
/// in the batch does not drift on stale momentum.
struct CodeOptimizer {
  nn::Adam adapter;
  std::vector<nn::Adam> codes;
};

CodeOptimizer make_code_optimizer(const CodeTable& table, double lr);

/// One optimizer step on a writer-pure batch. Only the adapter and (when
/// trainable) the batch's code move. MixedWriterBatch if `idx` spans
/// writers, UnknownWriter if the writer has no slot. Returns the loss before
/// the update.
double code_train_step(Model& model, CodeAdapter& adapter, CodeTable& table, const data::Dataset& ds,
                       const std::vector<std::size_t>& idx, CodeOptimizer& opt, Rng& rng,
                       const CodeTrainConfig& cfg);

/// Everything needed to produce a code for any writer, plus the adapter.
struct Codebook {
  CodeKind kind = CodeKind::Zero;
  CodeTrainConfig config;
  CodeAdapter adapter;
  std::map<std::string, std::vector<double>> writer_codes;  // Learned
  std::vector<std::vector<double>> centroids;                // Style, hinge space
  std::vector<std::vector<double>> cluster_codes;            // Style
};

/// Builds the kind's codes for every training writer and trains them
/// jointly with a fresh adapter; the base model stays untouched. `losses`
/// receives the per-step training loss.
Codebook train_codes(Model& model, const data::Dataset& ds, CodeKind kind, const CodeTrainConfig& cfg,
                     std::uint64_t seed, std::vector<double>* losses = nullptr);

/// N(0, sigma^2) draw followed by `steps` Adam updates of the code alone on
/// the support loss. InsufficientSamples on an empty support set.
WriterCode init_new_writer_code(Model& model, const CodeAdapter& adapter, const data::Batch& support,
                                std::int64_t steps, Rng& rng, double sigma = 0.01, double lr = 1e-3);

/// Code for `writer` given its support data. Learned codes of unseen writers
/// are fitted on `support`; UnknownWriter if that set is empty.
WriterCode assign_code(const Codebook& book, Model& model, const std::string& writer, const data::Batch& support,
                       const std::vector<const data::Image*>& support_images, Rng& rng);

void save_codebook(const std::filesystem::path& path, const Codebook& book);
/// CheckpointMismatch when the adapter does not fit `model`.
Codebook load_codebook(const std::filesystem::path& path, const Model& model);

}  // namespace htrlab::codes
