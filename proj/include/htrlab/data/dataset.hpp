#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "htrlab/data/font.hpp"
#include "htrlab/data/image.hpp"
#include "htrlab/rng.hpp"

namespace htrlab::data {

enum class Split { Train, Val, Test };

std::string to_string(Split s);
/// ManifestParseError for anything but train/val/test (any case).
Split split_from_string(const std::string& s);

struct Sample {
  Image image;
  std::string text;
  std::string writer;
  Split split = Split::Train;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Dataset {
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  /// Writers of a split in sorted order.
  std::vector<std::string> writers(Split split) const;
  std::vector<std::string> writers() const;
  /// Sample indices per writer (sorted by writer id, then index).
  std::map<std::string, std::vector<std::size_t>> by_writer(Split split) const;
  std::vector<std::size_t> indices(Split split) const;
  /// Sorted set of characters used by all transcriptions.
  std::string alphabet() const;
  /// Throws SplitLeakage when a writer appears in two splits.
  void validate() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct GeneratorConfig {
  std::int64_t n_writers = 10;
  std::int64_t words_per_writer = 50;
  /// Writers are assigned in order: train first, then val, then test.
  std::int64_t val_writers = 0;
  std::int64_t test_writers = 0;
  std::vector<std::string> lexicon;
  std::int64_t height = 32;
  std::int64_t width = 128;
  std::uint64_t seed = 0;
  StyleRanges styles;
};

/// Default word list (lowercase, 2 to 8 letters).
const std::vector<std::string>& default_lexicon();

/// Deterministic per seed; each sample uses its own derived stream, so the
/// result does not depend on generation order. InvalidRange on bad counts
/// or an empty lexicon.
Dataset generate_synthetic_dataset(const GeneratorConfig& cfg);

/// Style drawn for writer index `w` under `seed` (what the generator uses).
WriterStyle writer_style(std::uint64_t seed, std::int64_t w, const StyleRanges& ranges = {});

/// Writes PNGs under dir/images and dir/manifest.tsv. Returns the manifest path.
std::filesystem::path write_corpus(const Dataset& ds, const std::filesystem::path& dir);

/// TSV rows: image path (relative to the manifest), transcription, writer,
/// split. Blank lines and lines starting with '#' are skipped, and a header
/// row beginning with "path" is allowed. Transcriptions are lowercased.
/// Problems that do not invalidate the corpus (an empty split) are appended
/// to `warnings`.
Dataset load_corpus(const std::filesystem::path& manifest, std::vector<std::string>* warnings = nullptr);

struct AugmentConfig {
  bool downscale = true;
  double rotation_deg = 5.0;
  double scale_min = 0.9, scale_max = 1.1;
  double brightness = 0.2;
  double contrast_min = 0.8, contrast_max = 1.2;
  double noise_max = 0.05;

  /// All stochastic parts disabled; only the downscale remains.
  static AugmentConfig identity();
  void validate() const;
  /// Flat keys "<prefix>rotation_deg" and so on; absent keys keep defaults.
  void write_kv(std::map<std::string, std::string>& m, const std::string& prefix) const;
  static AugmentConfig read_kv(const std::map<std::string, std::string>& m, const std::string& prefix);
};

/// Downscale, then rotation/scale about the centre, brightness, contrast and
/// Gaussian noise; values clipped to [0,1]. Output size equals the
/// (downscaled) input size.
Image augment(const Image& img, Rng& rng, const AugmentConfig& cfg = {});

/// Deterministic preprocessing used for evaluation: the downscale only.
Image preprocess(const Image& img, const AugmentConfig& cfg = {});

struct Batch {
  ad::Tensor images;  // [N,1,H,W], ink-high
  std::vector<std::string> texts;
};

/// Images are augmented when `rng` is given, otherwise only preprocessed.
Batch make_batch(const Dataset& ds, const std::vector<std::size_t>& idx, Rng* rng = nullptr,
                 const AugmentConfig& aug = {});

}  // namespace htrlab::data
