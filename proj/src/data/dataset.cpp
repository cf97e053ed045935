#include "htrlab/data/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "htrlab/error.hpp"
#include "htrlab/kv.hpp"

namespace htrlab::data {

std::string to_string(Split s) {
  switch (s) {
    case Split::Train:
      return "train";
    case Split::Val:
      return "val";
    case Split::Test:
      return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  std::string l;
  for (char c : s) l.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (l == "train") return Split::Train;
  if (l == "val" || l == "valid" || l == "validation") return Split::Val;
  if (l == "test") return Split::Test;
  fail(ErrorCode::ManifestParseError, "unknown split '" + s + "'");
}

// ---------------------------------------------------------------- dataset

std::vector<std::string> Dataset::writers(Split split) const {
  std::set<std::string> w;
  for (const auto& s : samples)
    if (s.split == split) w.insert(s.writer);
  return {w.begin(), w.end()};
}

std::vector<std::string> Dataset::writers() const {
  std::set<std::string> w;
  for (const auto& s : samples) w.insert(s.writer);
  return {w.begin(), w.end()};
}

std::map<std::string, std::vector<std::size_t>> Dataset::by_writer(Split split) const {
  std::map<std::string, std::vector<std::size_t>> m;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].split == split) m[samples[i].writer].push_back(i);
  return m;
}

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].split == split) idx.push_back(i);
  return idx;
}

std::string Dataset::alphabet() const {
  std::set<char> cs;
  for (const auto& s : samples) cs.insert(s.text.begin(), s.text.end());
  return {cs.begin(), cs.end()};
}

void Dataset::validate() const {
  std::map<std::string, Split> home;
  for (const auto& s : samples) {
    auto [it, fresh] = home.emplace(s.writer, s.split);
    require(fresh || it->second == s.split, ErrorCode::SplitLeakage,
            "writer '" + s.writer + "' appears in both " + to_string(it->second) + " and " + to_string(s.split));
  }
}

// ---------------------------------------------------------------- generator

const std::vector<std::string>& default_lexicon() {
  static const std::vector<std::string> words = {
      "the",    "of",     "and",    "to",    "in",     "is",     "was",    "that",   "for",    "it",
      "with",   "as",     "his",    "on",    "be",     "at",     "by",     "had",    "not",    "are",
      "but",    "from",   "or",     "have",  "an",     "they",   "which",  "one",    "you",    "were",
      "her",    "all",    "she",    "there", "would",  "their",  "we",     "him",    "been",   "has",
      "when",   "who",    "will",   "more",  "no",     "if",     "out",    "so",     "said",   "what",
      "up",     "its",    "about",  "into",  "than",   "them",   "can",    "only",   "other",  "new",
      "some",   "could",  "time",   "these", "two",    "may",    "then",   "do",     "first",  "any",
      "my",     "now",    "such",   "like",  "our",    "over",   "man",    "me",     "even",   "most",
      "made",   "after",  "also",   "did",   "many",   "before", "must",   "through","back",   "years",
      "where",  "much",   "your",   "way",   "well",   "down",   "should", "because","each",   "just",
      "those",  "people", "how",    "too",   "little", "state",  "good",   "very",   "make",   "world",
      "still",  "own",    "see",    "men",   "work",   "long",   "get",    "here",   "between","both",
      "life",   "being",  "under",  "never", "day",    "same",   "another","know",   "while",  "last",
      "might",  "us",     "great",  "old",   "year",   "off",    "come",   "since",  "against","go",
      "came",   "right",  "used",   "take",  "three",  "quick",  "jump",   "fox",    "lazy",   "zebra",
      "wax",    "jazz",   "quiz",   "box",   "vex",    "kiwi",   "yoga",   "fjord",  "glyph",  "zinc"};
  return words;
}

WriterStyle writer_style(std::uint64_t seed, std::int64_t w, const StyleRanges& ranges) {
  Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(w), 0));
  return sample_style(rng, ranges);
}

namespace {

std::string writer_id(std::int64_t w) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "w%03lld", static_cast<long long>(w));
  return buf;
}

}  // namespace

Dataset generate_synthetic_dataset(const GeneratorConfig& cfg) {
  require(cfg.n_writers >= 1, ErrorCode::InvalidRange, "n_writers must be at least 1");
  require(cfg.words_per_writer >= 1, ErrorCode::InvalidRange, "words_per_writer must be at least 1");
  require(cfg.val_writers >= 0 && cfg.test_writers >= 0 && cfg.val_writers + cfg.test_writers <= cfg.n_writers,
          ErrorCode::InvalidRange, "val/test writer counts exceed n_writers");
  const auto& lexicon = cfg.lexicon.empty() ? default_lexicon() : cfg.lexicon;
  for (const auto& w : lexicon) {
    require(!w.empty(), ErrorCode::InvalidRange, "lexicon contains an empty word");
    for (char c : w) require(c >= 'a' && c <= 'z', ErrorCode::InvalidRange, "lexicon word '" + w + "' is not a-z");
  }

  Dataset ds;
  ds.samples.reserve(static_cast<std::size_t>(cfg.n_writers * cfg.words_per_writer));
  const std::int64_t n_train = cfg.n_writers - cfg.val_writers - cfg.test_writers;
  for (std::int64_t w = 0; w < cfg.n_writers; ++w) {
    const WriterStyle style = writer_style(cfg.seed, w, cfg.styles);
    const Split split = w < n_train ? Split::Train : (w < n_train + cfg.val_writers ? Split::Val : Split::Test);
    for (std::int64_t k = 0; k < cfg.words_per_writer; ++k) {
      Rng rng(Rng::derive(cfg.seed, static_cast<std::uint64_t>(w), static_cast<std::uint64_t>(k + 1)));
      Sample s;
      s.text = lexicon[rng.index(lexicon.size())];
      s.writer = writer_id(w);
      s.split = split;
      s.image = render_word(s.text, style, rng, cfg.height, cfg.width);
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

// ---------------------------------------------------------------- manifest

std::filesystem::path write_corpus(const Dataset& ds, const std::filesystem::path& dir) {
  ds.validate();
  std::filesystem::create_directories(dir / "images");
  const auto manifest = dir / "manifest.tsv";
  std::ofstream os(manifest, std::ios::trunc);
  require(static_cast<bool>(os), ErrorCode::IOError, "cannot write " + manifest.string());
  os << "path\ttext\twriter\tsplit\n";
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    char name[32];
    std::snprintf(name, sizeof name, "%06zu.png", i);
    const auto rel = std::filesystem::path("images") / s.writer / name;
    write_png(dir / rel, s.image);
    os << rel.generic_string() << '\t' << s.text << '\t' << s.writer << '\t' << to_string(s.split) << '\n';
  }
  require(static_cast<bool>(os), ErrorCode::IOError, "write failed for " + manifest.string());
  return manifest;
}

Dataset load_corpus(const std::filesystem::path& manifest, std::vector<std::string>* warnings) {
  std::ifstream is(manifest);
  require(static_cast<bool>(is), ErrorCode::IOError, "cannot open manifest " + manifest.string());
  const auto root = manifest.parent_path();
  Dataset ds;
  std::string row;
  std::size_t lineno = 0;
  while (std::getline(is, row)) {
    ++lineno;
    if (!row.empty() && row.back() == '\r') row.pop_back();
    if (row.empty() || row[0] == '#') continue;
    std::vector<std::string> f;
    std::stringstream ss(row);
    std::string field;
    while (std::getline(ss, field, '\t')) f.push_back(field);
    const std::string where = manifest.string() + ":" + std::to_string(lineno);
    if (lineno == 1 && !f.empty() && f[0] == "path") continue;
    require(f.size() == 4, ErrorCode::ManifestParseError,
            where + ": expected 4 tab-separated fields, found " + std::to_string(f.size()));
    Sample s;
    for (char c : f[1]) s.text.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    require(!s.text.empty(), ErrorCode::ManifestParseError, where + ": empty transcription");
    require(!f[2].empty(), ErrorCode::ManifestParseError, where + ": empty writer id");
    s.writer = f[2];
    try {
      s.split = split_from_string(f[3]);
    } catch (const Error& e) {
      fail(ErrorCode::ManifestParseError, where + ": " + e.what());
    }
    s.image = read_png(root / f[0]);
    ds.samples.push_back(std::move(s));
  }
  ds.validate();
  if (warnings) {
    for (auto split : {Split::Train, Split::Val, Split::Test})
      if (ds.indices(split).empty()) warnings->push_back("split '" + to_string(split) + "' is empty");
  }
  return ds;
}

// ---------------------------------------------------------------- augmentation

AugmentConfig AugmentConfig::identity() {
  AugmentConfig c;
  c.rotation_deg = 0.0;
  c.scale_min = c.scale_max = 1.0;
  c.brightness = 0.0;
  c.contrast_min = c.contrast_max = 1.0;
  c.noise_max = 0.0;
  return c;
}

void AugmentConfig::write_kv(std::map<std::string, std::string>& m, const std::string& prefix) const {
  m[prefix + "downscale"] = kv::format(downscale);
  m[prefix + "rotation_deg"] = kv::format(rotation_deg);
  m[prefix + "scale_min"] = kv::format(scale_min);
  m[prefix + "scale_max"] = kv::format(scale_max);
  m[prefix + "brightness"] = kv::format(brightness);
  m[prefix + "contrast_min"] = kv::format(contrast_min);
  m[prefix + "contrast_max"] = kv::format(contrast_max);
  m[prefix + "noise_max"] = kv::format(noise_max);
}

AugmentConfig AugmentConfig::read_kv(const std::map<std::string, std::string>& m, const std::string& prefix) {
  AugmentConfig a;
  a.downscale = kv::get_bool(m, prefix + "downscale", a.downscale);
  a.rotation_deg = kv::get_double(m, prefix + "rotation_deg", a.rotation_deg);
  a.scale_min = kv::get_double(m, prefix + "scale_min", a.scale_min);
  a.scale_max = kv::get_double(m, prefix + "scale_max", a.scale_max);
  a.brightness = kv::get_double(m, prefix + "brightness", a.brightness);
  a.contrast_min = kv::get_double(m, prefix + "contrast_min", a.contrast_min);
  a.contrast_max = kv::get_double(m, prefix + "contrast_max", a.contrast_max);
  a.noise_max = kv::get_double(m, prefix + "noise_max", a.noise_max);
  return a;
}

void AugmentConfig::validate() const {
  require(rotation_deg >= 0.0 && rotation_deg <= 45.0, ErrorCode::InvalidRange, "rotation must lie in [0,45] degrees");
  require(scale_min > 0.0 && scale_min <= scale_max && scale_max <= 4.0, ErrorCode::InvalidRange,
          "scale range must satisfy 0 < min <= max <= 4");
  require(brightness >= 0.0 && brightness <= 1.0, ErrorCode::InvalidRange, "brightness must lie in [0,1]");
  require(contrast_min > 0.0 && contrast_min <= contrast_max && contrast_max <= 4.0, ErrorCode::InvalidRange,
          "contrast range must satisfy 0 < min <= max <= 4");
  require(noise_max >= 0.0 && noise_max <= 0.5, ErrorCode::InvalidRange, "noise sigma must lie in [0,0.5]");
}

namespace {

double sample_bilinear(const Image& img, double y, double x) {
  const double fy = std::floor(y), fx = std::floor(x);
  const auto r = static_cast<std::int64_t>(fy), c = static_cast<std::int64_t>(fx);
  const double ty = y - fy, tx = x - fx;
  auto px = [&](std::int64_t rr, std::int64_t cc) {
    if (rr < 0 || cc < 0 || rr >= img.height || cc >= img.width) return 1.0;
    return img.at(rr, cc);
  };
  return (1 - ty) * ((1 - tx) * px(r, c) + tx * px(r, c + 1)) + ty * ((1 - tx) * px(r + 1, c) + tx * px(r + 1, c + 1));
}

}  // namespace

Image preprocess(const Image& img, const AugmentConfig& cfg) { return cfg.downscale ? downscale_half(img) : img; }

Image augment(const Image& img, Rng& rng, const AugmentConfig& cfg) {
  cfg.validate();
  Image out = preprocess(img, cfg);

  const double angle = cfg.rotation_deg > 0 ? rng.uniform(-cfg.rotation_deg, cfg.rotation_deg) : 0.0;
  const double scale = cfg.scale_max > cfg.scale_min ? rng.uniform(cfg.scale_min, cfg.scale_max) : cfg.scale_min;
  if (angle != 0.0 || scale != 1.0) {
    const Image src = out;
    const double a = angle * std::numbers::pi / 180.0;
    const double ca = std::cos(a), sa = std::sin(a);
    const double cy = 0.5 * static_cast<double>(src.height - 1), cx = 0.5 * static_cast<double>(src.width - 1);
    for (std::int64_t r = 0; r < out.height; ++r)
      for (std::int64_t c = 0; c < out.width; ++c) {
        const double dy = (static_cast<double>(r) - cy) / scale, dx = (static_cast<double>(c) - cx) / scale;
        out.at(r, c) = sample_bilinear(src, cy + ca * dy - sa * dx, cx + sa * dy + ca * dx);
      }
  }

  const double shift = cfg.brightness > 0 ? rng.uniform(-cfg.brightness, cfg.brightness) : 0.0;
  const double gain =
      cfg.contrast_max > cfg.contrast_min ? rng.uniform(cfg.contrast_min, cfg.contrast_max) : cfg.contrast_min;
  if (shift != 0.0 || gain != 1.0)
    for (double& v : out.pixels) v = (v - 0.5) * gain + 0.5 + shift;

  const double sigma = cfg.noise_max > 0 ? rng.uniform(0.0, cfg.noise_max) : 0.0;
  if (sigma > 0.0)
    for (double& v : out.pixels) v += rng.normal(0.0, sigma);

  for (double& v : out.pixels) v = std::clamp(v, 0.0, 1.0);
  return out;
}

Batch make_batch(const Dataset& ds, const std::vector<std::size_t>& idx, Rng* rng, const AugmentConfig& aug) {
  require(!idx.empty(), ErrorCode::InsufficientSamples, "empty batch");
  std::vector<Image> imgs;
  imgs.reserve(idx.size());
  Batch b;
  for (std::size_t i : idx) {
    require(i < ds.size(), ErrorCode::InvalidArgument, "sample index out of range");
    imgs.push_back(rng ? augment(ds.samples[i].image, *rng, aug) : preprocess(ds.samples[i].image, aug));
    b.texts.push_back(ds.samples[i].text);
  }
  std::vector<const Image*> ptrs;
  for (const auto& im : imgs) ptrs.push_back(&im);
  b.images = to_input(ptrs);
  return b;
}

}  // namespace htrlab::data
