#include "htrlab/app/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "htrlab/error.hpp"
#include "htrlab/kv.hpp"

namespace htrlab::app {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::map<std::string, std::string> with_prefix(const std::map<std::string, std::string>& m,
                                               const std::string& prefix) {
  std::map<std::string, std::string> out;
  for (const auto& [k, v] : m) out[prefix + k] = v;
  return out;
}

std::map<std::string, std::string> section(const std::map<std::string, std::string>& m, const std::string& prefix) {
  std::map<std::string, std::string> out;
  for (const auto& [k, v] : m)
    if (k.starts_with(prefix)) out[k.substr(prefix.size())] = v;
  return out;
}

std::string join_seeds(const std::vector<std::uint64_t>& seeds) {
  std::string s;
  for (std::size_t i = 0; i < seeds.size(); ++i) s += (i ? "," : "") + std::to_string(seeds[i]);
  return s;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (tok.empty()) continue;
    const auto v = kv::get_int({{"seeds", tok}}, "seeds", 0);
    require(v >= 0, ErrorCode::InvalidConfig, "seeds must be non-negative");
    out.push_back(static_cast<std::uint64_t>(v));
  }
  return out;
}

// The augmentation block is shared; the sub-configs take it from the top.
void drop_augment(std::map<std::string, std::string>& m) {
  for (auto it = m.begin(); it != m.end();) it = it->first.starts_with("augment") ? m.erase(it) : std::next(it);
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::Base: return "base";
    case Method::FinetuneBaseline: return "finetune";
    case Method::MAML: return "maml";
    case Method::MAML_LLR: return "maml-llr";
    case Method::MetaHTR: return "metahtr";
    case Method::CodeLearned: return "code-learned";
    case Method::CodeHinge: return "code-hinge";
    case Method::CodeStyle: return "code-style";
    case Method::CodeZero: return "code-zero";
  }
  return "base";
}

Method method_from_string(const std::string& s) {
  for (Method m : {Method::Base, Method::FinetuneBaseline, Method::MAML, Method::MAML_LLR, Method::MetaHTR,
                   Method::CodeLearned, Method::CodeHinge, Method::CodeStyle, Method::CodeZero})
    if (to_string(m) == s) return m;
  fail(ErrorCode::InvalidConfig, "unknown method '" + s + "'");
}

bool is_meta(Method m) { return m == Method::MAML || m == Method::MAML_LLR || m == Method::MetaHTR; }

bool is_code(Method m) {
  return m == Method::CodeLearned || m == Method::CodeHinge || m == Method::CodeStyle || m == Method::CodeZero;
}

meta::Variant variant_of(Method m) {
  if (m == Method::MAML_LLR) return meta::Variant::MAML_LLR;
  if (m == Method::MetaHTR) return meta::Variant::MetaHTR;
  return meta::Variant::MAML;
}

codes::CodeKind code_kind_of(Method m) {
  switch (m) {
    case Method::CodeLearned: return codes::CodeKind::Learned;
    case Method::CodeHinge: return codes::CodeKind::Hinge;
    case Method::CodeStyle: return codes::CodeKind::Style;
    default: return codes::CodeKind::Zero;
  }
}

void ExperimentConfig::validate() const {
  require(!seeds.empty(), ErrorCode::InvalidConfig, "seeds must not be empty");
  require(!output_dir.empty(), ErrorCode::InvalidConfig, "output_dir must not be empty");
  require(lexicon_size >= 0, ErrorCode::InvalidConfig, "data.lexicon_size must be >= 0");
  require(lexicon_size <= static_cast<std::int64_t>(data::default_lexicon().size()), ErrorCode::InvalidConfig,
          "data.lexicon_size exceeds the built-in lexicon");
  if (!auto_vocab) model.validate();
  augment.validate();
  meta.validate();
  codes.validate();
  require(meta.variant == variant_of(method) || !is_meta(method), ErrorCode::InvalidConfig,
          "meta.variant '" + meta::to_string(meta.variant) + "' contradicts method '" + to_string(method) + "'");
  require(base_steps >= 0 && meta_steps >= 0 && batch >= 1, ErrorCode::InvalidConfig,
          "train.base_steps and train.meta_steps must be >= 0, train.batch >= 1");
  require(lr > 0.0 && max_grad_norm > 0.0, ErrorCode::InvalidConfig, "train.lr and train.max_grad_norm must be > 0");
  require(eval_runs >= 1, ErrorCode::InvalidConfig, "eval.runs must be >= 1");
  require(finetune_steps >= 0 && finetune_lr > 0.0, ErrorCode::InvalidConfig, "bad fine-tuning settings");
}

std::map<std::string, std::string> ExperimentConfig::to_kv() const {
  std::map<std::string, std::string> m;
  m["method"] = to_string(method);
  m["seeds"] = join_seeds(seeds);
  m["output_dir"] = output_dir;

  m["data.manifest"] = manifest;
  m["data.writers"] = std::to_string(synth.n_writers);
  m["data.words_per_writer"] = std::to_string(synth.words_per_writer);
  m["data.val_writers"] = std::to_string(synth.val_writers);
  m["data.test_writers"] = std::to_string(synth.test_writers);
  m["data.height"] = std::to_string(synth.height);
  m["data.width"] = std::to_string(synth.width);
  m["data.seed"] = std::to_string(synth.seed);
  m["data.lexicon_size"] = std::to_string(lexicon_size);

  auto mk = model.to_kv();
  if (auto_vocab) mk["vocab"] = "auto";
  m.merge(with_prefix(mk, "model."));
  augment.write_kv(m, "augment.");
  auto mm = meta.to_kv();
  drop_augment(mm);
  m.merge(with_prefix(mm, "meta."));
  auto cm = codes.to_kv();
  drop_augment(cm);
  m.merge(with_prefix(cm, "codes."));

  m["train.base_steps"] = std::to_string(base_steps);
  m["train.batch"] = std::to_string(batch);
  m["train.lr"] = kv::format(lr);
  m["train.max_grad_norm"] = kv::format(max_grad_norm);
  m["train.meta_steps"] = std::to_string(meta_steps);
  m["train.init"] = init;
  m["eval.runs"] = std::to_string(eval_runs);
  m["eval.finetune_steps"] = std::to_string(finetune_steps);
  m["eval.finetune_lr"] = kv::format(finetune_lr);
  return m;
}

ExperimentConfig ExperimentConfig::from_kv(const std::map<std::string, std::string>& m) {
  ExperimentConfig c;
  const auto known = c.to_kv();
  for (const auto& [k, v] : m)
    require(known.count(k), ErrorCode::InvalidConfig, "unknown config key '" + k + "'");

  c.method = method_from_string(kv::get_string(m, "method", to_string(c.method)));
  if (m.count("seeds")) c.seeds = parse_seeds(m.at("seeds"));
  c.output_dir = kv::get_string(m, "output_dir", c.output_dir);

  c.manifest = kv::get_string(m, "data.manifest", c.manifest);
  c.synth.n_writers = kv::get_int(m, "data.writers", c.synth.n_writers);
  c.synth.words_per_writer = kv::get_int(m, "data.words_per_writer", c.synth.words_per_writer);
  c.synth.val_writers = kv::get_int(m, "data.val_writers", c.synth.val_writers);
  c.synth.test_writers = kv::get_int(m, "data.test_writers", c.synth.test_writers);
  c.synth.height = kv::get_int(m, "data.height", c.synth.height);
  c.synth.width = kv::get_int(m, "data.width", c.synth.width);
  c.synth.seed = static_cast<std::uint64_t>(kv::get_int(m, "data.seed", static_cast<std::int64_t>(c.synth.seed)));
  c.lexicon_size = kv::get_int(m, "data.lexicon_size", c.lexicon_size);

  auto mk = section(m, "model.");
  c.auto_vocab = kv::get_string(mk, "vocab", "auto") == "auto";
  if (c.auto_vocab) mk.erase("vocab");
  c.model = models::ModelConfig::from_kv(mk);

  c.augment = data::AugmentConfig::read_kv(m, "augment.");
  c.meta = meta::MetaConfig::from_kv(section(m, "meta."));
  if (!m.count("meta.variant")) c.meta.variant = variant_of(c.method);
  c.meta.augment = c.augment;
  c.codes = codes::CodeTrainConfig::from_kv(section(m, "codes."));
  c.codes.aug = c.augment;

  c.base_steps = kv::get_int(m, "train.base_steps", c.base_steps);
  c.batch = kv::get_int(m, "train.batch", c.batch);
  c.lr = kv::get_double(m, "train.lr", c.lr);
  c.max_grad_norm = kv::get_double(m, "train.max_grad_norm", c.max_grad_norm);
  c.meta_steps = kv::get_int(m, "train.meta_steps", c.meta_steps);
  c.init = kv::get_string(m, "train.init", c.init);
  c.eval_runs = kv::get_int(m, "eval.runs", c.eval_runs);
  c.finetune_steps = kv::get_int(m, "eval.finetune_steps", c.finetune_steps);
  c.finetune_lr = kv::get_double(m, "eval.finetune_lr", c.finetune_lr);
  c.validate();
  return c;
}

std::map<std::string, std::string> parse_kv_text(const std::string& text, const std::string& origin) {
  std::map<std::string, std::string> m;
  std::stringstream ss(text);
  std::string line;
  for (int no = 1; std::getline(ss, line); ++no) {
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorCode::InvalidConfig,
            origin + ":" + std::to_string(no) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    require(!key.empty(), ErrorCode::InvalidConfig, origin + ":" + std::to_string(no) + ": empty key");
    require(!m.count(key), ErrorCode::InvalidConfig, origin + ":" + std::to_string(no) + ": '" + key + "' set twice");
    m[key] = trim(line.substr(eq + 1));
  }
  return m;
}

std::string format_kv_text(const std::map<std::string, std::string>& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

namespace {

ExperimentConfig apply(std::map<std::string, std::string> m, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    require(eq != std::string::npos, ErrorCode::InvalidConfig, "override '" + o + "' is not key=value");
    m[trim(o.substr(0, eq))] = trim(o.substr(eq + 1));
  }
  return ExperimentConfig::from_kv(m);
}

}  // namespace

ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::InvalidConfig, "cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return apply(parse_kv_text(ss.str(), path.string()), overrides);
}

ExperimentConfig config_from_overrides(const std::vector<std::string>& overrides) { return apply({}, overrides); }

std::filesystem::path output_root() {
  if (const char* root = std::getenv("HTRLAB_OUTPUT_ROOT"); root && *root) return root;
  return std::filesystem::current_path();
}

std::filesystem::path resolve_output(const std::string& dir) {
  const std::filesystem::path p(dir);
  return p.is_absolute() ? p : output_root() / p;
}

}  // namespace htrlab::app
