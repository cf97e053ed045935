#include "htrlab/codes/codes.hpp"

#include <algorithm>
#include <cmath>

#include "htrlab/autodiff/ops.hpp"
#include "htrlab/autodiff/tape.hpp"
#include "htrlab/error.hpp"
#include "htrlab/io/bundle.hpp"
#include "htrlab/kv.hpp"

namespace htrlab::codes {

using namespace htrlab::ad;
using models::BnModeGuard;

namespace {

std::vector<Tensor> frozen_params(const Model& model) {
  std::vector<Tensor> ps;
  ps.reserve(model.params().size());
  for (const auto& p : model.params()) ps.push_back(p.detach());
  return ps;
}

Tensor random_code(std::int64_t size, double sigma, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(size));
  for (double& x : v) x = rng.normal(0.0, sigma);
  return Tensor::from({size}, std::move(v));
}

std::vector<double> to_vector(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

std::vector<const data::Image*> images_of(const data::Dataset& ds, const std::vector<std::size_t>& idx) {
  std::vector<const data::Image*> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(&ds.samples[i].image);
  return out;
}

}  // namespace

std::string to_string(CodeKind k) {
  switch (k) {
    case CodeKind::Learned: return "learned";
    case CodeKind::Hinge: return "hinge";
    case CodeKind::Style: return "style";
    case CodeKind::Zero: return "zero";
  }
  return "zero";
}

CodeKind code_kind_from_string(const std::string& s) {
  if (s == "learned") return CodeKind::Learned;
  if (s == "hinge") return CodeKind::Hinge;
  if (s == "style") return CodeKind::Style;
  if (s == "zero") return CodeKind::Zero;
  fail(ErrorCode::InvalidConfig, "unknown code kind '" + s + "'");
}

// ---------------------------------------------------------------------------
// Adapter

CodeAdapter::CodeAdapter(const Model& model, std::int64_t code_size, std::int64_t hidden, std::uint64_t seed)
    : code_size_(code_size), hidden_(hidden) {
  require(code_size >= 1 && hidden >= 1, ErrorCode::InvalidConfig, "code and hidden sizes must be >= 1");
  Rng rng(seed);
  const auto channels = model.bn_channels();
  for (std::size_t l = 0; l < channels.size(); ++l) {
    for (const char* head : {"beta", "gamma"}) {
      const std::string base = "cbn." + std::to_string(l) + "." + head + ".";
      const double a = std::sqrt(6.0 / static_cast<double>(code_size + hidden));
      std::vector<double> w(static_cast<std::size_t>(code_size * hidden));
      for (double& x : w) x = rng.uniform(-a, a);
      names_.push_back(base + "w1");
      params_.push_back(Tensor::from({code_size, hidden}, std::move(w)));
      names_.push_back(base + "b1");
      params_.push_back(Tensor::zeros({hidden}));
      names_.push_back(base + "w2");
      params_.push_back(Tensor::zeros({hidden, channels[l]}));
      names_.push_back(base + "b2");
      params_.push_back(Tensor::zeros({channels[l]}));
    }
  }
  for (auto& p : params_) p.set_requires_grad(true);
}

std::vector<models::BnModulation> CodeAdapter::deltas(const Tensor& code) const {
  require(code.numel() == code_size_, ErrorCode::ShapeMismatch,
          "code has " + std::to_string(code.numel()) + " values, adapter expects " + std::to_string(code_size_));
  const Tensor x = reshape(code, {1, code_size_});
  auto mlp = [&](std::size_t at) {
    const Tensor h = tanh(matmul(x, params_[at]) + params_[at + 1]);
    const Tensor y = matmul(h, params_[at + 2]) + params_[at + 3];
    return reshape(y, {params_[at + 3].numel()});
  };
  std::vector<models::BnModulation> out(layers());
  for (std::size_t l = 0; l < out.size(); ++l) {
    out[l].d_beta = mlp(8 * l);
    out[l].d_gamma = mlp(8 * l + 4);
  }
  return out;
}

Tensor code_loss(Model& model, const CodeAdapter& adapter, const Tensor& code, const data::Batch& batch, bool dropout,
                 Rng* rng) {
  BnModeGuard bn(model, nn::StatsMode::RunningStats);
  const auto deltas = adapter.deltas(code);
  models::ForwardOptions opt;
  opt.training = dropout;
  opt.rng = rng;
  opt.bn_deltas = &deltas;
  return models::batch_loss(model, frozen_params(model), batch.images, batch.texts, opt);
}

// ---------------------------------------------------------------------------
// Config

void CodeTrainConfig::validate() const {
  require(steps >= 0 && batch >= 1, ErrorCode::InvalidConfig, "code training needs steps >= 0 and batch >= 1");
  require(lr > 0.0 && max_grad_norm > 0.0, ErrorCode::InvalidConfig, "code learning rate and clip must be positive");
  require(hidden >= 1 && code_size >= 1 && clusters >= 1, ErrorCode::InvalidConfig,
          "code sizes and cluster count must be >= 1");
  require(new_writer_steps >= 0 && init_sigma >= 0.0, ErrorCode::InvalidConfig, "bad new-writer code settings");
  aug.validate();
}

std::map<std::string, std::string> CodeTrainConfig::to_kv() const {
  std::map<std::string, std::string> m;
  m["steps"] = std::to_string(steps);
  m["batch"] = std::to_string(batch);
  m["lr"] = kv::format(lr);
  m["max_grad_norm"] = kv::format(max_grad_norm);
  m["hidden"] = std::to_string(hidden);
  m["code_size"] = std::to_string(code_size);
  m["clusters"] = std::to_string(clusters);
  m["new_writer_steps"] = std::to_string(new_writer_steps);
  m["init_sigma"] = kv::format(init_sigma);
  m["augment"] = kv::format(augment);
  aug.write_kv(m, "augment.");
  return m;
}

CodeTrainConfig CodeTrainConfig::from_kv(const std::map<std::string, std::string>& m) {
  CodeTrainConfig c;
  c.steps = kv::get_int(m, "steps", c.steps);
  c.batch = kv::get_int(m, "batch", c.batch);
  c.lr = kv::get_double(m, "lr", c.lr);
  c.max_grad_norm = kv::get_double(m, "max_grad_norm", c.max_grad_norm);
  c.hidden = kv::get_int(m, "hidden", c.hidden);
  c.code_size = kv::get_int(m, "code_size", c.code_size);
  c.clusters = kv::get_int(m, "clusters", c.clusters);
  c.new_writer_steps = kv::get_int(m, "new_writer_steps", c.new_writer_steps);
  c.init_sigma = kv::get_double(m, "init_sigma", c.init_sigma);
  c.augment = kv::get_bool(m, "augment", c.augment);
  c.aug = data::AugmentConfig::read_kv(m, "augment.");
  return c;
}

std::int64_t code_size_for(CodeKind kind, const CodeTrainConfig& cfg) {
  return kind == CodeKind::Hinge ? kHingeSize : cfg.code_size;
}

// ---------------------------------------------------------------------------
// Training

CodeOptimizer make_code_optimizer(const CodeTable& table, double lr) {
  nn::AdamConfig ac;
  ac.lr = lr;
  CodeOptimizer o{nn::Adam(ac), {}};
  if (table.trainable) o.codes.assign(table.codes.size(), nn::Adam(ac));
  return o;
}

double code_train_step(Model& model, CodeAdapter& adapter, CodeTable& table, const data::Dataset& ds,
                       const std::vector<std::size_t>& idx, CodeOptimizer& opt, Rng& rng,
                       const CodeTrainConfig& cfg) {
  require(!idx.empty(), ErrorCode::InsufficientSamples, "empty code-training batch");
  const std::string& writer = ds.samples[idx.front()].writer;
  for (std::size_t i : idx)
    require(ds.samples[i].writer == writer, ErrorCode::MixedWriterBatch,
            "code-training batch mixes writers '" + writer + "' and '" + ds.samples[i].writer + "'");
  const auto slot = table.slot_of.find(writer);
  require(slot != table.slot_of.end(), ErrorCode::UnknownWriter, "no code slot for writer '" + writer + "'");
  Tensor& code = table.codes[slot->second];

  const data::Batch batch = data::make_batch(ds, idx, cfg.augment ? &rng : nullptr, cfg.aug);
  const Tensor loss = code_loss(model, adapter, code, batch, true, &rng);
  require(std::isfinite(loss.item()), ErrorCode::NonFiniteLoss, "code-training loss is not finite");

  std::vector<Tensor> wrt = adapter.params();
  if (table.trainable) wrt.push_back(code);
  auto grads = gradients(loss, wrt).grads;
  nn::clip_global_norm(grads, cfg.max_grad_norm);
  if (table.trainable) {
    std::vector<Tensor> c{code}, g{grads.back()};
    opt.codes[slot->second].step(c, g);
    grads.pop_back();
  }
  opt.adapter.step(adapter.params(), grads);
  return loss.item();
}

Codebook train_codes(Model& model, const data::Dataset& ds, CodeKind kind, const CodeTrainConfig& cfg,
                     std::uint64_t seed, std::vector<double>* losses) {
  cfg.validate();
  const auto by_writer = ds.by_writer(data::Split::Train);
  require(!by_writer.empty(), ErrorCode::InsufficientSamples, "no training writers for code training");

  Codebook book;
  book.kind = kind;
  book.config = cfg;
  const std::int64_t m = code_size_for(kind, cfg);
  book.adapter = CodeAdapter(model, m, cfg.hidden, Rng::derive(seed, 0xC0DE));

  Rng init(Rng::derive(seed, 0x1A17));
  CodeTable table;
  switch (kind) {
    case CodeKind::Learned:
      table.trainable = true;
      for (const auto& [w, idx] : by_writer) {
        table.slot_of[w] = table.codes.size();
        table.codes.push_back(random_code(m, cfg.init_sigma, init));
      }
      break;
    case CodeKind::Hinge:
      for (const auto& [w, idx] : by_writer) {
        table.slot_of[w] = table.codes.size();
        table.codes.push_back(Tensor::from({m}, writer_hinge(images_of(ds, idx))));
      }
      break;
    case CodeKind::Style: {
      table.trainable = true;
      std::vector<std::vector<double>> hinges;
      std::vector<std::string> names;
      for (const auto& [w, idx] : by_writer) {
        names.push_back(w);
        hinges.push_back(writer_hinge(images_of(ds, idx)));
      }
      Rng krng(Rng::derive(seed, 0x4B4D));
      const auto km = kmeans(hinges, cfg.clusters, krng);
      book.centroids = km.centroids;
      for (std::int64_t c = 0; c < cfg.clusters; ++c) table.codes.push_back(random_code(m, cfg.init_sigma, init));
      for (std::size_t i = 0; i < names.size(); ++i)
        table.slot_of[names[i]] = static_cast<std::size_t>(km.assignment[i]);
      break;
    }
    case CodeKind::Zero:
      table.codes.push_back(Tensor::zeros({m}));
      for (const auto& [w, idx] : by_writer) table.slot_of[w] = 0;
      break;
  }
  if (table.trainable)
    for (auto& c : table.codes) c.set_requires_grad(true);

  // The schedule depends on the seed only, so every kind sees the same
  // writers, batches, augmentations and dropout masks.
  CodeOptimizer opt = make_code_optimizer(table, cfg.lr);
  Rng rng(Rng::derive(seed, 0x7A11));
  std::vector<std::string> writers;
  for (const auto& [w, idx] : by_writer) writers.push_back(w);
  for (std::int64_t s = 0; s < cfg.steps; ++s) {
    const std::string& w = writers[rng.index(writers.size())];
    auto idx = by_writer.at(w);
    rng.shuffle(idx);
    idx.resize(std::min<std::size_t>(idx.size(), static_cast<std::size_t>(cfg.batch)));
    std::sort(idx.begin(), idx.end());
    const double l = code_train_step(model, book.adapter, table, ds, idx, opt, rng, cfg);
    if (losses) losses->push_back(l);
  }

  for (auto& p : book.adapter.params()) p = p.detach().set_requires_grad(true);
  if (kind == CodeKind::Learned)
    for (const auto& [w, slot] : table.slot_of) book.writer_codes[w] = to_vector(table.codes[slot]);
  if (kind == CodeKind::Style)
    for (const auto& c : table.codes) book.cluster_codes.push_back(to_vector(c));
  return book;
}

WriterCode init_new_writer_code(Model& model, const CodeAdapter& adapter, const data::Batch& support,
                                std::int64_t steps, Rng& rng, double sigma, double lr) {
  require(!support.texts.empty(), ErrorCode::InsufficientSamples, "empty support set for a new writer code");
  require(steps >= 0, ErrorCode::InvalidArgument, "steps must be >= 0");
  Tensor code = random_code(adapter.code_size(), sigma, rng);
  code.set_requires_grad(true);
  nn::AdamConfig ac;
  ac.lr = lr;
  nn::Adam adam(ac);
  std::vector<Tensor> c{code};
  for (std::int64_t s = 0; s < steps; ++s) {
    const Tensor loss = code_loss(model, adapter, code, support);
    require(std::isfinite(loss.item()), ErrorCode::NonFiniteLoss, "new-writer code loss is not finite");
    adam.step(c, gradients(loss, c).grads);
  }
  return WriterCode{to_vector(code), CodeKind::Learned, ""};
}

WriterCode assign_code(const Codebook& book, Model& model, const std::string& writer, const data::Batch& support,
                       const std::vector<const data::Image*>& support_images, Rng& rng) {
  WriterCode out;
  out.kind = book.kind;
  out.id = writer;
  switch (book.kind) {
    case CodeKind::Zero:
      out.values.assign(static_cast<std::size_t>(book.adapter.code_size()), 0.0);
      break;
    case CodeKind::Hinge:
      out.values = writer_hinge(support_images);
      break;
    case CodeKind::Style: {
      const auto c = nearest_centroid(book.centroids, writer_hinge(support_images));
      out.values = book.cluster_codes[static_cast<std::size_t>(c)];
      out.id = "cluster" + std::to_string(c);
      break;
    }
    case CodeKind::Learned: {
      const auto it = book.writer_codes.find(writer);
      if (it != book.writer_codes.end()) {
        out.values = it->second;
        break;
      }
      require(!support.texts.empty(), ErrorCode::UnknownWriter,
              "writer '" + writer + "' has no learned code and no support data");
      out.values = init_new_writer_code(model, book.adapter, support, book.config.new_writer_steps, rng,
                                        book.config.init_sigma, book.config.lr)
                       .values;
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Codebook files

void save_codebook(const std::filesystem::path& path, const Codebook& book) {
  io::Bundle b;
  b.kind = "codebook";
  b.set("codes.kind", to_string(book.kind));
  b.set("codes.code_size", std::to_string(book.adapter.code_size()));
  for (const auto& [k, v] : book.config.to_kv()) b.set("codes.config." + k, v);
  for (std::size_t i = 0; i < book.adapter.params().size(); ++i)
    b.add(book.adapter.names()[i], book.adapter.params()[i]);
  for (const auto& [w, v] : book.writer_codes)
    b.add("writer." + w, {static_cast<std::int64_t>(v.size())}, v);
  for (std::size_t c = 0; c < book.centroids.size(); ++c) {
    b.add("centroid." + std::to_string(c), {static_cast<std::int64_t>(book.centroids[c].size())}, book.centroids[c]);
    b.add("cluster." + std::to_string(c), {static_cast<std::int64_t>(book.cluster_codes[c].size())},
          book.cluster_codes[c]);
  }
  io::write_bundle(path, b);
}

Codebook load_codebook(const std::filesystem::path& path, const Model& model) {
  const io::Bundle b = io::read_bundle(path, "codebook");
  Codebook book;
  book.kind = code_kind_from_string(b.get("codes.kind"));
  std::map<std::string, std::string> cfg;
  const std::string prefix = "codes.config.";
  for (const auto& [k, v] : b.meta)
    if (k.starts_with(prefix)) cfg[k.substr(prefix.size())] = v;
  book.config = CodeTrainConfig::from_kv(cfg);
  const std::int64_t m = kv::get_int({{"m", b.get("codes.code_size")}}, "m", 0);
  book.adapter = CodeAdapter(model, m, book.config.hidden, 0);
  for (std::size_t i = 0; i < book.adapter.params().size(); ++i) {
    const auto& name = book.adapter.names()[i];
    require(b.has_array(name), ErrorCode::CheckpointMismatch, path.string() + ": missing adapter tensor " + name);
    Tensor t = b.tensor(name);
    require(t.shape() == book.adapter.params()[i].shape(), ErrorCode::CheckpointMismatch,
            path.string() + ": adapter tensor " + name + " does not fit the model");
    book.adapter.params()[i] = t.set_requires_grad(true);
  }
  for (const auto& a : b.arrays) {
    if (a.name.starts_with("writer.")) book.writer_codes[a.name.substr(7)] = a.values;
  }
  for (std::size_t c = 0; b.has_array("centroid." + std::to_string(c)); ++c) {
    book.centroids.push_back(b.array("centroid." + std::to_string(c)).values);
    book.cluster_codes.push_back(b.array("cluster." + std::to_string(c)).values);
  }
  return book;
}

}  // namespace htrlab::codes
