#include "htrlab/meta/meta.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "htrlab/autodiff/ops.hpp"
#include "htrlab/autodiff/tape.hpp"
#include "htrlab/error.hpp"
#include "htrlab/io/bundle.hpp"
#include "htrlab/kv.hpp"

namespace htrlab::meta {

using namespace htrlab::ad;

namespace {

using models::BnModeGuard;

std::uint64_t fnv(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Tensor xavier(Rng& rng, std::int64_t fan_in, std::int64_t fan_out) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(static_cast<std::size_t>(fan_in * fan_out));
  for (double& x : v) x = rng.uniform(-a, a);
  return Tensor::from({fan_in, fan_out}, std::move(v));
}

bool all_finite(const std::vector<Tensor>& ts) {
  for (const auto& t : ts)
    for (double v : t.data())
      if (!std::isfinite(v)) return false;
  return true;
}

Tensor inner_loss(Model& model, std::span<const Tensor> params, const Batch& support, const InstanceWeightNet* iw,
                  const models::ForwardOptions& opt) {
  const auto& c = model.config();
  const auto tb = nn::make_teacher_batch(c.loss.vocab, support.texts);
  const auto r = models::forward(model, params, support.images, tb.inputs, opt);
  Tensor gamma;
  if (iw) gamma = iw->weights(r.logits, r.features, tb.targets, c.loss.label_smoothing);
  const Tensor loss =
      nn::sequence_cross_entropy(r.logits, tb.targets, iw ? &gamma : nullptr, c.loss.label_smoothing);
  require(std::isfinite(loss.item()), ErrorCode::NonFiniteLoss, "inner-loop loss is not finite");
  return loss;
}

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::MAML: return "maml";
    case Variant::MAML_LLR: return "maml-llr";
    case Variant::MetaHTR: return "metahtr";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  if (s == "maml") return Variant::MAML;
  if (s == "maml-llr") return Variant::MAML_LLR;
  if (s == "metahtr") return Variant::MetaHTR;
  fail(ErrorCode::InvalidConfig, "unknown meta variant '" + s + "'");
}

void MetaConfig::validate() const {
  require(shots >= 1 && ways >= 1 && inner_steps >= 1, ErrorCode::InvalidConfig,
          "shots, ways and inner_steps must be at least 1");
  require(inner_lr >= 0.0 && std::isfinite(inner_lr), ErrorCode::InvalidConfig, "inner_lr must be >= 0");
  require(outer_lr > 0.0 && std::isfinite(outer_lr), ErrorCode::InvalidConfig, "outer_lr must be > 0");
  require(max_grad_norm > 0.0, ErrorCode::InvalidConfig, "max_grad_norm must be > 0");
  require(weight_features >= 1 && weight_hidden >= 1, ErrorCode::InvalidConfig, "weight-net widths must be >= 1");
  augment.validate();
}

std::map<std::string, std::string> MetaConfig::to_kv() const {
  std::map<std::string, std::string> m;
  m["shots"] = std::to_string(shots);
  m["ways"] = std::to_string(ways);
  m["inner_steps"] = std::to_string(inner_steps);
  m["inner_lr"] = kv::format(inner_lr);
  m["outer_lr"] = kv::format(outer_lr);
  m["variant"] = to_string(variant);
  m["max_grad_norm"] = kv::format(max_grad_norm);
  m["outer_dropout"] = kv::format(outer_dropout);
  m["first_order"] = kv::format(first_order);
  m["weight_features"] = std::to_string(weight_features);
  m["weight_hidden"] = std::to_string(weight_hidden);
  augment.write_kv(m, "augment.");
  return m;
}

MetaConfig MetaConfig::from_kv(const std::map<std::string, std::string>& m) {
  MetaConfig c;
  c.shots = kv::get_int(m, "shots", c.shots);
  c.ways = kv::get_int(m, "ways", c.ways);
  c.inner_steps = kv::get_int(m, "inner_steps", c.inner_steps);
  c.inner_lr = kv::get_double(m, "inner_lr", c.inner_lr);
  c.outer_lr = kv::get_double(m, "outer_lr", c.outer_lr);
  c.variant = variant_from_string(kv::get_string(m, "variant", to_string(c.variant)));
  c.max_grad_norm = kv::get_double(m, "max_grad_norm", c.max_grad_norm);
  c.outer_dropout = kv::get_bool(m, "outer_dropout", c.outer_dropout);
  c.first_order = kv::get_bool(m, "first_order", c.first_order);
  c.weight_features = kv::get_int(m, "weight_features", c.weight_features);
  c.weight_hidden = kv::get_int(m, "weight_hidden", c.weight_hidden);
  c.augment = data::AugmentConfig::read_kv(m, "augment.");
  return c;
}

// ---------------------------------------------------------------------------
// Episodes

Episode sample_episode(const data::Dataset& ds, const std::string& writer, std::int64_t shots, Rng& rng,
                       EpisodeMode mode) {
  require(shots >= 1, ErrorCode::InvalidArgument, "shots must be >= 1");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.samples[i].writer == writer) idx.push_back(i);
  require(!idx.empty(), ErrorCode::UnknownWriter, "no samples for writer '" + writer + "'");
  const auto K = static_cast<std::size_t>(shots);
  const std::size_t need = mode == EpisodeMode::Train ? 2 * K : K + 1;
  require(idx.size() >= need, ErrorCode::InsufficientSamples,
          "writer '" + writer + "' has " + std::to_string(idx.size()) + " samples, the episode needs " +
              std::to_string(need));
  rng.shuffle(idx);
  Episode e;
  e.writer = writer;
  e.support.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(K));
  const std::size_t end = mode == EpisodeMode::Train ? 2 * K : idx.size();
  e.query.assign(idx.begin() + static_cast<std::ptrdiff_t>(K), idx.begin() + static_cast<std::ptrdiff_t>(end));
  return e;
}

// ---------------------------------------------------------------------------
// Learnable rates and instance weights

LayerLearningRates::LayerLearningRates(const Model& model, double rate) : names_(model.names()) {
  require(rate >= 0.0, ErrorCode::InvalidConfig, "layer learning rates must start >= 0");
  // Inverse softplus; expm1 keeps small rates accurate.
  const double raw = rate > 0.0 ? std::log(std::expm1(rate)) : -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < names_.size(); ++i) {
    raw_.push_back(Tensor::scalar(raw));
    raw_.back().set_requires_grad(true);
  }
}

std::vector<Tensor> LayerLearningRates::rates() const {
  std::vector<Tensor> out;
  for (const auto& r : raw_) out.push_back(softplus(r));
  return out;
}

std::vector<double> LayerLearningRates::values() const {
  NoGradGuard ng;
  std::vector<double> out;
  for (const auto& r : rates()) out.push_back(r.item());
  return out;
}

const std::vector<std::string>& InstanceWeightNet::param_names() {
  static const std::vector<std::string> names{"iw.w1", "iw.b1", "iw.w2", "iw.b2", "iw.w3", "iw.b3"};
  return names;
}

InstanceWeightNet::InstanceWeightNet(const Model& model, std::int64_t feature_width, std::int64_t hidden,
                                     std::uint64_t seed) {
  const Tensor& w = model.params()[model.classifier_indices()[0]];
  const std::int64_t F = w.dim(0), V = w.dim(1);
  const std::int64_t raw = 2 * (F * V + V);
  Rng rng(seed);
  // Gaussian entries with variance 1/width roughly preserve vector norms.
  std::vector<double> p(static_cast<std::size_t>(raw * feature_width));
  const double sd = 1.0 / std::sqrt(static_cast<double>(feature_width));
  for (double& x : p) x = rng.normal(0.0, sd);
  projection_ = Tensor::from({raw, feature_width}, std::move(p));
  params_ = {xavier(rng, feature_width, hidden), Tensor::zeros({hidden}), xavier(rng, hidden, hidden),
             Tensor::zeros({hidden}),           xavier(rng, hidden, 1),    Tensor::zeros({1})};
  for (auto& t : params_) t.set_requires_grad(true);
}

Tensor InstanceWeightNet::features(const Tensor& logits, const Tensor& classifier_inputs,
                                   const nn::TokenBatch& targets, double label_smoothing) const {
  const std::int64_t N = logits.dim(0), T = logits.dim(1), V = logits.dim(2);
  const std::int64_t F = classifier_inputs.dim(2);
  const std::int64_t D = F * V + V;  // one flattened classifier gradient
  require(raw_width() == 2 * D, ErrorCode::ShapeMismatch, "instance-weight projection does not fit the classifier");
  const std::int64_t W = projection_.dim(1);
  const double* P = projection_.ptr();
  const double* lg = logits.ptr();
  const double* fx = classifier_inputs.ptr();

  // Per-step projections of the step gradient through both halves of P.
  std::vector<double> own(static_cast<std::size_t>(N * T * W), 0.0);
  std::vector<double> total(static_cast<std::size_t>(W), 0.0);
  std::vector<double> r(static_cast<std::size_t>(V)), tmp(static_cast<std::size_t>(W));
  const double off = label_smoothing / static_cast<double>(V);
  for (std::int64_t b = 0; b < N; ++b) {
    std::int64_t kept = 0;
    for (std::int64_t t = 0; t < T; ++t) kept += targets.at(b, t) != nn::Vocabulary::kPad;
    const double share = kept ? 1.0 / static_cast<double>(kept * N) : 0.0;
    for (std::int64_t t = 0; t < T; ++t) {
      const auto y = targets.at(b, t);
      if (y == nn::Vocabulary::kPad) continue;
      const double* row = lg + (b * T + t) * V;
      const double mx = *std::max_element(row, row + V);
      double z = 0.0;
      for (std::int64_t v = 0; v < V; ++v) z += std::exp(row[v] - mx);
      for (std::int64_t v = 0; v < V; ++v)
        r[static_cast<std::size_t>(v)] = std::exp(row[v] - mx) / z - off - (v == y ? 1.0 - label_smoothing : 0.0);
      const double* f = fx + (b * T + t) * F;
      double* o = own.data() + (b * T + t) * W;
      std::fill(tmp.begin(), tmp.end(), 0.0);
      // Weight part: sum_i f_i sum_v r_v P[i*V+v]; bias part: sum_v r_v P[F*V+v].
      for (int half = 0; half < 2; ++half) {
        const double* Ph = P + half * D * W;
        double* dst = half == 0 ? o : tmp.data();
        for (std::int64_t i = 0; i < F; ++i) {
          const double fi = f[i];
          if (fi == 0.0) continue;
          for (std::int64_t v = 0; v < V; ++v) {
            const double c = fi * r[static_cast<std::size_t>(v)];
            const double* prow = Ph + (i * V + v) * W;
            for (std::int64_t k = 0; k < W; ++k) dst[k] += c * prow[k];
          }
        }
        for (std::int64_t v = 0; v < V; ++v) {
          const double c = r[static_cast<std::size_t>(v)];
          const double* prow = Ph + (F * V + v) * W;
          for (std::int64_t k = 0; k < W; ++k) dst[k] += c * prow[k];
        }
      }
      for (std::int64_t k = 0; k < W; ++k) total[static_cast<std::size_t>(k)] += share * tmp[static_cast<std::size_t>(k)];
    }
  }
  for (std::int64_t b = 0; b < N; ++b)
    for (std::int64_t t = 0; t < T; ++t) {
      if (targets.at(b, t) == nn::Vocabulary::kPad) continue;
      double* o = own.data() + (b * T + t) * W;
      for (std::int64_t k = 0; k < W; ++k) o[k] += total[static_cast<std::size_t>(k)];
    }
  return Tensor::from({N * T, W}, std::move(own));
}

Tensor InstanceWeightNet::weights(const Tensor& logits, const Tensor& classifier_inputs,
                                  const nn::TokenBatch& targets, double label_smoothing) const {
  const Tensor x = features(logits, classifier_inputs, targets, label_smoothing);
  const auto& p = params_;
  const Tensor h1 = relu(matmul(x, p[0]) + p[1]);
  const Tensor h2 = relu(matmul(h1, p[2]) + p[3]);
  const Tensor g = sigmoid(matmul(h2, p[4]) + p[5]);
  return reshape(g, {logits.dim(0), logits.dim(1)});
}

// ---------------------------------------------------------------------------
// Inner loop

Tensor support_loss(Model& model, std::span<const Tensor> params, const Batch& support, const Tensor* gamma,
                    const models::ForwardOptions& opt) {
  const auto& c = model.config();
  const auto tb = nn::make_teacher_batch(c.loss.vocab, support.texts);
  const auto r = models::forward(model, params, support.images, tb.inputs, opt);
  return nn::sequence_cross_entropy(r.logits, tb.targets, gamma, c.loss.label_smoothing);
}

std::vector<Tensor> gradient_step(std::span<const Tensor> theta, const Tensor& loss, std::span<const Tensor> rates,
                                  bool create_graph) {
  require(rates.size() == 1 || rates.size() == theta.size(), ErrorCode::ShapeMismatch,
          "need one inner rate or one per parameter tensor");
  const std::vector<Tensor> wrt(theta.begin(), theta.end());
  const auto grads = gradients(loss, wrt, create_graph);
  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (std::size_t i = 0; i < wrt.size(); ++i) {
    const Tensor& rate = rates.size() == 1 ? rates[0] : rates[i];
    out.push_back(wrt[i] - rate * grads[i]);
  }
  return out;
}

AdaptedParams inner_adapt(Model& model, std::span<const Tensor> theta, const Batch& support, const MetaConfig& cfg,
                          const LayerLearningRates* lrs, const InstanceWeightNet* iw, bool create_graph,
                          const std::string& writer) {
  const bool needs_rates = cfg.variant != Variant::MAML;
  require(needs_rates == (lrs != nullptr), ErrorCode::InvalidConfig,
          "layer learning rates are used by maml-llr and metahtr only");
  require((cfg.variant == Variant::MetaHTR) == (iw != nullptr), ErrorCode::InvalidConfig,
          "instance weights are used by metahtr only");
  require(support.texts.size() >= 1, ErrorCode::InsufficientSamples, "empty support set");
  if (lrs)
    require(lrs->size() == theta.size(), ErrorCode::ShapeMismatch, "one layer rate per parameter tensor expected");

  BnModeGuard bn(model, nn::StatsMode::RunningStats);
  const std::vector<Tensor> rates = lrs ? lrs->rates() : std::vector<Tensor>{Tensor::scalar(cfg.inner_lr)};
  std::vector<Tensor> cur(theta.begin(), theta.end());
  for (std::int64_t s = 0; s < cfg.inner_steps; ++s) {
    const Tensor loss = inner_loss(model, cur, support, iw, {});
    cur = gradient_step(cur, loss, rates, create_graph);
  }
  AdaptedParams a;
  a.names = model.names();
  a.params = std::move(cur);
  a.writer = writer;
  a.variant = cfg.variant;
  a.inner_steps = cfg.inner_steps;
  return a;
}

AdaptedParams adapt_at_inference(Model& model, const Batch& support, const MetaConfig& cfg,
                                 const LayerLearningRates* lrs, const InstanceWeightNet* iw,
                                 const std::string& writer) {
  AdaptedParams a = inner_adapt(model, model.params(), support, cfg, lrs, iw, false, writer);
  for (auto& p : a.params) p = p.detach();
  return a;
}

AdaptedParams finetune_baseline(Model& model, const Batch& support, std::int64_t steps, double lr,
                                const std::string& writer) {
  require(steps >= 0, ErrorCode::InvalidArgument, "steps must be >= 0");
  require(support.texts.size() >= 1, ErrorCode::InsufficientSamples, "empty support set");
  BnModeGuard bn(model, nn::StatsMode::RunningStats);
  std::vector<Tensor> params = model.params();
  const auto idx = model.classifier_indices();
  std::vector<Tensor> tuned;
  for (std::size_t i : idx) {
    params[i] = params[i].clone();
    params[i].set_requires_grad(true);
    tuned.push_back(params[i]);
  }
  for (std::size_t i = 0; i < params.size(); ++i)
    if (std::find(idx.begin(), idx.end(), i) == idx.end()) params[i] = params[i].detach();

  nn::AdamConfig ac;
  ac.lr = lr;
  nn::Adam adam(ac);  // fresh state for every writer
  for (std::int64_t s = 0; s < steps; ++s) {
    const Tensor loss = support_loss(model, params, support, nullptr);
    require(std::isfinite(loss.item()), ErrorCode::NonFiniteLoss, "fine-tuning loss is not finite");
    const auto g = gradients(loss, tuned).grads;
    adam.step(tuned, g);
  }
  AdaptedParams a;
  a.names = model.names();
  a.params = model.params();
  for (std::size_t k = 0; k < idx.size(); ++k) a.params[idx[k]] = tuned[k].detach();
  a.writer = writer;
  a.variant = Variant::MAML;
  a.inner_steps = steps;
  return a;
}

// ---------------------------------------------------------------------------
// Outer loop

MetaLearner::MetaLearner(Model model, MetaConfig cfg, std::uint64_t seed)
    : model_(std::move(model)), cfg_(std::move(cfg)), sampler_(Rng::derive(seed, 0x5A3D)) {
  cfg_.validate();
  model_.set_trainable(true);
  if (cfg_.variant != Variant::MAML) lrs_.emplace(model_, cfg_.inner_lr);
  if (cfg_.variant == Variant::MetaHTR)
    iw_.emplace(model_, cfg_.weight_features, cfg_.weight_hidden, Rng::derive(seed, 0x1F));
  nn::AdamConfig ac;
  ac.lr = cfg_.outer_lr;
  opt_ = nn::Adam(ac);
}

std::vector<Tensor*> MetaLearner::meta_parameters() {
  std::vector<Tensor*> out;
  for (auto& p : model_.params()) out.push_back(&p);
  if (lrs_)
    for (auto& r : lrs_->raw()) out.push_back(&r);
  if (iw_)
    for (auto& p : iw_->params()) out.push_back(&p);
  return out;
}

std::pair<double, std::vector<Tensor>> MetaLearner::meta_gradient(const data::Dataset& ds,
                                                                  const std::vector<Episode>& episodes, Rng& rng) {
  BnModeGuard bn(model_, nn::StatsMode::RunningStats);
  std::vector<Tensor> wrt;
  for (Tensor* p : meta_parameters()) wrt.push_back(*p);
  std::vector<std::vector<double>> acc(wrt.size());
  for (std::size_t i = 0; i < wrt.size(); ++i) acc[i].assign(static_cast<std::size_t>(wrt[i].numel()), 0.0);

  double total = 0.0;
  for (const auto& ep : episodes) {
    const Batch support = data::make_batch(ds, ep.support, &rng, cfg_.augment);
    const Batch query = data::make_batch(ds, ep.query, &rng, cfg_.augment);
    const AdaptedParams adapted =
        inner_adapt(model_, model_.params(), support, cfg_, rates(), weight_net(), !cfg_.first_order, ep.writer);
    models::ForwardOptions fo;
    fo.training = cfg_.outer_dropout;
    fo.rng = &rng;
    const Tensor loss = support_loss(model_, adapted.params, query, nullptr, fo);
    total += loss.item();
    const auto g = gradients(loss, wrt);
    for (std::size_t i = 0; i < wrt.size(); ++i) {
      const auto d = g[i].data();
      for (std::size_t k = 0; k < d.size(); ++k) acc[i][k] += d[k];
    }
  }
  std::vector<Tensor> grads;
  for (std::size_t i = 0; i < wrt.size(); ++i) grads.push_back(Tensor::from(wrt[i].shape(), std::move(acc[i])));
  return {total, grads};
}

StepResult MetaLearner::step(const data::Dataset& ds, const std::vector<std::string>& writers) {
  std::vector<std::string> eligible;
  const auto need = static_cast<std::size_t>(2 * cfg_.shots);
  for (const auto& w : writers) {
    std::size_t n = 0;
    for (const auto& s : ds.samples) n += s.writer == w;
    if (n >= need) eligible.push_back(w);
  }
  require(eligible.size() >= static_cast<std::size_t>(cfg_.ways), ErrorCode::InsufficientSamples,
          std::to_string(eligible.size()) + " writers have the " + std::to_string(need) +
              " samples an episode needs; ways = " + std::to_string(cfg_.ways));
  sampler_.shuffle(eligible);
  eligible.resize(static_cast<std::size_t>(cfg_.ways));
  std::sort(eligible.begin(), eligible.end());

  std::vector<Episode> episodes;
  for (const auto& w : eligible) episodes.push_back(sample_episode(ds, w, cfg_.shots, sampler_, EpisodeMode::Train));

  StepResult res;
  res.writers = eligible;
  auto [loss, grads] = meta_gradient(ds, episodes, sampler_);
  res.outer_loss = loss;
  if (!std::isfinite(loss) || !all_finite(grads)) {
    res.skipped = true;
    return res;
  }
  res.grad_norm = nn::clip_global_norm(grads, cfg_.max_grad_norm);
  std::vector<Tensor> params;
  for (Tensor* p : meta_parameters()) params.push_back(*p);
  opt_.step(params, grads);
  return res;
}

AdaptedParams MetaLearner::adapt(const Batch& support, const std::string& writer) {
  return adapt_at_inference(model_, support, cfg_, rates(), weight_net(), writer);
}

void MetaLearner::save(const std::filesystem::path& path) const {
  io::Bundle b;
  b.kind = "meta";
  models::add_model(b, model_);
  for (const auto& [k, v] : cfg_.to_kv()) b.set("meta." + k, v);
  b.set("sampler_state", sampler_.state());
  b.set("adam.steps", std::to_string(opt_.steps()));
  if (lrs_)
    for (std::size_t i = 0; i < lrs_->size(); ++i) b.add("lr." + lrs_->names()[i], lrs_->raw()[i]);
  if (iw_) {
    b.add("iw.projection", iw_->projection());
    for (std::size_t i = 0; i < iw_->params().size(); ++i) b.add(InstanceWeightNet::param_names()[i], iw_->params()[i]);
  }
  const auto& m = opt_.first_moments();
  const auto& v = opt_.second_moments();
  for (std::size_t i = 0; i < m.size(); ++i) {
    b.add("adam.m." + std::to_string(i), {static_cast<std::int64_t>(m[i].size())}, m[i]);
    b.add("adam.v." + std::to_string(i), {static_cast<std::int64_t>(v[i].size())}, v[i]);
  }
  io::write_bundle(path, b);
}

MetaLearner MetaLearner::load(const std::filesystem::path& path) {
  const auto b = io::read_bundle(path, "meta");
  std::map<std::string, std::string> mk;
  for (const auto& [k, v] : b.meta)
    if (k.rfind("meta.", 0) == 0) mk[k.substr(5)] = v;
  MetaLearner l(models::model_from_bundle(b, path.string()), MetaConfig::from_kv(mk), 0);
  auto restore = [&](const std::string& name, Tensor& t) {
    require(b.has_array(name), ErrorCode::CheckpointMismatch, path.string() + " lacks '" + name + "'");
    const auto& a = b.array(name);
    require(a.shape == t.shape(), ErrorCode::CheckpointMismatch, "'" + name + "' has the wrong shape");
    t = Tensor::from(a.shape, a.values);
    t.set_requires_grad(true);
  };
  if (l.lrs_)
    for (std::size_t i = 0; i < l.lrs_->size(); ++i) restore("lr." + l.lrs_->names()[i], l.lrs_->raw()[i]);
  if (l.iw_) {
    Tensor proj = l.iw_->projection();
    restore("iw.projection", proj);
    l.iw_->set_projection(proj.detach());
    for (std::size_t i = 0; i < l.iw_->params().size(); ++i)
      restore(InstanceWeightNet::param_names()[i], l.iw_->params()[i]);
  }
  l.sampler_.set_state(b.get("sampler_state"));
  l.opt_.set_steps(std::stoll(b.get("adam.steps")));
  for (std::size_t i = 0; b.has_array("adam.m." + std::to_string(i)); ++i) {
    l.opt_.first_moments().push_back(b.array("adam.m." + std::to_string(i)).values);
    l.opt_.second_moments().push_back(b.array("adam.v." + std::to_string(i)).values);
  }
  return l;
}

// ---------------------------------------------------------------------------
// Evaluation protocol

std::uint64_t protocol_seed(std::uint64_t seed, const std::string& writer, std::int64_t run) {
  return Rng::derive(seed, fnv(writer), static_cast<std::uint64_t>(run));
}

eval::EvalReport evaluate_protocol(Model& model, const data::Dataset& ds, data::Split split, std::int64_t shots,
                                   std::int64_t runs, std::uint64_t seed, const std::string& condition,
                                   const Adapter& adapter) {
  require(runs >= 1, ErrorCode::InvalidArgument, "runs must be >= 1");
  BnModeGuard bn(model, nn::StatsMode::RunningStats);
  eval::EvalReport report;
  report.condition = condition;
  report.seed = seed;
  for (const auto& writer : ds.writers(split)) {
    eval::WriterAccumulator acc(writer);
    for (std::int64_t r = 0; r < runs; ++r) {
      Rng rng(protocol_seed(seed, writer, r));
      const Episode ep = sample_episode(ds, writer, shots, rng, EpisodeMode::Test);
      const Batch support = data::make_batch(ds, ep.support);
      const Batch query = data::make_batch(ds, ep.query);
      const Adaptation a = adapter(support, ep);
      const auto preds =
          models::decode_greedy(model, a.params, query.images, a.bn_deltas.empty() ? nullptr : &a.bn_deltas);
      acc.add_run(preds, query.texts);
    }
    report.rows.push_back(acc.row());
  }
  return report;
}

PremiseResult evaluate_adaptation_premise(MetaLearner& learner, const data::Dataset& ds, data::Split split,
                                          std::int64_t runs, std::uint64_t seed, const std::string& name) {
  PremiseResult r;
  r.with_adaptation = evaluate_protocol(learner.model(), ds, split, learner.config().shots, runs, seed,
                                        name + "/with-adaptation", [&](const Batch& s, const Episode& ep) {
                                          return Adaptation{learner.adapt(s, ep.writer).params, {}};
                                        });
  r.without_adaptation = evaluate_protocol(learner.model(), ds, split, learner.config().shots, runs, seed,
                                           name + "/without-adaptation", [&](const Batch&, const Episode&) {
                                             return Adaptation{learner.model().params(), {}};
                                           });
  r.paired = eval::paired_comparison(r.with_adaptation, r.without_adaptation);
  return r;
}

}  // namespace htrlab::meta
