#include "htrlab/models/model.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "htrlab/autodiff/ops.hpp"
#include "htrlab/autodiff/tape.hpp"
#include "htrlab/error.hpp"
#include "htrlab/kv.hpp"
#include "htrlab/io/bundle.hpp"

namespace htrlab::models {

using namespace htrlab::ad;
using nn::TokenBatch;
using nn::Vocabulary;

std::string to_string(Arch a) { return a == Arch::SARLite ? "sar-lite" : "fphtr-lite"; }

Arch arch_from_string(const std::string& s) {
  if (s == "sar-lite" || s == "sar" || s == "SARLite") return Arch::SARLite;
  if (s == "fphtr-lite" || s == "fphtr" || s == "FPHTRLite") return Arch::FPHTRLite;
  fail(ErrorCode::InvalidConfig, "unknown architecture '" + s + "'");
}

// ---------------------------------------------------------------- config

void ModelConfig::validate() const {
  auto bad = [](const std::string& m) { fail(ErrorCode::InvalidConfig, m); };
  if (conv_channels.empty() || conv_channels.size() > 4) bad("conv_channels needs one to four stages");
  for (auto c : conv_channels)
    if (c < 1) bad("conv channel counts must be positive");
  if (d_model < 1) bad("d_model must be positive");
  if (decoder_layers < 1) bad("decoder_layers must be at least 1");
  if (max_seq_len < 1) bad("max_seq_len must be at least 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) bad("dropout must lie in [0,1)");
  if (loss.label_smoothing < 0.0 || loss.label_smoothing >= 1.0) bad("label_smoothing must lie in [0,1)");
  if (loss.vocab.chars().empty()) bad("vocabulary is empty");
  if (feature_height() < 1 || feature_width() < 1)
    bad("image " + std::to_string(image_height) + "x" + std::to_string(image_width) + " vanishes after " +
        std::to_string(conv_channels.size()) + " pooling stages");
  if (arch == Arch::FPHTRLite) {
    if (heads < 1 || d_model % heads != 0)
      bad(std::to_string(heads) + " attention heads do not divide d_model " + std::to_string(d_model));
    if (d_model % 4 != 0) bad("FPHTR-lite needs d_model divisible by 4 for 2D positions");
    if (ff_dim < 1) bad("ff_dim must be positive");
  }
}

std::int64_t ModelConfig::feature_height() const {
  return image_height >> static_cast<int>(conv_channels.size());
}
std::int64_t ModelConfig::feature_width() const { return image_width >> static_cast<int>(conv_channels.size()); }

std::map<std::string, std::string> ModelConfig::to_kv() const {
  std::map<std::string, std::string> kv;
  kv["arch"] = to_string(arch);
  std::string ch;
  for (std::size_t i = 0; i < conv_channels.size(); ++i) ch += (i ? "," : "") + std::to_string(conv_channels[i]);
  kv["conv_channels"] = ch;
  kv["d_model"] = std::to_string(d_model);
  kv["decoder_layers"] = std::to_string(decoder_layers);
  kv["heads"] = std::to_string(heads);
  kv["ff_dim"] = std::to_string(ff_dim);
  kv["dropout"] = kv::format(dropout);
  kv["max_seq_len"] = std::to_string(max_seq_len);
  kv["image_height"] = std::to_string(image_height);
  kv["image_width"] = std::to_string(image_width);
  kv["vocab"] = loss.vocab.chars();
  kv["label_smoothing"] = kv::format(loss.label_smoothing);
  return kv;
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  if (auto it = kv.find("arch"); it != kv.end()) c.arch = arch_from_string(it->second);
  if (auto it = kv.find("conv_channels"); it != kv.end()) {
    c.conv_channels.clear();
    std::stringstream ss(it->second);
    std::string tok;
    while (std::getline(ss, tok, ',')) c.conv_channels.push_back(kv::get_int({{"conv_channels", tok}}, "conv_channels", 0));
  }
  c.d_model = kv::get_int(kv, "d_model", c.d_model);
  c.decoder_layers = kv::get_int(kv, "decoder_layers", c.decoder_layers);
  c.heads = kv::get_int(kv, "heads", c.heads);
  c.ff_dim = kv::get_int(kv, "ff_dim", c.ff_dim);
  c.dropout = kv::get_double(kv, "dropout", c.dropout);
  c.max_seq_len = kv::get_int(kv, "max_seq_len", c.max_seq_len);
  c.image_height = kv::get_int(kv, "image_height", c.image_height);
  c.image_width = kv::get_int(kv, "image_width", c.image_width);
  if (auto it = kv.find("vocab"); it != kv.end()) c.loss.vocab = Vocabulary(it->second);
  c.loss.label_smoothing = kv::get_double(kv, "label_smoothing", c.loss.label_smoothing);
  return c;
}

// ---------------------------------------------------------------- layout

namespace {

enum class Init { Xavier, Zero, One, Embed, LstmBias };

struct Slot {
  std::string name;
  Shape shape;
  Init init;
  std::int64_t fan_in = 1, fan_out = 1;
};

std::vector<Slot> layout(const ModelConfig& c) {
  std::vector<Slot> s;
  const std::int64_t V = c.loss.vocab.size();
  const std::int64_t d = c.d_model;
  std::int64_t prev = 1;
  for (std::size_t i = 0; i < c.conv_channels.size(); ++i) {
    const auto ch = c.conv_channels[i];
    const std::string p = "backbone.";
    s.push_back({p + "conv" + std::to_string(i) + ".weight", {ch, prev, 3, 3}, Init::Xavier, prev * 9, ch * 9});
    s.push_back({p + "bn" + std::to_string(i) + ".weight", {ch}, Init::One});
    s.push_back({p + "bn" + std::to_string(i) + ".bias", {ch}, Init::Zero});
    prev = ch;
  }
  const std::int64_t D = prev;
  auto lin = [&](const std::string& name, std::int64_t in, std::int64_t out, bool bias = true) {
    s.push_back({name + ".weight", {in, out}, Init::Xavier, in, out});
    if (bias) s.push_back({name + ".bias", {out}, Init::Zero});
  };
  auto lstm = [&](const std::string& name, std::int64_t in, std::int64_t H) {
    s.push_back({name + ".weight_ih", {in, 4 * H}, Init::Xavier, in, H});
    s.push_back({name + ".weight_hh", {H, 4 * H}, Init::Xavier, H, H});
    s.push_back({name + ".bias", {4 * H}, Init::LstmBias});
  };

  if (c.arch == Arch::FPHTRLite) {
    lin("encoder.proj", D, d);
    s.push_back({"decoder.embed.weight", {V, d}, Init::Embed});
    for (std::int64_t l = 0; l < c.decoder_layers; ++l) {
      const std::string p = "decoder.layer" + std::to_string(l) + ".";
      for (const char* a : {"self_attn", "cross_attn"}) {
        for (const char* w : {"q", "k", "v", "o"})
          s.push_back({p + a + ".w" + w, {d, d}, Init::Xavier, d, d});
        for (const char* w : {"q", "k", "v", "o"}) s.push_back({p + a + ".b" + w, {d}, Init::Zero});
      }
      for (int k = 1; k <= 3; ++k) {
        s.push_back({p + "ln" + std::to_string(k) + ".weight", {d}, Init::One});
        s.push_back({p + "ln" + std::to_string(k) + ".bias", {d}, Init::Zero});
      }
      lin(p + "ff1", d, c.ff_dim);
      lin(p + "ff2", c.ff_dim, d);
    }
    lin("decoder.out", d, V);
  } else {
    lstm("encoder.lstm", D, d);
    s.push_back({"decoder.embed.weight", {V, d}, Init::Embed});
    lstm("decoder.lstm", d, d);
    s.push_back({"decoder.attn.w_v", {D, d}, Init::Xavier, D, d});
    s.push_back({"decoder.attn.w_h", {d, d}, Init::Xavier, d, d});
    s.push_back({"decoder.attn.w_tilde", {d, D, 3, 3}, Init::Xavier, D * 9, d});
    s.push_back({"decoder.attn.w_e", {d}, Init::Xavier, d, 1});
    lin("decoder.out", d + D, V);
  }
  return s;
}

Tensor init_tensor(const Slot& slot, Rng& rng) {
  const auto n = static_cast<std::size_t>(numel(slot.shape));
  std::vector<double> v(n, 0.0);
  switch (slot.init) {
    case Init::Zero:
      break;
    case Init::One:
      std::fill(v.begin(), v.end(), 1.0);
      break;
    case Init::Xavier: {
      const double a = std::sqrt(6.0 / static_cast<double>(slot.fan_in + slot.fan_out));
      for (double& x : v) x = rng.uniform(-a, a);
      break;
    }
    case Init::Embed:
      for (double& x : v) x = rng.uniform(-1.0, 1.0);
      break;
    case Init::LstmBias: {
      // Forget gate starts open.
      const std::size_t H = n / 4;
      for (std::size_t i = H; i < 2 * H; ++i) v[i] = 1.0;
      break;
    }
  }
  return Tensor::from(slot.shape, std::move(v));
}

/// Walks a parameter list in layout order.
class Cursor {
 public:
  explicit Cursor(std::span<const Tensor> ps, std::size_t at = 0) : ps_(ps), i_(at) {}
  const Tensor& next() {
    require(i_ < ps_.size(), ErrorCode::ShapeMismatch, "parameter list is shorter than the model layout");
    return ps_[i_++];
  }
  nn::MultiHeadParams mha() {
    nn::MultiHeadParams p;
    p.wq = next(), p.wk = next(), p.wv = next(), p.wo = next();
    p.bq = next(), p.bk = next(), p.bv = next(), p.bo = next();
    return p;
  }
  nn::LstmParams lstm() {
    nn::LstmParams p;
    p.w_ih = next(), p.w_hh = next(), p.bias = next();
    return p;
  }
  std::size_t position() const { return i_; }

 private:
  std::span<const Tensor> ps_;
  std::size_t i_;
};

struct FphtrDecoder {
  Tensor embed;
  std::vector<nn::TransformerBlockParams> blocks;
  Tensor out_w, out_b;
};

struct SarDecoder {
  nn::LstmParams encoder;
  Tensor embed;
  nn::LstmParams lstm;
  nn::Attention2DParams attn;
  Tensor out_w, out_b;
};

Tensor backbone(Model& m, Cursor& cur, const Tensor& images, const ForwardOptions& opt) {
  require(images.ndim() == 4 && images.dim(1) == 1, ErrorCode::ShapeMismatch,
          "images must be [N,1,H,W], got " + shape_str(images.shape()));
  auto& bn = m.bn_states();
  if (opt.bn_deltas)
    require(opt.bn_deltas->size() == bn.size(), ErrorCode::ShapeMismatch,
            "expected " + std::to_string(bn.size()) + " BN modulations");
  Tensor x = images;
  for (std::size_t i = 0; i < m.config().conv_channels.size(); ++i) {
    const Tensor& w = cur.next();
    Tensor gamma = cur.next();
    Tensor beta = cur.next();
    if (opt.bn_deltas) {
      gamma = gamma + (*opt.bn_deltas)[i].d_gamma;
      beta = beta + (*opt.bn_deltas)[i].d_beta;
    }
    x = conv2d(x, w, 1, 1);
    x = relu(nn::batch_norm(x, gamma, beta, bn[i], opt.training));
    x = max_pool2d(x, 2, 2);
  }
  return x;
}

Tensor drop(const Tensor& x, const ModelConfig& c, const ForwardOptions& opt) {
  if (!opt.training || c.dropout <= 0.0) return x;
  require(opt.rng != nullptr, ErrorCode::InvalidArgument, "training forward with dropout needs an rng");
  return dropout(x, c.dropout, true, *opt.rng);
}

Tensor fphtr_memory(Model& m, Cursor& cur, const Tensor& images, const ForwardOptions& opt) {
  const Tensor fmap = backbone(m, cur, images, opt);
  const std::int64_t N = fmap.dim(0), D = fmap.dim(1), h = fmap.dim(2), w = fmap.dim(3);
  const Tensor& pw = cur.next();
  const Tensor& pb = cur.next();
  const Tensor seq = reshape(permute(fmap, {0, 2, 3, 1}), {N, h * w, D});
  return nn::linear(seq, pw, &pb) + nn::sinusoid_2d(h, w, m.config().d_model);
}

FphtrDecoder fphtr_decoder(const ModelConfig& c, Cursor& cur) {
  FphtrDecoder d;
  d.embed = cur.next();
  for (std::int64_t l = 0; l < c.decoder_layers; ++l) {
    nn::TransformerBlockParams b;
    b.self_attn = cur.mha();
    b.cross_attn = cur.mha();
    b.ln1 = {cur.next(), cur.next()};
    b.ln2 = {cur.next(), cur.next()};
    b.ln3 = {cur.next(), cur.next()};
    b.ff_w1 = cur.next(), b.ff_b1 = cur.next();
    b.ff_w2 = cur.next(), b.ff_b2 = cur.next();
    d.blocks.push_back(std::move(b));
  }
  d.out_w = cur.next();
  d.out_b = cur.next();
  return d;
}

Tensor fphtr_features(const ModelConfig& c, const FphtrDecoder& dec, const Tensor& memory,
                      const std::vector<std::int64_t>& ids, std::int64_t N, std::int64_t T, const ForwardOptions& opt) {
  Tensor x = reshape(index_select(dec.embed, ids), {N, T, c.d_model}) + nn::sinusoid_1d(T, c.d_model);
  x = drop(x, c, opt);
  nn::BlockOptions bo;
  bo.heads = c.heads;
  bo.causal = true;
  bo.dropout = c.dropout;
  bo.training = opt.training;
  bo.rng = opt.rng;
  for (const auto& b : dec.blocks) x = nn::transformer_decoder_block(x, memory, b, bo);
  return x;
}

SarDecoder sar_params(Cursor& cur) {
  SarDecoder d;
  d.encoder = cur.lstm();
  d.embed = cur.next();
  d.lstm = cur.lstm();
  d.attn.w_v = cur.next();
  d.attn.w_h = cur.next();
  d.attn.w_tilde = cur.next();
  d.attn.w_e = cur.next();
  d.out_w = cur.next();
  d.out_b = cur.next();
  return d;
}

/// Runs the holistic encoder and the decoder's warm-up step on h_W.
struct SarEncoded {
  nn::Attention2DContext ctx;
  nn::LstmState state;
};

SarEncoded sar_encode(const ModelConfig& c, const SarDecoder& p, const Tensor& fmap) {
  const std::int64_t N = fmap.dim(0), D = fmap.dim(1), h = fmap.dim(2), w = fmap.dim(3);
  const Tensor cols = reshape(max_pool2d(fmap, h, 1), {N, D, w});
  nn::LstmState enc{Tensor::zeros({N, c.d_model}), Tensor::zeros({N, c.d_model})};
  for (std::int64_t j = 0; j < w; ++j) enc = nn::lstm_cell(reshape(slice(cols, 2, j, j + 1), {N, D}), enc, p.encoder);
  nn::LstmState dec{Tensor::zeros({N, c.d_model}), Tensor::zeros({N, c.d_model})};
  dec = nn::lstm_cell(enc.h, dec, p.lstm);
  return {nn::prepare_attention_2d(fmap, p.attn), dec};
}

/// One decoder step: returns the classifier input [h'; g].
Tensor sar_step(const SarDecoder& p, nn::LstmState& state, const nn::Attention2DContext& ctx,
                const std::vector<std::int64_t>& ids) {
  state = nn::lstm_cell(index_select(p.embed, ids), state, p.lstm);
  const auto att = nn::attend_2d(ctx, state.h, p.attn);
  return concat({state.h, att.glimpse}, 1);
}

std::vector<std::int64_t> column(const TokenBatch& b, std::int64_t t) {
  std::vector<std::int64_t> ids(static_cast<std::size_t>(b.batch));
  for (std::int64_t i = 0; i < b.batch; ++i) ids[static_cast<std::size_t>(i)] = b.at(i, t);
  return ids;
}

}  // namespace

// ---------------------------------------------------------------- model

Tensor& Model::add(const std::string& name, Tensor t) {
  names_.push_back(name);
  params_.push_back(std::move(t));
  return params_.back();
}

Model Model::clone() const {
  Model m;
  m.config_ = config_;
  m.names_ = names_;
  for (const auto& p : params_) {
    Tensor c = p.clone();
    if (p.requires_grad()) c.set_requires_grad(true);
    m.params_.push_back(std::move(c));
  }
  for (const auto& s : bn_) {
    auto copy = s;
    copy.running_mean = s.running_mean.clone();
    copy.running_var = s.running_var.clone();
    m.bn_.push_back(std::move(copy));
  }
  return m;
}

std::size_t Model::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return i;
  fail(ErrorCode::InvalidArgument, "model has no parameter '" + name + "'");
}

void Model::set_bn_mode(nn::StatsMode mode) {
  for (auto& s : bn_) s.stats_mode = mode;
}

std::vector<std::int64_t> Model::bn_channels() const {
  std::vector<std::int64_t> c;
  for (const auto& s : bn_) c.push_back(s.channels());
  return c;
}

std::vector<std::size_t> Model::classifier_indices() const {
  return {index_of("decoder.out.weight"), index_of("decoder.out.bias")};
}

void Model::set_trainable(bool on) {
  for (auto& p : params_) p.set_requires_grad(on);
}

Model build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config_ = config;
  Rng rng(seed);
  for (const auto& slot : layout(config)) m.add(slot.name, init_tensor(slot, rng)).set_requires_grad(true);
  for (auto ch : config.conv_channels) {
    m.bn_.push_back(nn::BatchNormState::identity(ch));
    m.bn_.back().stats_mode = nn::StatsMode::RunningStats;
  }
  return m;
}

// ---------------------------------------------------------------- forward

ForwardResult forward(Model& model, std::span<const Tensor> params, const Tensor& images, const TokenBatch& inputs,
                      const ForwardOptions& opt) {
  const auto& c = model.config();
  require(params.size() == model.params().size(), ErrorCode::ShapeMismatch,
          "expected " + std::to_string(model.params().size()) + " parameters, got " + std::to_string(params.size()));
  require(inputs.length >= 1 && inputs.batch == images.dim(0), ErrorCode::ShapeMismatch,
          "token batch does not match the image batch");
  require(inputs.length <= c.max_seq_len, ErrorCode::SequenceTooLong,
          "input of " + std::to_string(inputs.length) + " steps exceeds max_seq_len " +
              std::to_string(c.max_seq_len));
  for (std::int64_t b = 0; b < inputs.batch; ++b)
    require(inputs.at(b, 0) == Vocabulary::kSos, ErrorCode::InvalidArgument, "decoder inputs must start with SOS");

  const std::int64_t N = inputs.batch, T = inputs.length;
  Cursor cur(params);
  ForwardResult r;
  if (c.arch == Arch::FPHTRLite) {
    const Tensor memory = fphtr_memory(model, cur, images, opt);
    const auto dec = fphtr_decoder(c, cur);
    r.features = fphtr_features(c, dec, memory, inputs.ids, N, T, opt);
    r.logits = nn::linear(drop(r.features, c, opt), dec.out_w, &dec.out_b);
  } else {
    const Tensor fmap = backbone(model, cur, images, opt);
    const auto p = sar_params(cur);
    auto enc = sar_encode(c, p, fmap);
    std::vector<Tensor> steps;
    for (std::int64_t t = 0; t < T; ++t) {
      const Tensor f = sar_step(p, enc.state, enc.ctx, column(inputs, t));
      steps.push_back(reshape(f, {N, 1, f.dim(1)}));
    }
    r.features = concat(steps, 1);
    r.logits = nn::linear(drop(r.features, c, opt), p.out_w, &p.out_b);
  }
  return r;
}

Tensor forward_teacher_forcing(Model& model, const Tensor& images, const TokenBatch& inputs, bool training,
                               Rng* rng) {
  ForwardOptions opt;
  opt.training = training;
  opt.rng = rng;
  return forward(model, model.params(), images, inputs, opt).logits;
}

Tensor batch_loss(Model& model, std::span<const Tensor> params, const Tensor& images,
                  const std::vector<std::string>& texts, const ForwardOptions& opt, const Tensor* weights) {
  const auto tb = nn::make_teacher_batch(model.config().loss.vocab, texts);
  const auto r = forward(model, params, images, tb.inputs, opt);
  return nn::sequence_cross_entropy(r.logits, tb.targets, weights, model.config().loss.label_smoothing);
}

std::vector<std::string> decode_greedy(Model& model, std::span<const Tensor> params, const Tensor& images,
                                       const std::vector<BnModulation>* bn_deltas) {
  NoGradGuard ng;
  const auto& c = model.config();
  const std::int64_t N = images.dim(0);
  const std::int64_t V = c.loss.vocab.size();
  ForwardOptions opt;
  opt.bn_deltas = bn_deltas;

  std::vector<std::vector<std::int64_t>> out(static_cast<std::size_t>(N));
  std::vector<bool> done(static_cast<std::size_t>(N), false);
  std::vector<std::int64_t> prefix(static_cast<std::size_t>(N), Vocabulary::kSos);  // row-major [N, t]
  std::int64_t T = 1;

  auto pick = [&](const Tensor& logits_last) {
    // logits_last: [N, V]
    std::vector<std::int64_t> next(static_cast<std::size_t>(N), Vocabulary::kPad);
    bool all = true;
    for (std::int64_t b = 0; b < N; ++b) {
      if (done[static_cast<std::size_t>(b)]) continue;
      const double* row = logits_last.ptr() + b * V;
      std::int64_t best = 0;
      for (std::int64_t v = 1; v < V; ++v)
        if (row[v] > row[best]) best = v;
      auto& seq = out[static_cast<std::size_t>(b)];
      if (best == Vocabulary::kEos || static_cast<std::int64_t>(seq.size()) >= c.max_seq_len - 1) {
        done[static_cast<std::size_t>(b)] = true;
      } else {
        seq.push_back(best);
        next[static_cast<std::size_t>(b)] = best;
        // A character at the length cap ends the sequence as well.
        if (static_cast<std::int64_t>(seq.size()) >= c.max_seq_len - 1) done[static_cast<std::size_t>(b)] = true;
      }
      all = all && done[static_cast<std::size_t>(b)];
    }
    return std::pair{next, all};
  };

  Cursor cur(params);
  if (c.arch == Arch::FPHTRLite) {
    const Tensor memory = fphtr_memory(model, cur, images, opt);
    const auto dec = fphtr_decoder(c, cur);
    while (T <= c.max_seq_len) {
      const Tensor feats = fphtr_features(c, dec, memory, prefix, N, T, opt);
      const Tensor last = reshape(slice(feats, 1, T - 1, T), {N, c.d_model});
      const auto [next, all] = pick(nn::linear(last, dec.out_w, &dec.out_b));
      if (all || T == c.max_seq_len) break;
      std::vector<std::int64_t> grown;
      grown.reserve(static_cast<std::size_t>(N * (T + 1)));
      for (std::int64_t b = 0; b < N; ++b) {
        grown.insert(grown.end(), prefix.begin() + b * T, prefix.begin() + (b + 1) * T);
        grown.push_back(next[static_cast<std::size_t>(b)]);
      }
      prefix = std::move(grown);
      ++T;
    }
  } else {
    const Tensor fmap = backbone(model, cur, images, opt);
    const auto p = sar_params(cur);
    auto enc = sar_encode(c, p, fmap);
    std::vector<std::int64_t> ids(static_cast<std::size_t>(N), Vocabulary::kSos);
    for (; T <= c.max_seq_len; ++T) {
      const Tensor f = sar_step(p, enc.state, enc.ctx, ids);
      const auto [next, all] = pick(nn::linear(f, p.out_w, &p.out_b));
      if (all) break;
      ids = next;
    }
  }

  std::vector<std::string> texts;
  for (const auto& seq : out) texts.push_back(c.loss.vocab.decode(seq));
  return texts;
}

std::vector<std::string> decode_greedy(Model& model, const Tensor& images) {
  return decode_greedy(model, model.params(), images);
}

// ---------------------------------------------------------------- reports and training

ParameterTable count_parameters(const Model& model) {
  ParameterTable t;
  auto bump = [](std::vector<std::pair<std::string, std::int64_t>>& rows, const std::string& key, std::int64_t n) {
    for (auto& [k, v] : rows)
      if (k == key) {
        v += n;
        return;
      }
    rows.emplace_back(key, n);
  };
  for (std::size_t i = 0; i < model.names().size(); ++i) {
    const auto& name = model.names()[i];
    const auto n = model.params()[i].numel();
    t.tensors.emplace_back(name, n);
    bump(t.modules, name.substr(0, name.rfind('.')), n);
    bump(t.parts, name.substr(0, name.find('.')), n);
    t.total += n;
  }
  return t;
}

double train_step(Model& model, nn::Adam& opt, const Tensor& images, const std::vector<std::string>& texts,
                  Rng& dropout_rng, double max_grad_norm) {
  std::vector<nn::StatsMode> modes;
  for (const auto& s : model.bn_states()) modes.push_back(s.stats_mode);
  model.set_bn_mode(nn::StatsMode::BatchStats);
  ForwardOptions fo;
  fo.training = true;
  fo.rng = &dropout_rng;
  double value = 0.0;
  try {
    const Tensor loss = batch_loss(model, model.params(), images, texts, fo);
    value = loss.item();
    require(std::isfinite(value), ErrorCode::NonFiniteLoss, "training loss is not finite");
    auto grads = gradients(loss, model.params()).grads;
    nn::clip_global_norm(grads, max_grad_norm);
    opt.step(model.params(), grads);
  } catch (...) {
    for (std::size_t i = 0; i < modes.size(); ++i) model.bn_states()[i].stats_mode = modes[i];
    throw;
  }
  for (std::size_t i = 0; i < modes.size(); ++i) model.bn_states()[i].stats_mode = modes[i];
  return value;
}

// ---------------------------------------------------------------- checkpoints

void add_model(io::Bundle& b, const Model& model) {
  for (const auto& [k, v] : model.config().to_kv()) b.set("config." + k, v);
  for (std::size_t i = 0; i < model.names().size(); ++i) b.add(model.names()[i], model.params()[i]);
  for (std::size_t i = 0; i < model.bn_states().size(); ++i) {
    b.add("bn" + std::to_string(i) + ".running_mean", model.bn_states()[i].running_mean);
    b.add("bn" + std::to_string(i) + ".running_var", model.bn_states()[i].running_var);
  }
}

void save_model(const std::filesystem::path& path, const Model& model, const std::string& rng_state) {
  io::Bundle b;
  b.kind = "model";
  b.set("rng_state", rng_state);
  add_model(b, model);
  io::write_bundle(path, b);
}

Model model_from_bundle(const io::Bundle& b, const std::string& origin) {
  std::map<std::string, std::string> kv;
  for (const auto& [k, v] : b.meta)
    if (k.rfind("config.", 0) == 0) kv[k.substr(7)] = v;
  Model m = build_model(ModelConfig::from_kv(kv), 0);
  for (std::size_t i = 0; i < m.names_.size(); ++i) {
    require(b.has_array(m.names_[i]), ErrorCode::CheckpointMismatch,
            origin + " lacks parameter '" + m.names_[i] + "'");
    const auto& a = b.array(m.names_[i]);
    require(a.shape == m.params_[i].shape(), ErrorCode::CheckpointMismatch,
            "parameter '" + m.names_[i] + "' has shape " + shape_str(a.shape) + ", model expects " +
                shape_str(m.params_[i].shape()));
    m.params_[i] = Tensor::from(a.shape, a.values);
    m.params_[i].set_requires_grad(true);
  }
  for (std::size_t i = 0; i < m.bn_.size(); ++i) {
    m.bn_[i].running_mean = b.tensor("bn" + std::to_string(i) + ".running_mean");
    m.bn_[i].running_var = b.tensor("bn" + std::to_string(i) + ".running_var");
  }
  return m;
}

Model load_model(const std::filesystem::path& path, std::string* rng_state) {
  const auto b = io::read_bundle(path, "model");
  Model m = model_from_bundle(b, path.string());
  if (rng_state) *rng_state = b.has("rng_state") ? b.get("rng_state") : "";
  return m;
}

}  // namespace htrlab::models
