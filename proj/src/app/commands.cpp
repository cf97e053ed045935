#include "htrlab/app/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <json.hpp>
#include <optional>
#include <sstream>

#include "htrlab/codes/codes.hpp"
#include "htrlab/eval/metrics.hpp"
#include "htrlab/io/bundle.hpp"
#include "htrlab/kv.hpp"
#include "htrlab/meta/meta.hpp"

namespace htrlab::app {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::IOError, "cannot write " + path.string());
  out << text;
  require(static_cast<bool>(out), ErrorCode::IOError, "write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::IOError, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void say(const Log& log, const std::string& line) {
  if (log) log(line);
}

std::string mode_name(bool with) { return with ? "with-adaptation" : "without-adaptation"; }

void check_model(const models::Model& m, const ExperimentConfig& cfg, const fs::path& path) {
  require(m.config() == cfg.model, ErrorCode::CheckpointMismatch,
          path.string() + ": checkpoint architecture does not match the run config");
}

models::Model pretrain(const ExperimentConfig& cfg, const data::Dataset& ds, std::uint64_t seed, std::ostream& tsv,
                       const Log& log) {
  if (!cfg.init.empty()) {
    const fs::path p = cfg.init;
    models::Model m = models::model_from_bundle(io::read_bundle(p), p.string());
    check_model(m, cfg, p);
    say(log, "initialized from " + p.string());
    return m;
  }
  models::Model m = models::build_model(cfg.model, seed);
  nn::AdamConfig ac;
  ac.lr = cfg.lr;
  nn::Adam adam(ac);
  Rng rng(Rng::derive(seed, 0xBA5E));
  const auto train = ds.indices(data::Split::Train);
  require(!train.empty(), ErrorCode::InsufficientSamples, "no training samples");
  for (std::int64_t s = 0; s < cfg.base_steps; ++s) {
    std::vector<std::size_t> idx(static_cast<std::size_t>(cfg.batch));
    for (auto& i : idx) i = train[rng.index(train.size())];
    const auto b = data::make_batch(ds, idx, &rng, cfg.augment);
    const double loss = models::train_step(m, adam, b.images, b.texts, rng, cfg.max_grad_norm);
    tsv << "base\t" << s << '\t' << kv::format(loss) << '\n';
    if ((s + 1) % 100 == 0) say(log, "base step " + std::to_string(s + 1) + " loss " + kv::format(loss));
  }
  return m;
}

/// Loaded run state that can hand out adapters for both conditions.
class RunState {
 public:
  explicit RunState(const fs::path& run) : run_(run), cfg_(read_run_config(run)), ds_(load_dataset(cfg_)) {
    seed_ = cfg_.seeds.front();
    const fs::path ckpt = run / "checkpoint.bin";
    if (is_meta(cfg_.method)) {
      learner_.emplace(meta::MetaLearner::load(ckpt));
      check_model(learner_->model(), cfg_, ckpt);
    } else {
      model_.emplace(models::load_model(ckpt));
      check_model(*model_, cfg_, ckpt);
    }
    if (is_code(cfg_.method)) {
      book_.emplace(codes::load_codebook(run / "codebook.bin", model()));
      require(book_->kind == code_kind_of(cfg_.method), ErrorCode::CheckpointMismatch,
              "codebook kind does not match the run method");
    }
  }

  const ExperimentConfig& config() const { return cfg_; }
  const data::Dataset& dataset() const { return ds_; }
  std::uint64_t seed() const { return seed_; }
  models::Model& model() { return learner_ ? learner_->model() : *model_; }
  meta::MetaLearner* learner() { return learner_ ? &*learner_ : nullptr; }

  meta::Adapter adapter(bool with) {
    models::Model& m = model();
    if (!with || cfg_.method == Method::Base)
      return [&m](const data::Batch&, const meta::Episode&) { return meta::Adaptation{m.params(), {}}; };
    if (cfg_.method == Method::FinetuneBaseline)
      return [this, &m](const data::Batch& s, const meta::Episode& ep) {
        return meta::Adaptation{meta::finetune_baseline(m, s, cfg_.finetune_steps, cfg_.finetune_lr, ep.writer).params,
                                {}};
      };
    if (learner_)
      return [this](const data::Batch& s, const meta::Episode& ep) {
        return meta::Adaptation{learner_->adapt(s, ep.writer).params, {}};
      };
    return [this, &m](const data::Batch& s, const meta::Episode& ep) {
      std::vector<const data::Image*> imgs;
      for (std::size_t i : ep.support) imgs.push_back(&ds_.samples[i].image);
      Rng rng(Rng::derive(seed_, 0xADA7, ep.support.front()));
      const auto code = codes::assign_code(*book_, m, ep.writer, s, imgs, rng);
      const auto n = static_cast<std::int64_t>(code.values.size());
      return meta::Adaptation{m.params(), book_->adapter.deltas(ad::Tensor::from({n}, code.values))};
    };
  }

 private:
  fs::path run_;
  ExperimentConfig cfg_;
  data::Dataset ds_;
  std::uint64_t seed_ = 0;
  std::optional<models::Model> model_;
  std::optional<meta::MetaLearner> learner_;
  std::optional<codes::Codebook> book_;
};

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

}  // namespace

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::InvalidArgument:
    case ErrorCode::CheckpointMismatch:
    case ErrorCode::IncompatibleRuns:
    case ErrorCode::UnknownWriter:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::OddDimension:
      return 2;
    case ErrorCode::NumericDomain:
    case ErrorCode::NonFinite:
    case ErrorCode::NonFiniteLoss:
    case ErrorCode::DegenerateClustering:
      return 4;
    default:
      return 3;
  }
}

data::Dataset load_dataset(const ExperimentConfig& cfg) {
  if (!cfg.manifest.empty()) return data::load_corpus(cfg.manifest);
  data::GeneratorConfig g = cfg.synth;
  if (cfg.lexicon_size > 0) {
    const auto& all = data::default_lexicon();
    g.lexicon.assign(all.begin(), all.begin() + cfg.lexicon_size);
  }
  return data::generate_synthetic_dataset(g);
}

fs::path run_dir(const ExperimentConfig& cfg, std::uint64_t seed) {
  return resolve_output(cfg.output_dir) / (to_string(cfg.method) + "-seed" + std::to_string(seed));
}

ExperimentConfig read_run_config(const fs::path& run) {
  const fs::path p = run / "config.txt";
  require(fs::exists(p), ErrorCode::IOError, "no config.txt in " + run.string());
  return load_config(p);
}

fs::path cmd_train(const ExperimentConfig& base_cfg, std::uint64_t seed, const Log& log) {
  ExperimentConfig cfg = base_cfg;
  cfg.seeds = {seed};
  const data::Dataset ds = load_dataset(cfg);
  if (cfg.auto_vocab) {
    cfg.model.loss.vocab = nn::Vocabulary(ds.alphabet());
    cfg.auto_vocab = false;
  }
  cfg.validate();
  if (is_meta(cfg.method)) {
    const auto by = ds.by_writer(data::Split::Train);
    for (const auto& [w, idx] : by)
      require(static_cast<std::int64_t>(idx.size()) >= 2 * cfg.meta.shots, ErrorCode::InsufficientSamples,
              "writer '" + w + "' has " + std::to_string(idx.size()) + " samples, meta-training needs 2K = " +
                  std::to_string(2 * cfg.meta.shots));
  }

  const fs::path dir = run_dir(cfg, seed);
  fs::create_directories(dir);
  write_text(dir / "config.txt", format_kv_text(cfg.to_kv()));
  std::ostringstream tsv;
  tsv << "phase\tstep\tloss\n";
  say(log, "run " + dir.string());

  models::Model model = pretrain(cfg, ds, seed, tsv, log);
  if (is_meta(cfg.method)) {
    meta::MetaLearner learner(std::move(model), cfg.meta, seed);
    const auto writers = ds.writers(data::Split::Train);
    for (std::int64_t s = 0; s < cfg.meta_steps; ++s) {
      const auto r = learner.step(ds, writers);
      tsv << "meta\t" << s << '\t' << kv::format(r.outer_loss) << (r.skipped ? "\tskipped" : "") << '\n';
      if ((s + 1) % 25 == 0) say(log, "meta step " + std::to_string(s + 1) + " loss " + kv::format(r.outer_loss));
    }
    learner.save(dir / "checkpoint.bin");
    if (const auto* lrs = learner.rates()) eval::export_layer_lrs(lrs->names(), lrs->values(), dir / "layer_lrs.csv");
  } else if (is_code(cfg.method)) {
    std::vector<double> losses;
    const auto book = codes::train_codes(model, ds, code_kind_of(cfg.method), cfg.codes, seed, &losses);
    for (std::size_t s = 0; s < losses.size(); ++s) tsv << "codes\t" << s << '\t' << kv::format(losses[s]) << '\n';
    models::save_model(dir / "checkpoint.bin", model);
    codes::save_codebook(dir / "codebook.bin", book);
  } else {
    models::save_model(dir / "checkpoint.bin", model);
  }
  write_text(dir / "train_log.tsv", tsv.str());
  return dir;
}

std::vector<eval::EvalReport> cmd_eval(const fs::path& run, EvalMode mode, std::int64_t runs, const Log& log) {
  RunState st(run);
  const auto& cfg = st.config();
  const std::int64_t n_runs = runs > 0 ? runs : cfg.eval_runs;
  std::vector<bool> conditions;
  if (mode != EvalMode::WithoutAdaptation) conditions.push_back(true);
  if (mode != EvalMode::WithAdaptation) conditions.push_back(false);

  std::vector<eval::EvalReport> out;
  for (bool with : conditions) {
    const std::string cond = to_string(cfg.method) + "/" + mode_name(with);
    say(log, "evaluating " + cond);
    auto r = meta::evaluate_protocol(st.model(), st.dataset(), data::Split::Test, cfg.meta.shots, n_runs, st.seed(),
                                     cond, st.adapter(with));
    write_text(run / ("report-" + mode_name(with) + ".json"), eval::to_json(r));
    write_text(run / ("report-" + mode_name(with) + ".txt"), eval::to_text(r));
    out.push_back(std::move(r));
  }
  if (mode == EvalMode::Both) {
    const auto p = eval::paired_comparison(out[0], out[1]);
    write_text(run / "paired.json", eval::to_json(p));
    write_text(run / "paired.txt", eval::to_text(p));
  }
  return out;
}

std::string cmd_adapt(const fs::path& run, const std::string& writer, std::int64_t run_index) {
  RunState st(run);
  const auto& cfg = st.config();
  Rng rng(meta::protocol_seed(st.seed(), writer, run_index));
  const auto ep = meta::sample_episode(st.dataset(), writer, cfg.meta.shots, rng, meta::EpisodeMode::Test);
  const auto support = data::make_batch(st.dataset(), ep.support);
  const auto query = data::make_batch(st.dataset(), ep.query);
  models::BnModeGuard bn(st.model(), nn::StatsMode::RunningStats);
  const auto a = st.adapter(true)(support, ep);
  const auto preds =
      models::decode_greedy(st.model(), a.params, query.images, a.bn_deltas.empty() ? nullptr : &a.bn_deltas);
  const auto counts = eval::count_errors(preds, query.texts);

  json j;
  j["writer"] = writer;
  j["method"] = to_string(cfg.method);
  j["seed"] = st.seed();
  j["run"] = run_index;
  j["support"] = support.texts;
  j["references"] = query.texts;
  j["predictions"] = preds;
  j["cer"] = counts.cer();
  j["wer"] = counts.wer();
  const std::string text = j.dump(2) + "\n";
  write_text(run / ("adapt-" + writer + ".json"), text);
  return text;
}

fs::path cmd_gen_data(const ExperimentConfig& cfg, const fs::path& out) {
  return data::write_corpus(load_dataset(cfg), out);
}

std::string parameter_table_text(const models::ParameterTable& t) {
  std::ostringstream os;
  std::int64_t parts = 0, modules = 0;
  std::size_t w = 5;
  for (const auto& [n, c] : t.modules) w = std::max(w, n.size());
  auto row = [&](const std::string& n, std::int64_t c) {
    os << "  " << n << std::string(w - n.size() + 2, ' ') << c << '\n';
  };
  os << "parts\n";
  for (const auto& [n, c] : t.parts) {
    row(n, c);
    parts += c;
  }
  os << "modules\n";
  for (const auto& [n, c] : t.modules) {
    row(n, c);
    modules += c;
  }
  require(parts == t.total && modules == t.total, ErrorCode::InvalidArgument, "parameter table does not add up");
  os << "total\n";
  row("all", t.total);
  return os.str();
}

fs::path cmd_report(const std::vector<fs::path>& runs, const fs::path& out) {
  require(!runs.empty(), ErrorCode::InsufficientSamples, "report needs at least one run");
  struct Group {
    models::ModelConfig model;
    fs::path first_run;
    Method first_method;
    std::vector<eval::EvalReport> reports;
    std::map<std::string, std::vector<std::vector<double>>> rates;  // method -> per-seed rates
    std::map<std::string, std::vector<std::string>> rate_names;
  };
  std::vector<std::pair<std::string, Group>> groups;  // by architecture, first-seen order
  std::optional<nn::Vocabulary> vocab;

  for (const auto& run : runs) {
    const auto cfg = read_run_config(run);
    if (!vocab) vocab = cfg.model.loss.vocab;
    require(*vocab == cfg.model.loss.vocab, ErrorCode::IncompatibleRuns,
            run.string() + ": vocabulary differs from the other runs");
    const std::string arch = models::to_string(cfg.model.arch);
    auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return g.first == arch; });
    if (it == groups.end()) {
      groups.push_back({arch, Group{cfg.model, run, cfg.method, {}, {}, {}}});
      it = std::prev(groups.end());
    }
    require(it->second.model == cfg.model, ErrorCode::IncompatibleRuns,
            run.string() + ": " + arch + " configuration differs from " + it->second.first_run.string());

    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(run)) {
      const auto name = e.path().filename().string();
      if (name.starts_with("report-") && name.ends_with(".json")) files.push_back(e.path());
    }
    require(!files.empty(), ErrorCode::InsufficientSamples, run.string() + " has no evaluation reports");
    std::sort(files.begin(), files.end());
    for (const auto& f : files) it->second.reports.push_back(eval::report_from_json(read_text(f)));

    if (cfg.method == Method::MAML_LLR || cfg.method == Method::MetaHTR) {
      const auto learner = meta::MetaLearner::load(run / "checkpoint.bin");
      it->second.rates[to_string(cfg.method)].push_back(learner.rates()->values());
      it->second.rate_names[to_string(cfg.method)] = learner.rates()->names();
    }
  }

  fs::create_directories(out);
  json summary;
  std::ostringstream text, params;
  std::vector<std::string> conditions;
  std::map<std::pair<std::string, std::string>, eval::ConditionSummary> cells;
  for (const auto& [arch, g] : groups) {
    const auto s = eval::aggregate_runs(g.reports);
    summary[arch] = json::parse(eval::to_json(s));
    text << "== " << arch << "\n" << eval::to_text(s) << "\n";
    for (const auto& c : s) {
      if (std::find(conditions.begin(), conditions.end(), c.condition) == conditions.end())
        conditions.push_back(c.condition);
      cells[{c.condition, arch}] = c;
    }
    const fs::path ckpt = g.first_run / "checkpoint.bin";
    const auto table = is_meta(g.first_method) ? models::count_parameters(meta::MetaLearner::load(ckpt).model())
                                               : models::count_parameters(models::load_model(ckpt));
    params << "== " << arch << "\n" << parameter_table_text(table);
    for (const auto& [method, per_seed] : g.rates) {
      std::vector<double> mean(per_seed.front().size(), 0.0);
      for (std::size_t i = 0; i < mean.size(); ++i) {
        std::vector<double> col;
        for (const auto& r : per_seed) col.push_back(r[i]);
        mean[i] = eval::summarize(col).mean;
      }
      eval::export_layer_lrs(g.rate_names.at(method), mean, out / ("layer_lrs-" + arch + "-" + method + ".csv"));
    }
  }

  // Method x architecture grid of WER, then CER.
  for (const char* metric : {"WER", "CER"}) {
    text << metric << " (%), mean +- std over seeds\n";
    std::size_t w = 9;
    for (const auto& c : conditions) w = std::max(w, c.size());
    text << "condition" << std::string(w - 9, ' ');
    for (const auto& [arch, g] : groups) text << "  " << arch << std::string(arch.size() < 16 ? 16 - arch.size() : 0, ' ');
    text << '\n';
    for (const auto& c : conditions) {
      text << c << std::string(w - c.size(), ' ');
      for (const auto& [arch, g] : groups) {
        const auto it = cells.find({c, arch});
        std::string cell = "-";
        if (it != cells.end()) {
          const auto& s = std::string(metric) == "WER" ? it->second.wer : it->second.cer;
          cell = pct(s.mean) + " +- " + pct(s.std);
        }
        text << "  " << cell << std::string(cell.size() < std::max<std::size_t>(16, arch.size()) ? std::max<std::size_t>(16, arch.size()) - cell.size() : 0, ' ');
      }
      text << '\n';
    }
    text << '\n';
  }

  write_text(out / "summary.json", summary.dump(2) + "\n");
  write_text(out / "summary.txt", text.str());
  write_text(out / "parameters.txt", params.str());
  return out;
}

}  // namespace htrlab::app
