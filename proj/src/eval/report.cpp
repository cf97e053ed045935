#include "htrlab/eval/report.hpp"

#include <json.hpp>

#include <cstdio>
#include <map>

#include "htrlab/error.hpp"

namespace htrlab::eval {

using nlohmann::ordered_json;

namespace {

double mean_of(std::vector<double> v) { return v.empty() ? 0.0 : summarize(std::move(v)).mean; }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t w, bool right = false) {
  if (s.size() >= w) return s;
  const std::string fill(w - s.size(), ' ');
  return right ? fill + s : s + fill;
}

/// Columns are left-aligned for the first entry and right-aligned after.
std::string table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> widths;
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (widths.size() <= c) widths.push_back(0);
      widths[c] = std::max(widths[c], r[c].size());
    }
  std::string out;
  for (const auto& r : rows) {
    std::string line;
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (c) line += "  ";
      line += pad(r[c], widths[c], c > 0);
    }
    out += line + "\n";
  }
  return out;
}

}  // namespace

double EvalReport::wer() const {
  std::vector<double> v;
  for (const auto& r : rows) v.push_back(r.wer);
  return mean_of(v);
}

double EvalReport::cer() const {
  std::vector<double> v;
  for (const auto& r : rows) v.push_back(r.cer);
  return mean_of(v);
}

void WriterAccumulator::add_run(const std::vector<std::string>& predictions,
                                const std::vector<std::string>& references) {
  const ErrorCounts c = count_errors(predictions, references);
  n_query_ = c.samples;
  counts_ += c;
  wers_.push_back(c.wer());
  cers_.push_back(c.cer());
}

WriterRow WriterAccumulator::row() const {
  WriterRow r;
  r.writer = writer_;
  r.runs = static_cast<std::int64_t>(wers_.size());
  r.n_query = n_query_;
  r.wer = mean_of(wers_);
  r.cer = mean_of(cers_);
  r.counts = counts_;
  return r;
}

std::vector<ConditionSummary> aggregate_runs(const std::vector<EvalReport>& reports) {
  require(!reports.empty(), ErrorCode::InsufficientSamples, "no reports to aggregate");
  std::vector<std::string> order;
  std::map<std::string, std::vector<const EvalReport*>> groups;
  for (const auto& r : reports) {
    if (!groups.count(r.condition)) order.push_back(r.condition);
    groups[r.condition].push_back(&r);
  }
  std::vector<ConditionSummary> out;
  for (const auto& cond : order) {
    std::vector<double> wers, cers;
    ConditionSummary s;
    s.condition = cond;
    bool first = true;
    for (const EvalReport* r : groups[cond]) {
      const double w = r->wer();
      wers.push_back(w);
      cers.push_back(r->cer());
      // Ties go to the lower seed so the result does not depend on order.
      if (first || w < s.best_wer || (w == s.best_wer && r->seed < s.best_seed)) {
        s.best_wer = w;
        s.best_seed = r->seed;
        first = false;
      }
    }
    s.wer = summarize(wers);
    s.cer = summarize(cers);
    out.push_back(s);
  }
  return out;
}

double PairedReport::delta() const { return mean_of(with_wer) - mean_of(without_wer); }

PairedReport paired_comparison(const EvalReport& with, const EvalReport& without) {
  require(with.rows.size() == without.rows.size(), ErrorCode::LengthMismatch, "paired reports differ in writers");
  PairedReport p;
  p.with_condition = with.condition;
  p.without_condition = without.condition;
  for (std::size_t i = 0; i < with.rows.size(); ++i) {
    require(with.rows[i].writer == without.rows[i].writer, ErrorCode::LengthMismatch,
            "paired reports differ in writer order");
    p.writers.push_back(with.rows[i].writer);
    p.with_wer.push_back(with.rows[i].wer);
    p.without_wer.push_back(without.rows[i].wer);
  }
  p.test = two_sample_t_test(p.with_wer, p.without_wer);
  return p;
}

std::string to_json(const EvalReport& r) {
  ordered_json j;
  j["condition"] = r.condition;
  j["seed"] = r.seed;
  j["wer"] = r.wer();
  j["cer"] = r.cer();
  ordered_json rows = ordered_json::array();
  for (const auto& w : r.rows) {
    rows.push_back({{"writer", w.writer},
                    {"runs", w.runs},
                    {"n_query", w.n_query},
                    {"wer", w.wer},
                    {"cer", w.cer},
                    {"samples", w.counts.samples},
                    {"word_errors", w.counts.word_errors},
                    {"char_edits", w.counts.char_edits},
                    {"char_total", w.counts.char_total}});
  }
  j["writers"] = rows;
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
  try {
    const auto j = ordered_json::parse(text);
    EvalReport r;
    r.condition = j.at("condition").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& w : j.at("writers")) {
      WriterRow row;
      row.writer = w.at("writer").get<std::string>();
      row.runs = w.at("runs").get<std::int64_t>();
      row.n_query = w.at("n_query").get<std::int64_t>();
      row.wer = w.at("wer").get<double>();
      row.cer = w.at("cer").get<double>();
      row.counts.samples = w.at("samples").get<std::int64_t>();
      row.counts.word_errors = w.at("word_errors").get<std::int64_t>();
      row.counts.char_edits = w.at("char_edits").get<std::int64_t>();
      row.counts.char_total = w.at("char_total").get<std::int64_t>();
      r.rows.push_back(row);
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::FormatError, std::string("bad report: ") + e.what());
  }
}

std::string to_json(const PairedReport& r) {
  ordered_json j;
  j["with"] = r.with_condition;
  j["without"] = r.without_condition;
  ordered_json rows = ordered_json::array();
  for (std::size_t i = 0; i < r.writers.size(); ++i)
    rows.push_back({{"writer", r.writers[i]}, {"wer_with", r.with_wer[i]}, {"wer_without", r.without_wer[i]}});
  j["writers"] = rows;
  j["delta_wer"] = r.delta();
  j["t"] = r.test.t;
  j["p"] = r.test.p;
  j["df"] = r.test.df;
  j["degenerate_variance"] = r.test.degenerate;
  j["significant_at_0.05"] = r.test.p < 0.05;
  return j.dump(2) + "\n";
}

std::string to_json(const std::vector<ConditionSummary>& s) {
  ordered_json arr = ordered_json::array();
  for (const auto& c : s)
    arr.push_back({{"condition", c.condition},
                   {"runs", c.wer.n},
                   {"wer_mean", c.wer.mean},
                   {"wer_std", c.wer.std},
                   {"cer_mean", c.cer.mean},
                   {"cer_std", c.cer.std},
                   {"wer_best", c.best_wer},
                   {"best_seed", c.best_seed}});
  return arr.dump(2) + "\n";
}

std::string to_text(const EvalReport& r) {
  std::vector<std::vector<std::string>> rows{{"writer", "runs", "n_query", "WER%", "CER%"}};
  for (const auto& w : r.rows)
    rows.push_back({w.writer, std::to_string(w.runs), std::to_string(w.n_query), fmt("%.2f", 100 * w.wer),
                    fmt("%.2f", 100 * w.cer)});
  rows.push_back({"mean", "", "", fmt("%.2f", 100 * r.wer()), fmt("%.2f", 100 * r.cer())});
  return "condition " + r.condition + "  seed " + std::to_string(r.seed) + "\n" + table(rows);
}

std::string to_text(const PairedReport& r) {
  std::vector<std::vector<std::string>> rows{{"writer", "WER% " + r.with_condition, "WER% " + r.without_condition}};
  for (std::size_t i = 0; i < r.writers.size(); ++i)
    rows.push_back({r.writers[i], fmt("%.2f", 100 * r.with_wer[i]), fmt("%.2f", 100 * r.without_wer[i])});
  std::string out = table(rows);
  out += "delta WER% " + fmt("%+.2f", 100 * r.delta()) + "  t " + fmt("%.4f", r.test.t) + "  df " +
         fmt("%.2f", r.test.df) + "  p " + fmt("%.4g", r.test.p) +
         (r.test.p < 0.05 ? "  significant" : "  not significant") + " at 0.05\n";
  return out;
}

std::string to_text(const std::vector<ConditionSummary>& s) {
  std::vector<std::vector<std::string>> rows{{"condition", "runs", "WER%", "CER%", "best WER%"}};
  for (const auto& c : s)
    rows.push_back({c.condition, std::to_string(c.wer.n),
                    fmt("%.2f", 100 * c.wer.mean) + " +- " + fmt("%.2f", 100 * c.wer.std),
                    fmt("%.2f", 100 * c.cer.mean) + " +- " + fmt("%.2f", 100 * c.cer.std),
                    fmt("%.2f", 100 * c.best_wer)});
  return table(rows);
}

}  // namespace htrlab::eval
