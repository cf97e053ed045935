#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "htrlab/eval/metrics.hpp"

namespace htrlab::eval {

/// One test writer: error counts pooled over all query sets and runs, plus
/// the mean of the per-run rates.
struct WriterRow {
  std::string writer;
  std::int64_t runs = 0;
  std::int64_t n_query = 0;  // query samples per run
  double wer = 0.0;
  double cer = 0.0;
  ErrorCounts counts;

  friend bool operator==(const WriterRow&, const WriterRow&) = default;
};

struct EvalReport {
  /// e.g. "metahtr/with-adaptation" or "code-hinge".
  std::string condition;
  std::uint64_t seed = 0;
  std::vector<WriterRow> rows;

  /// Unweighted means over writer rows.
  double wer() const;
  double cer() const;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// Accumulates runs for one writer; rates per run are averaged.
class WriterAccumulator {
 public:
  explicit WriterAccumulator(std::string writer) : writer_(std::move(writer)) {}
  void add_run(const std::vector<std::string>& predictions, const std::vector<std::string>& references);
  WriterRow row() const;
  const std::vector<double>& run_wers() const { return wers_; }

 private:
  std::string writer_;
  std::int64_t n_query_ = 0;
  ErrorCounts counts_;
  std::vector<double> wers_, cers_;
};

struct ConditionSummary {
  std::string condition;
  Summary wer;
  Summary cer;
  double best_wer = 0.0;
  std::uint64_t best_seed = 0;
};

/// Groups reports by condition (first-seen order) and summarizes the
/// per-report means. Needs at least one report.
std::vector<ConditionSummary> aggregate_runs(const std::vector<EvalReport>& reports);

/// Paired per-writer comparison of two conditions on the same query sets.
struct PairedReport {
  std::string with_condition;
  std::string without_condition;
  std::vector<std::string> writers;
  std::vector<double> with_wer;     // per-writer mean over runs
  std::vector<double> without_wer;
  TTestResult test;

  double delta() const;  // mean(with) - mean(without)
};

PairedReport paired_comparison(const EvalReport& with, const EvalReport& without);

std::string to_json(const EvalReport& r);
EvalReport report_from_json(const std::string& text);
std::string to_json(const PairedReport& r);
std::string to_json(const std::vector<ConditionSummary>& s);

/// Aligned text tables; rates shown as percentages.
std::string to_text(const EvalReport& r);
std::string to_text(const PairedReport& r);
std::string to_text(const std::vector<ConditionSummary>& s);

}  // namespace htrlab::eval
