#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace htrlab::eval {

/// Levenshtein distance with unit costs.
std::int64_t edit_distance(std::string_view a, std::string_view b);

struct ErrorCounts {
  std::int64_t samples = 0;
  std::int64_t word_errors = 0;
  std::int64_t char_edits = 0;
  std::int64_t char_total = 0;

  double cer() const { return char_total ? static_cast<double>(char_edits) / static_cast<double>(char_total) : 0.0; }
  double wer() const { return samples ? static_cast<double>(word_errors) / static_cast<double>(samples) : 0.0; }
  ErrorCounts& operator+=(const ErrorCounts& o);
  friend bool operator==(const ErrorCounts&, const ErrorCounts&) = default;
};

/// CER = sum of edit distances / sum of reference lengths; WER = share of
/// samples whose prediction differs from the reference. LengthMismatch when
/// the lists differ in size, InvalidArgument on an empty reference.
ErrorCounts count_errors(const std::vector<std::string>& predictions, const std::vector<std::string>& references);

struct Rates {
  double cer = 0.0;
  double wer = 0.0;
};
Rates cer_wer(const std::vector<std::string>& predictions, const std::vector<std::string>& references);

struct Summary {
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
  double min = 0.0;
};

/// Order-independent: values are summed in sorted order.
Summary summarize(std::vector<double> values);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  double df = 0.0;
  /// Both samples had zero variance; a tiny variance was substituted.
  bool degenerate = false;
};

/// Welch's unequal-variance two-sample t-test, two-sided. Needs at least two
/// values per side (InsufficientSamples). p lies in (0, 1].
TTestResult two_sample_t_test(std::vector<double> xs, std::vector<double> ys);

/// CSV rows "index,name,rate" in the given order.
std::string layer_lrs_csv(const std::vector<std::string>& names, const std::vector<double>& rates);
void export_layer_lrs(const std::vector<std::string>& names, const std::vector<double>& rates,
                      const std::filesystem::path& path);

}  // namespace htrlab::eval
