#include "htrlab/eval/metrics.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "htrlab/error.hpp"

namespace htrlab::eval {

std::int64_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::int64_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<std::int64_t>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::int64_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

ErrorCounts& ErrorCounts::operator+=(const ErrorCounts& o) {
  samples += o.samples;
  word_errors += o.word_errors;
  char_edits += o.char_edits;
  char_total += o.char_total;
  return *this;
}

ErrorCounts count_errors(const std::vector<std::string>& predictions, const std::vector<std::string>& references) {
  require(predictions.size() == references.size(), ErrorCode::LengthMismatch,
          std::to_string(predictions.size()) + " predictions for " + std::to_string(references.size()) +
              " references");
  ErrorCounts c;
  for (std::size_t i = 0; i < references.size(); ++i) {
    require(!references[i].empty(), ErrorCode::InvalidArgument, "empty reference transcription");
    ++c.samples;
    c.word_errors += predictions[i] != references[i] ? 1 : 0;
    c.char_edits += edit_distance(predictions[i], references[i]);
    c.char_total += static_cast<std::int64_t>(references[i].size());
  }
  return c;
}

Rates cer_wer(const std::vector<std::string>& predictions, const std::vector<std::string>& references) {
  const auto c = count_errors(predictions, references);
  return {c.cer(), c.wer()};
}

namespace {

double sorted_sum(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

/// Mean and unbiased variance, independent of input order.
std::pair<double, double> moments(std::vector<double> v) {
  const double n = static_cast<double>(v.size());
  const double m = sorted_sum(v) / n;
  if (v.size() < 2) return {m, 0.0};
  std::vector<double> sq;
  for (double x : v) sq.push_back((x - m) * (x - m));
  return {m, sorted_sum(sq) / (n - 1.0)};
}

}  // namespace

Summary summarize(std::vector<double> values) {
  Summary s;
  s.n = values.size();
  if (values.empty()) return s;
  const auto [m, var] = moments(values);
  s.mean = m;
  s.std = std::sqrt(var);
  s.min = *std::min_element(values.begin(), values.end());
  return s;
}

TTestResult two_sample_t_test(std::vector<double> xs, std::vector<double> ys) {
  require(xs.size() >= 2 && ys.size() >= 2, ErrorCode::InsufficientSamples,
          "the t-test needs at least two values per sample");
  const double nx = static_cast<double>(xs.size()), ny = static_cast<double>(ys.size());
  auto [mx, vx] = moments(std::move(xs));
  auto [my, vy] = moments(std::move(ys));
  TTestResult r;
  if (vx == 0.0 && vy == 0.0) {
    r.degenerate = true;
    if (mx == my) {
      r.t = 0.0;
      r.p = 1.0;
      r.df = nx + ny - 2.0;
      return r;
    }
    constexpr double kVarianceFloor = 1e-12;
    vx = vy = kVarianceFloor;
  }
  const double ax = vx / nx, ay = vy / ny;
  r.t = (mx - my) / std::sqrt(ax + ay);
  r.df = (ax + ay) * (ax + ay) / (ax * ax / (nx - 1.0) + ay * ay / (ny - 1.0));
  const boost::math::students_t dist(r.df);
  const double p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  r.p = std::clamp(p, std::numeric_limits<double>::min(), 1.0);
  return r;
}

std::string layer_lrs_csv(const std::vector<std::string>& names, const std::vector<double>& rates) {
  require(names.size() == rates.size(), ErrorCode::LengthMismatch, "one learning rate per parameter group expected");
  std::string out = "index,name,rate\n";
  char buf[64];
  for (std::size_t i = 0; i < names.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", rates[i]);
    out += std::to_string(i) + "," + names[i] + "," + buf + "\n";
  }
  return out;
}

void export_layer_lrs(const std::vector<std::string>& names, const std::vector<double>& rates,
                      const std::filesystem::path& path) {
  const std::string csv = layer_lrs_csv(names, rates);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(os), ErrorCode::IOError, "cannot write " + path.string());
  os << csv;
  require(static_cast<bool>(os), ErrorCode::IOError, "write failed for " + path.string());
}

}  // namespace htrlab::eval
