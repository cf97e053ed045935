#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "htrlab/error.hpp"
#include "htrlab/eval/metrics.hpp"
#include "htrlab/eval/report.hpp"
#include "htrlab/rng.hpp"
#include "support/edit_oracle.hpp"

using namespace htrlab;
using namespace htrlab::eval;

namespace {

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::FormatError;
}

std::string random_string(Rng& rng, std::size_t max_len) {
  std::string s(rng.index(max_len + 1), 'a');
  for (char& c : s) c = static_cast<char>('a' + rng.index(4));
  return s;
}

EvalReport report(const std::string& cond, std::uint64_t seed, std::vector<double> wers) {
  EvalReport r;
  r.condition = cond;
  r.seed = seed;
  for (std::size_t i = 0; i < wers.size(); ++i) {
    WriterRow row;
    row.writer = "w" + std::to_string(i);
    row.wer = wers[i];
    row.cer = wers[i] / 2;
    r.rows.push_back(row);
  }
  return r;
}

}  // namespace

TEST(EditDistance, SmallCases) {
  EXPECT_EQ(edit_distance("abc", "abc"), 0);
  EXPECT_EQ(edit_distance("", "abc"), 3);
  EXPECT_EQ(edit_distance("abc", ""), 3);
  EXPECT_EQ(edit_distance("kitten", "sitting"), 3);
  EXPECT_EQ(edit_distance("flaw", "lawn"), 2);
}

TEST(EditDistance, MatchesScriptSearchUpToLengthFour) {
  const auto strings = htrlab::testing::all_strings("abc", 4);
  htrlab::testing::EditScriptSearch search("abc", 4);
  for (const auto& a : strings) {
    search.from(a);
    for (const auto& b : strings) ASSERT_EQ(edit_distance(a, b), search.distance(b)) << a << " / " << b;
  }
}

TEST(EditDistance, MetricPropertiesOnRandomTriples) {
  Rng rng(17);
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_string(rng, 8), b = random_string(rng, 8), c = random_string(rng, 8);
    EXPECT_EQ(edit_distance(a, b), edit_distance(b, a));
    EXPECT_EQ(edit_distance(a, b) == 0, a == b);
    EXPECT_LE(edit_distance(a, c), edit_distance(a, b) + edit_distance(b, c));
  }
}

TEST(Rates, ExampleValues) {
  auto r = cer_wer({"abc", "de"}, {"abc", "de"});
  EXPECT_EQ(r.cer, 0.0);
  EXPECT_EQ(r.wer, 0.0);
  r = cer_wer({"helo"}, {"hello"});
  EXPECT_DOUBLE_EQ(r.cer, 0.2);
  EXPECT_DOUBLE_EQ(r.wer, 1.0);
  r = cer_wer({"ab", "xx"}, {"ab", "cd"});
  EXPECT_DOUBLE_EQ(r.wer, 0.5);
  EXPECT_DOUBLE_EQ(r.cer, 0.5);
}

TEST(Rates, OrderAndDuplicationInvariance) {
  std::vector<std::string> p{"cat", "dgo", "", "bird"}, t{"cat", "dog", "emu", "bard"};
  const auto base = cer_wer(p, t);
  std::reverse(p.begin(), p.end());
  std::reverse(t.begin(), t.end());
  EXPECT_EQ(cer_wer(p, t).cer, base.cer);
  auto p2 = p, t2 = t;
  p2.insert(p2.end(), p.begin(), p.end());
  t2.insert(t2.end(), t.begin(), t.end());
  EXPECT_EQ(cer_wer(p2, t2).wer, base.wer);
}

TEST(Rates, ContractErrors) {
  EXPECT_EQ(code_of([] { cer_wer({"a"}, {"a", "b"}); }), ErrorCode::LengthMismatch);
  EXPECT_EQ(code_of([] { cer_wer({"a"}, {""}); }), ErrorCode::InvalidArgument);
}

TEST(Aggregate, TwoRunsAndSingleRun) {
  const auto two = aggregate_runs({report("m", 1, {0.20}), report("m", 2, {0.22})});
  ASSERT_EQ(two.size(), 1u);
  EXPECT_NEAR(two[0].wer.mean, 0.21, 1e-15);
  EXPECT_NEAR(two[0].wer.std, std::sqrt(2.0) / 100, 1e-15);
  EXPECT_DOUBLE_EQ(two[0].best_wer, 0.20);
  EXPECT_EQ(two[0].best_seed, 1u);

  const auto one = aggregate_runs({report("m", 3, {0.3, 0.1})});
  EXPECT_EQ(one[0].wer.std, 0.0);
  EXPECT_EQ(one[0].wer.mean, one[0].best_wer);
  EXPECT_EQ(code_of([] { aggregate_runs({}); }), ErrorCode::InsufficientSamples);
}

TEST(Aggregate, PermutationInvariantAndGroupedByCondition) {
  std::vector<EvalReport> rs{report("a", 1, {0.1, 0.7}), report("b", 1, {0.5}), report("a", 2, {0.3, 0.35}),
                             report("a", 3, {0.9, 0.05}), report("b", 2, {0.4})};
  const auto s1 = aggregate_runs(rs);
  std::reverse(rs.begin(), rs.end());
  auto s2 = aggregate_runs(rs);
  std::reverse(s2.begin(), s2.end());
  ASSERT_EQ(s1.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(s1[i].condition, s2[i].condition);
    EXPECT_EQ(s1[i].wer.mean, s2[i].wer.mean);
    EXPECT_EQ(s1[i].wer.std, s2[i].wer.std);
    EXPECT_EQ(s1[i].best_seed, s2[i].best_seed);
  }
}

// Reference values computed with an independent Welch implementation
// (scipy.stats.ttest_ind with equal_var=False) and frozen here.
TEST(TTest, MatchesReferenceValues) {
  struct Case {
    std::vector<double> xs, ys;
    double t, p;
  };
  const std::vector<Case> cases{
      {{1, 2, 3, 4, 5}, {2, 4, 6, 8, 10, 12}, -2.3763541031440183, 0.04928433820673049},
      {{0.31, 0.25, 0.40, 0.28}, {0.22, 0.30, 0.18, 0.21, 0.26}, 1.9715336208911527, 0.10226104267155241},
      {{10, 10.5, 9.8}, {10.1, 10.2, 10.3, 10.4}, -0.6882472016116873, 0.5520918519929338},
  };
  for (const auto& c : cases) {
    const auto r = two_sample_t_test(c.xs, c.ys);
    EXPECT_NEAR(r.t, c.t, 1e-12);
    EXPECT_NEAR(r.p, c.p, 1e-10);
    EXPECT_FALSE(r.degenerate);
    EXPECT_EQ(r.p < 0.05, c.p < 0.05);
  }
}

TEST(TTest, IdenticalAndConstantSamples) {
  const auto same = two_sample_t_test({0.1, 0.4, 0.2}, {0.4, 0.2, 0.1});
  EXPECT_EQ(same.t, 0.0);
  EXPECT_EQ(same.p, 1.0);

  const auto flat = two_sample_t_test({0.3, 0.3, 0.3}, {0.3, 0.3});
  EXPECT_TRUE(flat.degenerate);
  EXPECT_EQ(flat.p, 1.0);

  const auto apart = two_sample_t_test({0, 0, 0, 0, 0}, {1, 1, 1, 1, 1});
  EXPECT_TRUE(apart.degenerate);
  EXPECT_LT(apart.p, 1e-3);
  EXPECT_GT(apart.p, 0.0);
}

TEST(TTest, SwapNegatesTAndKeepsP) {
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> xs(2 + rng.index(6)), ys(2 + rng.index(6));
    for (double& v : xs) v = rng.normal();
    for (double& v : ys) v = rng.normal() + 0.5;
    const auto a = two_sample_t_test(xs, ys), b = two_sample_t_test(ys, xs);
    EXPECT_EQ(a.t, -b.t);
    EXPECT_EQ(a.p, b.p);
    EXPECT_GT(a.p, 0.0);
    EXPECT_LE(a.p, 1.0);
  }
  EXPECT_EQ(code_of([] { two_sample_t_test({1.0}, {1.0, 2.0}); }), ErrorCode::InsufficientSamples);
}

TEST(LayerRates, CsvRowsAndReexportIsByteIdentical) {
  const std::vector<std::string> names{"backbone.conv0.weight", "decoder.out.bias"};
  const std::vector<double> rates{0.1, 1.0 / 3.0};
  const auto csv = layer_lrs_csv(names, rates);
  EXPECT_EQ(csv, "index,name,rate\n0,backbone.conv0.weight,0.10000000000000001\n1,decoder.out.bias,0.33333333333333331\n");
  const auto dir = std::filesystem::temp_directory_path() / "htrlab_eval";
  std::filesystem::create_directories(dir);
  export_layer_lrs(names, rates, dir / "a.csv");
  export_layer_lrs(names, rates, dir / "b.csv");
  auto slurp = [](const std::filesystem::path& p) {
    std::stringstream ss;
    ss << std::ifstream(p).rdbuf();
    return ss.str();
  };
  EXPECT_EQ(slurp(dir / "a.csv"), csv);
  EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "b.csv"));
  EXPECT_EQ(code_of([&] { layer_lrs_csv(names, {0.1}); }), ErrorCode::LengthMismatch);
  EXPECT_EQ(code_of([&] { export_layer_lrs(names, rates, dir / "missing" / "x.csv"); }), ErrorCode::IOError);
}

TEST(Report, AccumulatorAveragesRunsAndJsonRoundTrips) {
  WriterAccumulator acc("w007");
  acc.add_run({"abc", "xy"}, {"abc", "xz"});
  acc.add_run({"abc", "xz"}, {"abc", "xz"});
  const WriterRow row = acc.row();
  EXPECT_EQ(row.runs, 2);
  EXPECT_EQ(row.n_query, 2);
  EXPECT_DOUBLE_EQ(row.wer, 0.25);
  EXPECT_DOUBLE_EQ(row.cer, 0.1);
  EXPECT_EQ(row.counts.char_edits, 1);

  EvalReport r;
  r.condition = "maml/with-adaptation";
  r.seed = 11;
  r.rows = {row, report("x", 0, {1.0 / 3.0}).rows[0]};
  const std::string json = to_json(r);
  EXPECT_EQ(report_from_json(json), r);
  EXPECT_EQ(to_json(report_from_json(json)), json);
  EXPECT_EQ(code_of([] { report_from_json("{\"condition\": 1}"); }), ErrorCode::FormatError);

  const std::string text = to_text(r);
  EXPECT_NE(text.find("w007"), std::string::npos);
  EXPECT_NE(text.find("25.00"), std::string::npos);
}

TEST(Report, PairedComparisonOfIdenticalConditions) {
  const auto a = report("with", 0, {0.2, 0.5, 0.1});
  auto b = a;
  b.condition = "without";
  const auto p = paired_comparison(a, b);
  EXPECT_EQ(p.delta(), 0.0);
  EXPECT_EQ(p.test.p, 1.0);
  EXPECT_EQ(p.writers.size(), 3u);
  EXPECT_NE(to_json(p).find("\"p\": 1.0"), std::string::npos);
  b.rows.pop_back();
  EXPECT_EQ(code_of([&] { paired_comparison(a, b); }), ErrorCode::LengthMismatch);
}
