#include "cif/metrics.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "json.hpp"

namespace cif {
namespace {

// Plain recursion over the three edit operations.
std::size_t edit_oracle(const std::vector<int>& a, std::size_t i, const std::vector<int>& b,
                        std::size_t j) {
  if (i == a.size()) return b.size() - j;
  if (j == b.size()) return a.size() - i;
  const std::size_t diag = edit_oracle(a, i + 1, b, j + 1) + (a[i] == b[j] ? 0 : 1);
  return std::min({diag, edit_oracle(a, i + 1, b, j) + 1, edit_oracle(a, i, b, j + 1) + 1});
}

std::vector<int> random_seq(std::mt19937_64& rng, std::size_t max_len) {
  std::vector<int> v(rng() % (max_len + 1));
  for (auto& x : v) x = static_cast<int>(rng() % 3);
  return v;
}

TEST(EditDistance, IdenticalIsZero) {
  EXPECT_EQ(edit_distance({1, 2, 3}, {1, 2, 3}).errors(), 0u);
  EXPECT_EQ(edit_distance({}, {}).rate(), 0.0);
}

TEST(EditDistance, SingleDeletion) {
  const ErrorBreakdown e = edit_distance({0, 1, 2}, {0, 2});
  EXPECT_EQ(e.deletions, 1u);
  EXPECT_EQ(e.substitutions, 0u);
  EXPECT_EQ(e.insertions, 0u);
  EXPECT_NEAR(e.rate(), 1.0 / 3.0, 1e-15);
}

TEST(EditDistance, TieBreakPrefersSubstitution) {
  const ErrorBreakdown e = edit_distance({1}, {2});
  EXPECT_EQ(e.substitutions, 1u);
  EXPECT_EQ(e.insertions + e.deletions, 0u);
  const ErrorBreakdown f = edit_distance({1, 2}, {2, 1});
  EXPECT_EQ(f.errors(), 2u);
  EXPECT_EQ(f.substitutions, 2u);
}

TEST(EditDistance, MatchesRecursiveOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto a = random_seq(rng, 6), b = random_seq(rng, 6);
    const ErrorBreakdown e = edit_distance(a, b);
    EXPECT_EQ(e.errors(), edit_oracle(a, 0, b, 0));
    EXPECT_EQ(e.reference_length, a.size());
    EXPECT_EQ(a.size() - e.deletions - e.substitutions + e.substitutions + e.insertions, b.size());
  }
}

TEST(EditDistance, SymmetricAndTriangle) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 500; ++trial) {
    const auto a = random_seq(rng, 8), b = random_seq(rng, 8), c = random_seq(rng, 8);
    const ErrorBreakdown ab = edit_distance(a, b), ba = edit_distance(b, a);
    EXPECT_EQ(ab.errors(), ba.errors());
    EXPECT_LE(edit_distance(a, c).errors(), ab.errors() + edit_distance(b, c).errors());
  }
}

TEST(BoundaryF1, ExactMatch) {
  const BoundaryScore s = boundary_f1({2, 5, 9}, {2, 5, 9}, 0);
  EXPECT_DOUBLE_EQ(s.f1(), 1.0);
}

TEST(BoundaryF1, NoPredictions) {
  const BoundaryScore s = boundary_f1({2, 5}, {}, 1);
  EXPECT_DOUBLE_EQ(s.precision(), 1.0);
  EXPECT_DOUBLE_EQ(s.recall(), 0.0);
  EXPECT_DOUBLE_EQ(s.f1(), 0.0);
}

TEST(BoundaryF1, ShiftWithinTolerance) {
  EXPECT_DOUBLE_EQ(boundary_f1({2, 5, 9}, {3, 6, 10}, 1).f1(), 1.0);
  EXPECT_DOUBLE_EQ(boundary_f1({2, 5, 9}, {3, 6, 10}, 0).f1(), 0.0);
}

TEST(BoundaryF1, EachReferenceMatchedOnce) {
  const BoundaryScore s = boundary_f1({4}, {3, 4, 5}, 1);
  EXPECT_EQ(s.matched, 1u);
  EXPECT_NEAR(s.precision(), 1.0 / 3.0, 1e-15);
}

TEST(BoundaryF1, MonotoneInTolerance) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::size_t> ref, pred;
    for (std::size_t k = 0, n = rng() % 6; k < n; ++k) ref.push_back(rng() % 20);
    for (std::size_t k = 0, n = rng() % 6; k < n; ++k) pred.push_back(rng() % 20);
    std::sort(ref.begin(), ref.end());
    std::sort(pred.begin(), pred.end());
    double previous = -1.0;
    for (std::size_t tol = 0; tol < 6; ++tol) {
      const double f = boundary_f1(ref, pred, tol).f1();
      EXPECT_GE(f, previous);
      previous = f;
    }
  }
}

TEST(Metrics, FrameConversions) {
  EXPECT_EQ(encoded_boundaries({5, 6, 10, 16}, 4), (std::vector<std::size_t>{1, 2, 3, 4}));
  EXPECT_EQ(firing_boundaries({0, 3}), (std::vector<std::size_t>{1, 4}));
}

TEST(Metrics, JsonReportKeys) {
  MetricsAccumulator acc;
  acc.add_transcript({1, 2, 3}, {1, 3});
  acc.add_transcript({4}, {4, 5});
  acc.add_boundaries(boundary_f1({1, 2}, {1}, 0));
  const auto j = nlohmann::json::parse(acc.to_json("cer"));
  EXPECT_NEAR(j["cer"].get<double>(), 2.0 / 4.0, 1e-15);
  EXPECT_EQ(j["sub"], 0);
  EXPECT_EQ(j["del"], 1);
  EXPECT_EQ(j["ins"], 1);
  EXPECT_EQ(j["n_utts"], 2);
  EXPECT_DOUBLE_EQ(j["boundary_precision"].get<double>(), 1.0);
  EXPECT_DOUBLE_EQ(j["boundary_recall"].get<double>(), 0.5);
  EXPECT_TRUE(j.contains("boundary_f1"));
  EXPECT_TRUE(nlohmann::json::parse(acc.to_json("wer")).contains("wer"));
}

}  // namespace
}  // namespace cif
