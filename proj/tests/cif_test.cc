#include "cif/cif.h"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cif/grad_check.h"
#include "cif_oracle.h"

namespace cif {
namespace {

// Identity states: embedding i then reads off the coefficient of every step.
Tensor identity_states(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return Tensor::constant({n, n}, std::move(v));
}

Tensor weights(std::vector<double> a) {
  const std::size_t n = a.size();
  return Tensor::constant({n}, std::move(a));
}

std::vector<std::vector<double>> rows_of(const Tensor& t) {
  std::vector<std::vector<double>> out(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t r = 0; r < t.dim(0); ++r)
    for (std::size_t c = 0; c < t.dim(1); ++c) out[r][c] = t.at(r, c);
  return out;
}

TEST(CifFire, WorkedExampleFiresTwice) {
  auto result = cif_fire(identity_states(5), weights({0.2, 0.9, 0.6, 0.6, 0.1}), CifConfig{});
  ASSERT_EQ(result.count(), 2u);
  EXPECT_EQ(result.positions, (std::vector<std::size_t>{1, 3}));  // h2 and h4
  const std::vector<std::vector<double>> expected = {{0.2, 0.8, 0, 0, 0}, {0, 0.1, 0.6, 0.3, 0}};
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t u = 0; u < 5; ++u)
      EXPECT_NEAR(result.embeddings.at(i, u), expected[i][u], 1e-9) << i << "," << u;
  EXPECT_NEAR(result.residual_weight, 0.4, 1e-9);
  EXPECT_NEAR(result.splits[0].completing, 0.8, 1e-12);
  EXPECT_NEAR(result.splits[0].carried, 0.1, 1e-12);
  EXPECT_NEAR(result.splits[1].completing, 0.3, 1e-12);
  EXPECT_NEAR(result.splits[1].carried, 0.3, 1e-12);
}

TEST(CifFire, UnitWeightsFireOnEveryStep) {
  auto h = Tensor::constant({3, 2}, {1, 2, 3, 4, 5, 6});
  auto result = cif_fire(h, weights({1, 1, 1}), CifConfig{});
  ASSERT_EQ(result.count(), 3u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(result.embeddings.at(i), h.at(i));
  EXPECT_EQ(result.residual_weight, 0.0);
}

TEST(CifFire, ZeroWeightsNeverFire) {
  auto result = cif_fire(identity_states(4), weights({0, 0, 0, 0}), CifConfig{});
  EXPECT_EQ(result.count(), 0u);
  EXPECT_EQ(result.residual_weight, 0.0);
}

TEST(CifFire, EmptySequence) {
  auto result = cif_fire(Tensor::zeros({0, 3}), Tensor::zeros({0}), CifConfig{});
  EXPECT_EQ(result.count(), 0u);
  EXPECT_EQ(result.embeddings.shape(), (Shape{0, 3}));
  EXPECT_EQ(result.residual_weight, 0.0);
}

TEST(CifFire, RejectsNegativeWeightsAndMisalignedInputs) {
  EXPECT_THROW(cif_fire(identity_states(2), weights({0.5, -0.1}), CifConfig{}),
               std::invalid_argument);
  EXPECT_THROW(cif_fire(identity_states(3), weights({0.5, 0.1}), CifConfig{}),
               std::invalid_argument);
}

TEST(CifConfig, Validation) {
  EXPECT_NO_THROW((CifConfig{1.0, 0.5}.validate()));
  EXPECT_THROW((CifConfig{0.0, 0.0}.validate()), std::invalid_argument);
  EXPECT_THROW((CifConfig{1.2, 0.5}.validate()), std::invalid_argument);
  EXPECT_THROW((CifConfig{0.9, 0.9}.validate()), std::invalid_argument);
}

struct RandomCase {
  std::vector<std::vector<double>> h;
  std::vector<double> alpha;
  Tensor states;
  Tensor alpha_tensor;
};

RandomCase random_case(std::mt19937_64& rng, std::size_t max_steps, std::size_t width) {
  std::uniform_int_distribution<std::size_t> len(1, max_steps);
  std::uniform_real_distribution<double> unit(0.0, 1.0), sym(-1.0, 1.0);
  RandomCase c;
  const std::size_t n = len(rng);
  c.h.assign(n, std::vector<double>(width));
  std::vector<double> flat;
  for (auto& row : c.h)
    for (auto& v : row) flat.push_back(v = sym(rng));
  for (std::size_t u = 0; u < n; ++u) c.alpha.push_back(unit(rng));
  c.states = Tensor::constant({n, width}, flat);
  c.alpha_tensor = Tensor::constant({n}, c.alpha);
  return c;
}

TEST(CifFire, MatchesPrefixSumOracle) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 1000; ++trial) {
    auto c = random_case(rng, 50, 3);
    auto got = cif_fire(c.states, c.alpha_tensor, CifConfig{});
    auto want = testing::simulate_cif(c.h, c.alpha, 1.0);
    ASSERT_EQ(got.count(), want.positions.size()) << "trial " << trial;
    EXPECT_EQ(got.positions, want.positions) << "trial " << trial;
    auto rows = rows_of(got.embeddings);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t k = 0; k < 3; ++k) ASSERT_NEAR(rows[i][k], want.embeddings[i][k], 1e-9);
    EXPECT_NEAR(got.residual_weight, want.residual, 1e-9);
  }
}

TEST(CifFire, SmallerThresholdFiresRepeatedlyWithinAStep) {
  // beta = 0.4 with alpha_1 = 0.9: fires twice at step 0, carrying 0.1.
  CifConfig config{0.4, 0.2};
  auto result = cif_fire(identity_states(2), weights({0.9, 0.5}), config);
  ASSERT_EQ(result.count(), 3u);
  EXPECT_EQ(result.positions, (std::vector<std::size_t>{0, 0, 1}));
  EXPECT_NEAR(result.embeddings.at(0, 0), 0.4, 1e-12);
  EXPECT_NEAR(result.embeddings.at(1, 0), 0.4, 1e-12);
  EXPECT_NEAR(result.embeddings.at(2, 0), 0.1, 1e-12);
  EXPECT_NEAR(result.embeddings.at(2, 1), 0.3, 1e-12);
  EXPECT_NEAR(result.residual_weight, 0.2, 1e-12);

  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> beta(0.3, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    auto c = random_case(rng, 30, 2);
    const double b = beta(rng);
    auto got = cif_fire(c.states, c.alpha_tensor, CifConfig{b, 0.0});
    auto want = testing::simulate_cif(c.h, c.alpha, b);
    ASSERT_EQ(got.positions, want.positions) << "trial " << trial;
    auto rows = rows_of(got.embeddings);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t k = 0; k < 2; ++k) ASSERT_NEAR(rows[i][k], want.embeddings[i][k], 1e-9);
  }
}

TEST(CifFire, ConservationAndCompleteness) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> beta(0.3, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    auto c = random_case(rng, 50, 1);
    const std::size_t n = c.alpha.size();
    const double b = trial % 2 ? 1.0 : beta(rng);
    auto result = cif_fire(identity_states(n), c.alpha_tensor, CifConfig{b, 0.0});
    double total = 0.0;
    for (double a : c.alpha) total += a;
    EXPECT_NEAR(result.count() * b + result.residual_weight, total, 1e-9);
    for (std::size_t i = 0; i < result.count(); ++i) {
      double row = 0.0;
      for (std::size_t u = 0; u < n; ++u) row += result.embeddings.at(i, u);
      ASSERT_NEAR(row, b, 1e-9);
    }
    for (std::size_t i = 1; i < result.count(); ++i)
      ASSERT_LE(result.positions[i - 1], result.positions[i]);
  }
}

TEST(CifFire, EmbeddingsIgnoreLaterSteps) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    auto c = random_case(rng, 30, 3);
    auto base = cif_fire(c.states, c.alpha_tensor, CifConfig{});
    for (std::size_t i = 0; i < base.count(); ++i) {
      const std::size_t pos = base.positions[i];
      auto alpha = c.alpha;
      auto h = std::vector<double>(c.states.values().begin(), c.states.values().end());
      for (std::size_t v = pos + 1; v < alpha.size(); ++v) {
        alpha[v] = unit(rng);
        for (std::size_t k = 0; k < 3; ++k) h[v * 3 + k] += unit(rng);
      }
      auto perturbed = cif_fire(Tensor::constant(c.states.shape(), h), weights(alpha), CifConfig{});
      ASSERT_GT(perturbed.count(), i);
      for (std::size_t k = 0; k < 3; ++k)
        ASSERT_EQ(perturbed.embeddings.at(i, k), base.embeddings.at(i, k));
    }
  }
}

TEST(CifStreaming, WorkedExampleInTwoChunks) {
  auto h = identity_states(5);
  std::vector<double> alpha = {0.2, 0.9, 0.6, 0.6, 0.1};
  auto offline = cif_fire(h, weights(alpha), CifConfig{});
  CifStreamState stream;
  auto first = cif_fire_streaming(slice(h, 0, 0, 2), weights({0.2, 0.9}), stream, CifConfig{});
  auto second = cif_fire_streaming(slice(h, 0, 2, 5), weights({0.6, 0.6, 0.1}), stream, CifConfig{});
  ASSERT_EQ(first.size(), 1u);
  ASSERT_EQ(second.size(), 1u);
  EXPECT_EQ(first[0].position, 1u);
  EXPECT_EQ(second[0].position, 3u);
  for (std::size_t u = 0; u < 5; ++u) {
    EXPECT_EQ(first[0].embedding[u], offline.embeddings.at(0, u));
    EXPECT_EQ(second[0].embedding[u], offline.embeddings.at(1, u));
  }
  EXPECT_EQ(stream.weight, offline.residual_weight);
  EXPECT_EQ(stream.fired, 2u);
}

TEST(CifStreaming, RandomChunkingsAreBitIdentical) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    auto c = random_case(rng, 50, 4);
    const std::size_t n = c.alpha.size();
    auto offline = cif_fire(c.states, c.alpha_tensor, CifConfig{});
    CifStreamState stream;
    std::vector<Firing> all;
    std::size_t start = 0;
    while (start < n) {
      std::uniform_int_distribution<std::size_t> piece(1, n - start);
      const std::size_t end = start + piece(rng);
      auto fired = cif_fire_streaming(slice(c.states, 0, start, end),
                                      slice(c.alpha_tensor, 0, start, end), stream, CifConfig{});
      all.insert(all.end(), fired.begin(), fired.end());
      start = end;
    }
    ASSERT_EQ(all.size(), offline.count());
    for (std::size_t i = 0; i < all.size(); ++i) {
      ASSERT_EQ(all[i].position, offline.positions[i]);
      for (std::size_t k = 0; k < 4; ++k) ASSERT_EQ(all[i].embedding[k], offline.embeddings.at(i, k));
    }
    ASSERT_EQ(stream.weight, offline.residual_weight);
    ASSERT_EQ(stream.state, offline.residual_state);
  }
}

TEST(ScaleWeights, Examples) {
  auto scaled = scale_weights(weights({0.5, 0.5, 0.5, 0.5}), 3);
  for (double v : scaled.values()) EXPECT_NEAR(v, 0.75, 1e-15);
  auto same = scale_weights(weights({0.25, 0.75, 1.0}), 2);
  EXPECT_EQ(same.at(0), 0.25);
  EXPECT_EQ(same.at(1), 0.75);
  EXPECT_EQ(same.at(2), 1.0);
  EXPECT_THROW(scale_weights(weights({0, 0}), 1), std::invalid_argument);
}

TEST(ScaleWeights, SumsToTarget) {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<std::size_t> target(1, 10);
  for (int trial = 0; trial < 1000; ++trial) {
    auto c = random_case(rng, 50, 1);
    const std::size_t s = target(rng);
    Tensor scaled = scale_weights(c.alpha_tensor, s);
    double total = 0.0;
    for (double v : scaled.values()) total += v;
    ASSERT_NEAR(total, static_cast<double>(s), 1e-9);
  }
}

TEST(ScaleWeights, TrainingModeEmitsExactlyTargetLength) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<std::size_t> target(1, 10);
  for (int trial = 0; trial < 1000; ++trial) {
    auto c = random_case(rng, 50, 2);
    const std::size_t s = target(rng);
    auto scaled = scale_weights(c.alpha_tensor, s);
    auto result = cif_fire_training(c.states, scaled, s, CifConfig{});
    ASSERT_EQ(result.count(), s) << "trial " << trial;
    ASSERT_EQ(result.embeddings.dim(0), s);
  }
}

TEST(ScaleWeights, TrainingModeEmitsResidualWhenLastFiringFallsShort) {
  // Sum is 2 - 1e-15: the second firing never triggers.
  auto result = cif_fire_training(identity_states(3), weights({0.6, 0.7, 0.7 - 1e-15}), 2,
                                  CifConfig{});
  ASSERT_EQ(result.count(), 2u);
  EXPECT_NEAR(result.embeddings.at(1, 1), 0.3, 1e-12);
  EXPECT_NEAR(result.embeddings.at(1, 2), 0.7, 1e-12);
  auto truncated = cif_fire_training(identity_states(3), weights({1, 1, 1}), 2, CifConfig{});
  EXPECT_EQ(truncated.count(), 2u);
}

TEST(QuantityLoss, ValuesAndGradient) {
  EXPECT_NEAR(quantity_loss(weights({1.0, 1.4}), 3).item(), 0.6, 1e-12);
  EXPECT_EQ(quantity_loss(weights({1.5, 1.5}), 3).item(), 0.0);

  for (double a : {0.4, 0.9}) {
    Tensor alpha = Tensor::leaf({3}, {a, a, a});
    backward(quantity_loss(alpha, 2));
    const double sign = 3 * a > 2 ? 1.0 : -1.0;
    for (double g : alpha.grad()) EXPECT_EQ(g, sign);
    double err = finite_difference_check([](const Tensor& t) { return quantity_loss(t, 2); },
                                         Tensor::constant({3}, {a, a, a}), 1e-6);
    EXPECT_LT(err, 1e-8);
  }
  Tensor at_kink = Tensor::leaf({2}, {1.0, 1.0});
  backward(quantity_loss(at_kink, 2));
  for (double g : at_kink.grad()) EXPECT_EQ(g, 0.0);
}

TEST(TailHandle, StrictThreshold) {
  CifConfig config;
  for (auto [residual, fires] :
       std::vector<std::pair<double, bool>>{{0.4, false}, {0.5, false}, {0.6, true}, {0.0, false}}) {
    CifStreamState stream;
    stream.weight = residual;
    stream.state = {residual, 2 * residual};
    auto extra = tail_handle(stream, config);
    EXPECT_EQ(extra.has_value(), fires) << residual;
    if (extra) EXPECT_EQ(*extra, stream.state);
  }
}

// True when no prefix sum of `alpha` lies within `margin` of a multiple of
// beta (ignoring the final total when `skip_total`).
bool away_from_thresholds(std::span<const double> alpha, double margin, bool skip_total) {
  double prefix = 0.0;
  for (std::size_t u = 0; u < alpha.size(); ++u) {
    prefix += alpha[u];
    if (skip_total && u + 1 == alpha.size()) break;
    const double frac = prefix - std::round(prefix);
    if (std::fabs(frac) < margin) return false;
  }
  return true;
}

TEST(CifGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> unit(0.05, 0.95), sym(-1.0, 1.0);
  int checked = 0;
  while (checked < 40) {
    const std::size_t n = 3 + rng() % 10;
    std::vector<double> alpha(n), h(n * 3), probe;
    for (auto& a : alpha) a = unit(rng);
    if (!away_from_thresholds(alpha, 1e-3, false)) continue;
    for (auto& v : h) v = sym(rng);
    auto result = cif_fire(Tensor::constant({n, 3}, h), weights(alpha), CifConfig{});
    if (result.count() == 0) continue;
    for (std::size_t i = 0; i < result.count() * 3; ++i) probe.push_back(sym(rng));
    Tensor states = Tensor::leaf({n, 3}, h);
    Tensor w = Tensor::leaf({n}, alpha);
    Tensor p = Tensor::constant({result.count(), 3}, probe);
    auto loss = [&] {
      auto fired = cif_fire(states, w, CifConfig{});
      return sum(multiply(exp(scale(fired.embeddings, 0.5)), p));
    };
    auto check = finite_difference_check(loss, {states, w}, 1e-6);
    ASSERT_LT(check.max_relative_error, 1e-4) << "leaf " << check.worst_leaf << " idx "
                                              << check.worst_index;
    ++checked;
  }
}

TEST(CifGradient, ThroughScalingAndTrainingMode) {
  std::mt19937_64 rng(32);
  std::uniform_real_distribution<double> unit(0.05, 0.95), sym(-1.0, 1.0);
  int checked = 0;
  while (checked < 40) {
    const std::size_t n = 3 + rng() % 10;
    const std::size_t target = 1 + rng() % 5;
    std::vector<double> alpha(n), h(n * 2), probe(target * 2);
    for (auto& a : alpha) a = unit(rng);
    double total = 0;
    for (double a : alpha) total += a;
    std::vector<double> scaled(n);
    for (std::size_t u = 0; u < n; ++u) scaled[u] = alpha[u] * target / total;
    if (!away_from_thresholds(scaled, 1e-3, true)) continue;
    for (auto& v : h) v = sym(rng);
    for (auto& v : probe) v = sym(rng);
    Tensor states = Tensor::leaf({n, 2}, h);
    Tensor w = Tensor::leaf({n}, alpha);
    Tensor p = Tensor::constant({target, 2}, probe);
    auto loss = [&] {
      auto fired = cif_fire_training(states, scale_weights(w, target), target, CifConfig{});
      return sum(multiply(fired.embeddings, p));
    };
    auto check = finite_difference_check(loss, {states, w}, 1e-6);
    ASSERT_LT(check.max_relative_error, 1e-4) << "leaf " << check.worst_leaf << " idx "
                                              << check.worst_index;
    ++checked;
  }
}

}  // namespace
}  // namespace cif
