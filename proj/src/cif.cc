#include "cif/cif.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace cif {
namespace {

// How encoder step `step` enters one integrated embedding.  The weight is
// the overlap of [P_{step-1}, P_step] with the firing's [(i-1)beta, i*beta]
// window, where P is the prefix sum of the weights; each bound either moves
// with the prefix sum or is pinned to a threshold multiple.
struct Contribution {
  std::size_t step;
  double weight;
  bool lower_moves;
  bool upper_moves;
};

struct Plan {
  std::vector<std::vector<Contribution>> firings;
  std::vector<Contribution> pending;
};

// One encoder step of the integrate-and-fire recurrence.  Shared by the
// offline, training and streaming entry points so that all of them perform
// identical floating-point operations.
void integrate_step(std::span<const double> h, double alpha, const CifConfig& config,
                    CifStreamState& stream, std::vector<Firing>& fired, Plan* plan) {
  if (!(alpha >= 0.0)) {
    throw std::invalid_argument("cif: negative or NaN weight " + std::to_string(alpha) +
                                " at step " + std::to_string(stream.steps));
  }
  const std::size_t u = stream.steps;
  const std::size_t width = h.size();
  const double beta = config.beta;
  const double accumulated = stream.weight + alpha;

  if (accumulated < beta) {
    stream.weight = accumulated;
    for (std::size_t k = 0; k < width; ++k) stream.state[k] += alpha * h[k];
    if (plan) plan->pending.push_back({u, alpha, true, true});
  } else {
    const double completing = beta - stream.weight;
    double rest = std::max(0.0, alpha - completing);
    Firing first{u, std::vector<double>(width), {completing, rest}};
    for (std::size_t k = 0; k < width; ++k) first.embedding[k] = stream.state[k] + completing * h[k];
    fired.push_back(std::move(first));
    if (plan) {
      plan->pending.push_back({u, completing, true, false});
      plan->firings.push_back(std::move(plan->pending));
      plan->pending.clear();
    }
    while (rest >= beta) {
      Firing again{u, std::vector<double>(width), {beta, rest - beta}};
      for (std::size_t k = 0; k < width; ++k) again.embedding[k] = beta * h[k];
      fired.push_back(std::move(again));
      if (plan) plan->firings.push_back({{u, beta, false, false}});
      rest -= beta;
    }
    stream.weight = rest;
    for (std::size_t k = 0; k < width; ++k) stream.state[k] = rest * h[k];
    if (plan) plan->pending.push_back({u, rest, false, true});
  }
  ++stream.steps;
}

void check_inputs(const char* op, const Tensor& states, const Tensor& weights) {
  if (states.rank() != 2 || weights.rank() != 1 || states.dim(0) != weights.dim(0)) {
    throw std::invalid_argument(std::string(op) + ": states " + shape_string(states.shape()) +
                                " and weights " + shape_string(weights.shape()) +
                                " do not line up");
  }
}

FiringResult assemble(const Tensor& states, const Tensor& weights, std::vector<Firing> fired,
                      Plan plan, const CifStreamState& stream) {
  const std::size_t width = states.dim(1);
  FiringResult result;
  std::vector<double> values;
  values.reserve(fired.size() * width);
  for (auto& f : fired) {
    values.insert(values.end(), f.embedding.begin(), f.embedding.end());
    result.positions.push_back(f.position);
    result.splits.push_back(f.split);
  }
  result.residual_weight = stream.weight;
  result.residual_state = stream.state;

  auto firings = std::make_shared<std::vector<std::vector<Contribution>>>(std::move(plan.firings));
  const std::size_t steps = states.dim(0);
  result.embeddings = record_op(
      "cif_fire", {fired.size(), width}, std::move(values), {states, weights},
      [states, firings, steps, width](std::span<const double> g,
                                      std::span<const std::span<double>> in) {
        auto h = states.values();
        std::vector<double> upper(steps + 1, 0.0), lower(steps + 2, 0.0);
        for (std::size_t i = 0; i < firings->size(); ++i) {
          const double* gi = g.data() + i * width;
          for (const auto& c : (*firings)[i]) {
            const double* hv = h.data() + c.step * width;
            if (!in[0].empty()) {
              double* dh = in[0].data() + c.step * width;
              for (std::size_t k = 0; k < width; ++k) dh[k] += c.weight * gi[k];
            }
            if (!in[1].empty() && (c.upper_moves || c.lower_moves)) {
              double dot = 0.0;
              for (std::size_t k = 0; k < width; ++k) dot += gi[k] * hv[k];
              if (c.upper_moves) upper[c.step] += dot;
              if (c.lower_moves) lower[c.step] += dot;
            }
          }
        }
        if (in[1].empty()) return;
        // d/d alpha_w: upper bounds P_v with v >= w, lower bounds P_{v-1}
        // with v - 1 >= w.
        double up = 0.0, low = 0.0;
        for (std::size_t w = steps; w-- > 0;) {
          up += upper[w];
          low += lower[w + 1];
          in[1][w] += up - low;
        }
      });
  return result;
}

}  // namespace

void CifConfig::validate() const {
  if (!(beta > 0.0 && beta <= 1.0)) {
    throw std::invalid_argument("beta must lie in (0, 1], got " + std::to_string(beta));
  }
  if (!(tail_threshold >= 0.0 && tail_threshold < beta)) {
    throw std::invalid_argument("tail_threshold must lie in [0, beta), got " +
                                std::to_string(tail_threshold));
  }
}

FiringResult cif_fire(const Tensor& states, const Tensor& weights, const CifConfig& config) {
  check_inputs("cif_fire", states, weights);
  const std::size_t steps = states.dim(0), width = states.dim(1);
  CifStreamState stream;
  stream.state.assign(width, 0.0);
  std::vector<Firing> fired;
  Plan plan;
  auto h = states.values();
  auto a = weights.values();
  for (std::size_t u = 0; u < steps; ++u) {
    integrate_step(h.subspan(u * width, width), a[u], config, stream, fired, &plan);
  }
  return assemble(states, weights, std::move(fired), std::move(plan), stream);
}

FiringResult cif_fire_training(const Tensor& states, const Tensor& weights,
                               std::size_t target_len, const CifConfig& config) {
  check_inputs("cif_fire_training", states, weights);
  const std::size_t steps = states.dim(0), width = states.dim(1);
  CifStreamState stream;
  stream.state.assign(width, 0.0);
  std::vector<Firing> fired;
  Plan plan;
  auto h = states.values();
  auto a = weights.values();
  for (std::size_t u = 0; u < steps; ++u) {
    integrate_step(h.subspan(u * width, width), a[u], config, stream, fired, &plan);
  }
  if (fired.size() > target_len) {
    fired.resize(target_len);
    plan.firings.resize(target_len);
  }
  const std::size_t last = steps == 0 ? 0 : steps - 1;
  if (fired.size() < target_len) {
    fired.push_back({last, stream.state, {stream.weight, 0.0}});
    plan.firings.push_back(std::move(plan.pending));
    plan.pending.clear();
  }
  while (fired.size() < target_len) {
    fired.push_back({last, std::vector<double>(width, 0.0), {0.0, 0.0}});
    plan.firings.emplace_back();
  }
  return assemble(states, weights, std::move(fired), std::move(plan), stream);
}

Tensor scale_weights(const Tensor& weights, std::size_t target_len) {
  if (weights.rank() != 1) {
    throw std::invalid_argument("scale_weights: expects rank 1, got " +
                                shape_string(weights.shape()));
  }
  if (target_len == 0) throw std::invalid_argument("scale_weights: target length must be >= 1");
  auto a = weights.values();
  double total = 0.0;
  for (double v : a) total += v;
  if (!(total > 0.0)) {
    throw std::invalid_argument("scale_weights: weights sum to zero (degenerate utterance)");
  }
  const double factor = static_cast<double>(target_len) / total;
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * factor;
  auto scaled = std::make_shared<std::vector<double>>(out);
  return record_op("scale_weights", weights.shape(), std::move(out), {weights},
                   [scaled, factor, total](std::span<const double> g,
                                           std::span<const std::span<double>> in) {
                     if (in[0].empty()) return;
                     double dot = 0.0;
                     for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * (*scaled)[i];
                     for (std::size_t i = 0; i < g.size(); ++i)
                       in[0][i] += factor * g[i] - dot / total;
                   });
}

Tensor quantity_loss(const Tensor& weights, std::size_t target_len) {
  return abs(add_scalar(sum(weights), -static_cast<double>(target_len)));
}

std::vector<Firing> cif_fire_streaming(const Tensor& states, const Tensor& weights,
                                       CifStreamState& stream, const CifConfig& config) {
  check_inputs("cif_fire_streaming", states, weights);
  const std::size_t steps = states.dim(0), width = states.dim(1);
  if (stream.state.empty()) stream.state.assign(width, 0.0);
  if (stream.state.size() != width) {
    throw std::invalid_argument("cif_fire_streaming: state width changed between chunks");
  }
  std::vector<Firing> fired;
  auto h = states.values();
  auto a = weights.values();
  for (std::size_t u = 0; u < steps; ++u) {
    integrate_step(h.subspan(u * width, width), a[u], config, stream, fired, nullptr);
  }
  stream.fired += fired.size();
  return fired;
}

std::optional<std::vector<double>> tail_handle(const CifStreamState& stream,
                                               const CifConfig& config) {
  if (stream.weight > config.tail_threshold) return stream.state;
  return std::nullopt;
}

}  // namespace cif
