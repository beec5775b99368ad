#include "cif/losses.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <vector>

namespace cif {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

}  // namespace

Tensor cross_entropy_smoothed(const Tensor& logits, std::span<const int> targets,
                              double smoothing) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    throw std::invalid_argument("cross_entropy_smoothed: logits " +
                                shape_string(logits.shape()) + " vs " +
                                std::to_string(targets.size()) + " targets");
  }
  if (smoothing < 0.0 || smoothing >= 1.0) {
    throw std::invalid_argument("cross_entropy_smoothed: smoothing must lie in [0, 1)");
  }
  const std::size_t steps = logits.dim(0), vocab = logits.dim(1);
  if (steps == 0) return Tensor::scalar(0.0);
  std::vector<double> q(steps * vocab, smoothing / static_cast<double>(vocab));
  for (std::size_t i = 0; i < steps; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= vocab) {
      throw std::invalid_argument("cross_entropy_smoothed: target id " +
                                  std::to_string(targets[i]) + " outside vocabulary of " +
                                  std::to_string(vocab));
    }
    q[i * vocab + targets[i]] += 1.0 - smoothing;
  }
  Tensor weights = Tensor::constant({steps, vocab}, std::move(q));
  return scale(sum(multiply(log_softmax(logits), weights)), -1.0 / static_cast<double>(steps));
}

std::size_t ctc_min_frames(std::span<const int> target) {
  std::size_t frames = target.size();
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++frames;
  return frames;
}

Tensor ctc_loss(const Tensor& logits, std::span<const int> target, int blank) {
  if (logits.rank() != 2) {
    throw std::invalid_argument("ctc_loss: logits must be [U, V], got " +
                                shape_string(logits.shape()));
  }
  const std::size_t frames = logits.dim(0), vocab = logits.dim(1);
  if (blank < 0 || static_cast<std::size_t>(blank) >= vocab) {
    throw std::invalid_argument("ctc_loss: blank id outside vocabulary");
  }
  for (int t : target) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab || t == blank) {
      throw std::invalid_argument("ctc_loss: invalid target id " + std::to_string(t));
    }
  }
  if (frames < ctc_min_frames(target) || frames == 0) {
    throw CtcUnreachable("ctc_loss: target of length " + std::to_string(target.size()) +
                         " needs " + std::to_string(ctc_min_frames(target)) +
                         " frames, got " + std::to_string(frames));
  }

  // Log-probabilities per frame.
  std::vector<double> logp(frames * vocab);
  {
    auto z = logits.values();
    for (std::size_t t = 0; t < frames; ++t) {
      const double* zr = z.data() + t * vocab;
      const double mx = *std::max_element(zr, zr + vocab);
      double total = 0.0;
      for (std::size_t v = 0; v < vocab; ++v) total += std::exp(zr[v] - mx);
      const double lse = mx + std::log(total);
      for (std::size_t v = 0; v < vocab; ++v) logp[t * vocab + v] = zr[v] - lse;
    }
  }

  // Extended label sequence: blank, y1, blank, y2, ..., blank.
  const std::size_t states = 2 * target.size() + 1;
  std::vector<int> ext(states, blank);
  for (std::size_t i = 0; i < target.size(); ++i) ext[2 * i + 1] = target[i];
  auto skip_allowed = [&](std::size_t s) {
    return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
  };

  std::vector<double> fwd(frames * states, kNegInf);
  fwd[0] = logp[ext[0]];
  if (states > 1) fwd[1] = logp[ext[1]];
  for (std::size_t t = 1; t < frames; ++t) {
    for (std::size_t s = 0; s < states; ++s) {
      double acc = fwd[(t - 1) * states + s];
      if (s >= 1) acc = log_add(acc, fwd[(t - 1) * states + s - 1]);
      if (skip_allowed(s)) acc = log_add(acc, fwd[(t - 1) * states + s - 2]);
      if (acc != kNegInf) fwd[t * states + s] = acc + logp[t * vocab + ext[s]];
    }
  }
  const std::size_t last = (frames - 1) * states;
  double log_total = fwd[last + states - 1];
  if (states > 1) log_total = log_add(log_total, fwd[last + states - 2]);
  if (log_total == kNegInf) {
    throw CtcUnreachable("ctc_loss: no alignment has non-zero probability");
  }

  auto fwd_ptr = std::make_shared<std::vector<double>>(std::move(fwd));
  auto logp_ptr = std::make_shared<std::vector<double>>(std::move(logp));
  auto ext_ptr = std::make_shared<std::vector<int>>(std::move(ext));
  return record_op(
      "ctc_loss", {}, {-log_total}, {logits},
      [fwd_ptr, logp_ptr, ext_ptr, frames, vocab, states, log_total, blank](
          std::span<const double> g, std::span<const std::span<double>> in) {
        if (in[0].empty()) return;
        const auto& fwd = *fwd_ptr;
        const auto& logp = *logp_ptr;
        const auto& ext = *ext_ptr;
        auto skip_allowed = [&](std::size_t s) {
          return s + 2 < states && ext[s + 2] != blank && ext[s + 2] != ext[s];
        };
        // bwd[t][s]: log-probability of emitting frames t+1.. given state s at t.
        std::vector<double> bwd(frames * states, kNegInf);
        const std::size_t last = (frames - 1) * states;
        bwd[last + states - 1] = 0.0;
        if (states > 1) bwd[last + states - 2] = 0.0;
        for (std::size_t t = frames - 1; t-- > 0;) {
          const std::size_t next = (t + 1) * states;
          for (std::size_t s = 0; s < states; ++s) {
            double acc = bwd[next + s] + logp[(t + 1) * vocab + ext[s]];
            if (s + 1 < states)
              acc = log_add(acc, bwd[next + s + 1] + logp[(t + 1) * vocab + ext[s + 1]]);
            if (skip_allowed(s))
              acc = log_add(acc, bwd[next + s + 2] + logp[(t + 1) * vocab + ext[s + 2]]);
            bwd[t * states + s] = acc;
          }
        }
        std::vector<double> occupancy(vocab);
        for (std::size_t t = 0; t < frames; ++t) {
          std::fill(occupancy.begin(), occupancy.end(), kNegInf);
          for (std::size_t s = 0; s < states; ++s) {
            const double a = fwd[t * states + s], b = bwd[t * states + s];
            if (a == kNegInf || b == kNegInf) continue;
            occupancy[ext[s]] = log_add(occupancy[ext[s]], a + b - log_total);
          }
          for (std::size_t v = 0; v < vocab; ++v) {
            const double p = std::exp(logp[t * vocab + v]);
            const double occ = occupancy[v] == kNegInf ? 0.0 : std::exp(occupancy[v]);
            in[0][t * vocab + v] += g[0] * (p - occ);
          }
        }
      });
}

std::string LossReport::to_tsv() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%.6f\t%.6f\t%.6f\t%.6f\t%g\t%g", total, ce, ctc, qua,
                lambda_ctc, lambda_qua);
  return buf;
}

JointLoss joint_loss(const Tensor& ce, const Tensor& ctc, const Tensor& qua, double lambda_ctc,
                     double lambda_qua) {
  JointLoss out;
  out.total = add(add(ce, scale(ctc, lambda_ctc)), scale(qua, lambda_qua));
  out.report.ce = ce.item();
  out.report.ctc = ctc.item();
  out.report.qua = qua.item();
  out.report.lambda_ctc = lambda_ctc;
  out.report.lambda_qua = lambda_qua;
  out.report.total = out.total.item();
  return out;
}

}  // namespace cif
