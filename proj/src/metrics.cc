#include "cif/metrics.h"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace cif {

double ErrorBreakdown::rate() const {
  if (reference_length == 0) return errors() == 0 ? 0.0 : static_cast<double>(errors());
  return static_cast<double>(errors()) / static_cast<double>(reference_length);
}

ErrorBreakdown edit_distance(const std::vector<int>& ref, const std::vector<int>& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t diag = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      at(i, j) = std::min({diag, at(i, j - 1) + 1, at(i - 1, j) + 1});
    }
  }
  ErrorBreakdown out;
  out.reference_length = n;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool same = ref[i - 1] == hyp[j - 1];
      if (at(i, j) == at(i - 1, j - 1) + (same ? 0 : 1)) {
        if (!same) ++out.substitutions;
        --i;
        --j;
        continue;
      }
    }
    if (j > 0 && at(i, j) == at(i, j - 1) + 1) {
      ++out.insertions;
      --j;
    } else {
      ++out.deletions;
      --i;
    }
  }
  return out;
}

double BoundaryScore::precision() const {
  return predicted == 0 ? 1.0 : static_cast<double>(matched) / static_cast<double>(predicted);
}

double BoundaryScore::recall() const {
  return reference == 0 ? 1.0 : static_cast<double>(matched) / static_cast<double>(reference);
}

double BoundaryScore::f1() const {
  const double p = precision(), r = recall();
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

BoundaryScore boundary_f1(const std::vector<std::size_t>& reference,
                          const std::vector<std::size_t>& predicted, std::size_t tolerance) {
  BoundaryScore s;
  s.reference = reference.size();
  s.predicted = predicted.size();
  std::vector<bool> used(reference.size(), false);
  for (std::size_t p : predicted) {
    for (std::size_t k = 0; k < reference.size(); ++k) {
      if (used[k]) continue;
      const std::size_t gap = p > reference[k] ? p - reference[k] : reference[k] - p;
      if (gap <= tolerance) {
        used[k] = true;
        ++s.matched;
        break;
      }
    }
  }
  return s;
}

std::vector<std::size_t> encoded_boundaries(const std::vector<std::size_t>& frames,
                                            std::size_t reduction) {
  std::vector<std::size_t> out;
  out.reserve(frames.size());
  for (std::size_t b : frames)
    out.push_back(static_cast<std::size_t>(
        std::lround(static_cast<double>(b) / static_cast<double>(reduction))));
  return out;
}

std::vector<std::size_t> firing_boundaries(const std::vector<std::size_t>& positions) {
  std::vector<std::size_t> out;
  out.reserve(positions.size());
  for (std::size_t p : positions) out.push_back(p + 1);
  return out;
}

void MetricsAccumulator::add_transcript(const std::vector<int>& ref, const std::vector<int>& hyp) {
  const ErrorBreakdown e = edit_distance(ref, hyp);
  errors_.substitutions += e.substitutions;
  errors_.deletions += e.deletions;
  errors_.insertions += e.insertions;
  errors_.reference_length += e.reference_length;
  ++utterances_;
}

void MetricsAccumulator::add_boundaries(const BoundaryScore& score) {
  boundaries_.matched += score.matched;
  boundaries_.reference += score.reference;
  boundaries_.predicted += score.predicted;
}

std::string MetricsAccumulator::to_json(const std::string& rate_key) const {
  nlohmann::ordered_json j;
  j[rate_key] = errors_.rate();
  j["sub"] = errors_.substitutions;
  j["del"] = errors_.deletions;
  j["ins"] = errors_.insertions;
  j["boundary_precision"] = boundaries_.precision();
  j["boundary_recall"] = boundaries_.recall();
  j["boundary_f1"] = boundaries_.f1();
  j["n_utts"] = utterances_;
  return j.dump();
}

}  // namespace cif
