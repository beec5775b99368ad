// Exhaustive search over every label sequence the decoder can emit for a
// fixed set of embeddings (symbols and EOS; never blank or padding).  A sequence ends at its first EOS or after the
// last embedding; its score is the sum of the per-step log-probabilities.

#ifndef CIF_TESTS_BEAM_ORACLE_H_
#define CIF_TESTS_BEAM_ORACLE_H_

#include <cmath>
#include <limits>
#include <vector>

#include "cif/labels.h"
#include "cif/model.h"

namespace cif::testing {

struct OracleBest {
  std::vector<int> tokens;  // without EOS
  double score = -std::numeric_limits<double>::infinity();
};

inline std::vector<double> oracle_step_logprobs(const Model& model, const Tensor& c,
                                                const std::vector<int>& prefix) {
  const std::size_t step = prefix.size(), v = model.config().vocab_size;
  Tensor logits;
  if (model.config().decoder_kind == DecoderKind::kAutoregressive) {
    std::vector<int> labels = prefix;
    labels.push_back(kEosId);
    logits = model.decode_autoregressive(slice(c, 0, 0, step + 1), labels);
  } else {
    logits = model.decode_nonautoregressive(c);
  }
  std::vector<double> row(v);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < v; ++k) mx = std::max(mx, row[k] = logits.at(step, k));
  double total = 0.0;
  for (double x : row) total += std::exp(x - mx);
  for (double& x : row) x -= mx + std::log(total);
  return row;
}

inline void oracle_expand(const Model& model, const Tensor& c, std::vector<int>& prefix,
                          double score, OracleBest& best) {
  if (prefix.size() == c.dim(0)) {
    if (score > best.score) best = {prefix, score};
    return;
  }
  const std::vector<double> logp = oracle_step_logprobs(model, c, prefix);
  for (std::size_t k = 0; k < logp.size(); ++k) {
    if (static_cast<int>(k) == kBlankId || static_cast<int>(k) == kPadId) continue;
    if (static_cast<int>(k) == kEosId) {
      if (score + logp[k] > best.score) best = {prefix, score + logp[k]};
      continue;
    }
    prefix.push_back(static_cast<int>(k));
    oracle_expand(model, c, prefix, score + logp[k], best);
    prefix.pop_back();
  }
}

inline OracleBest exhaustive_best(const Model& model, const Tensor& c) {
  NoGradGuard no_grad;
  OracleBest best;
  std::vector<int> prefix;
  oracle_expand(model, c, prefix, 0.0, best);
  return best;
}

}  // namespace cif::testing

#endif  // CIF_TESTS_BEAM_ORACLE_H_
