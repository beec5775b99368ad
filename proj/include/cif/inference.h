// Decoding: CIF firing at inference time (with the tail rule), greedy and
// beam search over decoder steps, and second-pass LM rescoring.

#ifndef CIF_INFERENCE_H_
#define CIF_INFERENCE_H_

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "cif/cif.h"
#include "cif/model.h"
#include "cif/ngram_lm.h"
#include "cif/tensor.h"

namespace cif {

struct FiredSequence {
  Tensor embeddings;                   // [S, d_model]; undefined when S == 0
  std::vector<std::size_t> positions;  // encoder step of each embedding
  std::vector<double> weights;         // predicted alpha per encoder step
  std::size_t encoded_steps = 0;
  bool tail_fired = false;

  std::size_t count() const { return positions.size(); }
};

// encode -> predict_weights -> CIF -> tail rule.  With `online`, the encoder
// runs chunk by chunk and CIF consumes each hop of states incrementally.
FiredSequence fire_for_decoding(const Model& model, const Tensor& features,
                                const CifConfig& config, bool online = false);

struct Hypothesis {
  std::vector<int> tokens;  // without EOS
  double model_logprob = 0.0;
  double lm_logprob = 0.0;
  double combined = 0.0;
  bool terminated = false;  // closed by EOS rather than by running out of firings
};

// Argmax over symbols and EOS per firing, stopping after EOS.
Hypothesis greedy_decode(const Model& model, const Tensor& embeddings);
Hypothesis greedy_decode(const Model& model, const FiredSequence& fired);

// One decoder step per embedding, expanding every live prefix over all
// symbols and EOS.  Expansions ending in EOS retire into the pool, as do prefixes
// alive after the last embedding.  Returns at most `beam` hypotheses sorted
// by model log-prob, highest first.
std::vector<Hypothesis> beam_search(const Model& model, const Tensor& embeddings,
                                    std::size_t beam);
std::vector<Hypothesis> beam_search(const Model& model, const FiredSequence& fired,
                                    std::size_t beam);

// Fills lm_logprob and combined = model_logprob + gamma * lm_logprob for
// every hypothesis and returns the index of the best one.  Ties go to the
// shorter sequence, then to the lexicographically smaller ids.
std::size_t rescore(std::vector<Hypothesis>& hypotheses, const NGramLM* lm, double gamma);

// Sum over steps of log softmax(logits)[label], stopping after EOS; the
// score the beam assigns to `labels`.
double sequence_logprob(const Model& model, const Tensor& embeddings, const std::vector<int>& labels);

}  // namespace cif

#endif  // CIF_INFERENCE_H_
