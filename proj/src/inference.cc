#include "cif/inference.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cif/labels.h"

namespace cif {
namespace {

std::vector<double> log_softmax_row(std::span<const double> row) {
  const double mx = *std::max_element(row.begin(), row.end());
  double total = 0.0;
  for (double v : row) total += std::exp(v - mx);
  const double lse = mx + std::log(total);
  std::vector<double> out(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) out[i] = row[i] - lse;
  return out;
}

// Log-probabilities of step `step` given the labels chosen before it.
class StepScorer {
 public:
  StepScorer(const Model& model, const Tensor& embeddings)
      : model_(model), embeddings_(embeddings), vocab_(model.config().vocab_size) {
    if (model.config().decoder_kind == DecoderKind::kNonAutoregressive) {
      const Tensor logits = model.decode_nonautoregressive(embeddings);
      for (std::size_t i = 0; i < embeddings.dim(0); ++i)
        nar_.push_back(log_softmax_row(logits.values().subspan(i * vocab_, vocab_)));
    }
  }

  std::vector<double> operator()(const std::vector<int>& prefix) const {
    const std::size_t step = prefix.size();
    if (!nar_.empty()) return nar_[step];
    std::vector<int> labels = prefix;
    labels.push_back(kEosId);  // placeholder, never seen by this step
    const Tensor c = slice(embeddings_, 0, 0, step + 1);
    const Tensor logits = model_.decode_autoregressive(c, labels);
    return log_softmax_row(logits.values().subspan(step * vocab_, vocab_));
  }

 private:
  const Model& model_;
  const Tensor& embeddings_;
  std::size_t vocab_;
  std::vector<std::vector<double>> nar_;
};

// The decoder only ever emits symbols or EOS.
bool emittable(std::size_t label) {
  return static_cast<int>(label) != kBlankId && static_cast<int>(label) != kPadId;
}

bool better(const Hypothesis& a, const Hypothesis& b, double score_a, double score_b) {
  if (score_a != score_b) return score_a > score_b;
  if (a.tokens.size() != b.tokens.size()) return a.tokens.size() < b.tokens.size();
  return a.tokens < b.tokens;
}

}  // namespace

FiredSequence fire_for_decoding(const Model& model, const Tensor& features,
                                const CifConfig& config, bool online) {
  NoGradGuard no_grad;
  FiredSequence out;
  const Tensor states = online ? model.encode_chunked(features) : model.encode(features);
  const Tensor alpha = model.predict_weights(states);
  out.weights.assign(alpha.values().begin(), alpha.values().end());
  out.encoded_steps = states.dim(0);
  const std::size_t d = states.dim(1);
  std::vector<double> rows;
  CifStreamState stream;
  if (online) {
    const std::size_t hop = std::max<std::size_t>(
        1, model.config().hop_size / model.config().reduction);
    for (std::size_t begin = 0; begin < out.encoded_steps; begin += hop) {
      const std::size_t end = std::min(out.encoded_steps, begin + hop);
      for (const Firing& f : cif_fire_streaming(slice(states, 0, begin, end),
                                                slice(alpha, 0, begin, end), stream, config)) {
        out.positions.push_back(f.position);
        rows.insert(rows.end(), f.embedding.begin(), f.embedding.end());
      }
    }
  } else {
    const FiringResult fired = cif_fire(states, alpha, config);
    out.positions = fired.positions;
    rows.assign(fired.embeddings.values().begin(), fired.embeddings.values().end());
    stream.weight = fired.residual_weight;
    stream.state = fired.residual_state;
    stream.fired = fired.count();
    stream.steps = out.encoded_steps;
  }
  if (auto tail = tail_handle(stream, config)) {
    out.positions.push_back(out.encoded_steps - 1);
    rows.insert(rows.end(), tail->begin(), tail->end());
    out.tail_fired = true;
  }
  if (!out.positions.empty()) out.embeddings = Tensor::constant({out.positions.size(), d}, rows);
  return out;
}

Hypothesis greedy_decode(const Model& model, const Tensor& embeddings) {
  Hypothesis h;
  if (!embeddings.defined() || embeddings.dim(0) == 0) return h;
  NoGradGuard no_grad;
  const StepScorer scorer(model, embeddings);
  for (std::size_t step = 0; step < embeddings.dim(0); ++step) {
    const std::vector<double> logp = scorer(h.tokens);
    std::size_t best = kEosId;
    for (std::size_t v = 0; v < logp.size(); ++v)
      if (emittable(v) && logp[v] > logp[best]) best = v;
    h.model_logprob += logp[best];
    if (static_cast<int>(best) == kEosId) {
      h.terminated = true;
      break;
    }
    h.tokens.push_back(static_cast<int>(best));
  }
  h.combined = h.model_logprob;
  return h;
}

Hypothesis greedy_decode(const Model& model, const FiredSequence& fired) {
  return greedy_decode(model, fired.embeddings);
}

std::vector<Hypothesis> beam_search(const Model& model, const Tensor& embeddings,
                                    std::size_t beam) {
  if (beam == 0) throw std::invalid_argument("beam_search: beam must be at least 1");
  std::vector<Hypothesis> pool;
  if (!embeddings.defined() || embeddings.dim(0) == 0) {
    pool.emplace_back();
    return pool;
  }
  NoGradGuard no_grad;
  const StepScorer scorer(model, embeddings);
  struct Candidate {
    std::size_t parent;
    int label;
    double score;
  };
  std::vector<Hypothesis> live(1);
  for (std::size_t step = 0; step < embeddings.dim(0) && !live.empty(); ++step) {
    std::vector<Candidate> candidates;
    for (std::size_t p = 0; p < live.size(); ++p) {
      const std::vector<double> logp = scorer(live[p].tokens);
      for (std::size_t v = 0; v < logp.size(); ++v)
        if (emittable(v)) candidates.push_back({p, static_cast<int>(v), live[p].model_logprob + logp[v]});
    }
    const std::size_t keep = std::min(beam, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + keep, candidates.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.label < b.label;
                      });
    std::vector<Hypothesis> next;
    for (std::size_t k = 0; k < keep; ++k) {
      Hypothesis h = live[candidates[k].parent];
      h.model_logprob = candidates[k].score;
      if (candidates[k].label == kEosId) {
        h.terminated = true;
        pool.push_back(std::move(h));
      } else {
        h.tokens.push_back(candidates[k].label);
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
  }
  for (auto& h : live) pool.push_back(std::move(h));
  for (auto& h : pool) h.combined = h.model_logprob;
  std::stable_sort(pool.begin(), pool.end(), [](const Hypothesis& a, const Hypothesis& b) {
    return better(a, b, a.model_logprob, b.model_logprob);
  });
  if (pool.size() > beam) pool.resize(beam);
  return pool;
}

std::vector<Hypothesis> beam_search(const Model& model, const FiredSequence& fired,
                                    std::size_t beam) {
  return beam_search(model, fired.embeddings, beam);
}

std::size_t rescore(std::vector<Hypothesis>& hypotheses, const NGramLM* lm, double gamma) {
  if (hypotheses.empty()) throw std::invalid_argument("rescore: no hypotheses");
  std::size_t best = 0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    Hypothesis& h = hypotheses[i];
    h.lm_logprob = lm ? lm->sequence_log_prob(h.tokens) : 0.0;
    h.combined = gamma == 0.0 ? h.model_logprob : h.model_logprob + gamma * h.lm_logprob;
    if (i > 0 && better(h, hypotheses[best], h.combined, hypotheses[best].combined)) best = i;
  }
  return best;
}

double sequence_logprob(const Model& model, const Tensor& embeddings, const std::vector<int>& labels) {
  NoGradGuard no_grad;
  const StepScorer scorer(model, embeddings);
  std::vector<int> prefix;
  double total = 0.0;
  for (std::size_t step = 0; step < labels.size() && step < embeddings.dim(0); ++step) {
    total += scorer(prefix)[labels[step]];
    if (labels[step] == kEosId) break;
    prefix.push_back(labels[step]);
  }
  return total;
}

}  // namespace cif
