// Small model plus two-utterance batch for finite-difference checks of the
// complete training loss.  The seed search keeps every scaled prefix sum of
// alpha at least `margin` away from a multiple of beta, so no firing decision
// flips under the finite-difference nudges.

#ifndef CIF_TESTS_FULL_MODEL_FIXTURE_H_
#define CIF_TESTS_FULL_MODEL_FIXTURE_H_

#include <cmath>
#include <memory>
#include <vector>

#include "cif/data.h"
#include "cif/grad_check.h"
#include "cif/labels.h"
#include "cif/model.h"
#include "cif/trainer.h"

namespace cif::testing {

inline ExperimentConfig tiny_experiment(DecoderKind kind = DecoderKind::kAutoregressive) {
  ExperimentConfig c;
  c.model.d_in = 3;
  c.model.d_model = 8;
  c.model.n_heads = 2;
  c.model.d_ff = 12;
  c.model.enc_layers = 1;
  c.model.dec_layers = 1;
  c.model.reduction = 2;
  c.model.vocab_size = kReservedLabels + 4;
  c.model.chunk_size = 8;
  c.model.hop_size = 4;
  c.model.decoder_kind = kind;
  return c;
}

inline TaskSpec tiny_task() {
  TaskSpec t;
  t.symbols = 4;
  t.dim = 3;
  t.min_segment = 2;
  t.max_segment = 4;
  t.min_labels = 2;
  t.max_labels = 3;
  t.noise = 0.2;
  return t;
}

// Smallest distance of any interior scaled prefix sum to a multiple of beta.
inline double threshold_margin(const Model& model, const ExperimentConfig& config,
                               const std::vector<Sample>& batch) {
  NoGradGuard no_grad;
  double margin = 1e300;
  for (const Sample& s : batch) {
    const Tensor alpha = model.predict_weights(model.encode(s.feature_tensor()));
    double total = 0.0;
    for (double a : alpha.values()) total += a;
    const double factor =
        config.loss.use_scaling ? static_cast<double>(s.labels.size()) / total : 1.0;
    double prefix = 0.0;
    for (std::size_t u = 0; u + 1 < alpha.size(); ++u) {
      prefix += alpha.at(u) * factor;
      const double r = prefix / config.cif.beta;
      margin = std::min(margin, std::fabs(r - std::round(r)) * config.cif.beta);
    }
  }
  return margin;
}

struct FullModelCase {
  ExperimentConfig config;
  std::unique_ptr<Model> model;
  std::vector<Sample> batch;
  double margin = 0.0;
};

inline FullModelCase make_full_model_case(std::uint64_t seed, double required_margin,
                                          DecoderKind kind = DecoderKind::kAutoregressive) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    FullModelCase c;
    c.config = tiny_experiment(kind);
    c.model = std::make_unique<Model>(c.config.model, seed * 1000 + attempt);
    c.batch = gen_grouped_symbols(tiny_task(), 2, seed * 7919 + attempt);
    c.margin = threshold_margin(*c.model, c.config, c.batch);
    if (c.margin >= required_margin) return c;
  }
}

inline GradCheckResult check_full_model(FullModelCase& c, double step = 1e-6) {
  return finite_difference_check(
      [&] { return batch_loss(*c.model, c.config, c.batch).total; },
      c.model->parameters().tensors(), step);
}

}  // namespace cif::testing

#endif  // CIF_TESTS_FULL_MODEL_FIXTURE_H_
