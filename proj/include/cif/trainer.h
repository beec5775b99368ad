// Training loop: per-utterance forward pass through encoder, weight
// predictor, CIF and decoder, the joint objective, Adam updates with a
// warmup / inverse-square-root schedule, checkpoints and evaluation.

#ifndef CIF_TRAINER_H_
#define CIF_TRAINER_H_

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cif/config.h"
#include "cif/data.h"
#include "cif/inference.h"
#include "cif/losses.h"
#include "cif/metrics.h"
#include "cif/model.h"
#include "cif/ngram_lm.h"

namespace cif {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Replaces the predicted weights of one utterance; used to drive CIF with
// known-good weights when isolating the decoder.
using AlphaOverride = std::function<Tensor(const Sample& sample, const Tensor& predicted)>;

// Loss of a single utterance.  `features` may carry zero-padded trailing rows
// beyond `valid_frames`; they are masked out of every term.
JointLoss utterance_loss(const Model& model, const ExperimentConfig& config, const Sample& sample,
                         const Tensor& features, std::size_t valid_frames,
                         const AlphaOverride& alpha_override = {});
JointLoss utterance_loss(const Model& model, const ExperimentConfig& config, const Sample& sample,
                         const AlphaOverride& alpha_override = {});

// Mean utterance loss over a padded batch.
JointLoss batch_loss(const Model& model, const ExperimentConfig& config,
                     const std::vector<Sample>& samples, const AlphaOverride& alpha_override = {});

// lr * min(step / warmup, sqrt(warmup / step)); constant lr without warmup.
double learning_rate_at(const TrainConfig& config, std::size_t step);

class Adam {
 public:
  explicit Adam(const ParameterStore& params, double beta1 = 0.9, double beta2 = 0.999,
                double epsilon = 1e-8);
  // Applies one update with learning rate `lr`; `step` is 1-based.
  void update(ParameterStore& params, double lr, std::size_t step);
  std::vector<NamedTensor> state() const;
  void load_state(const std::vector<NamedTensor>& tensors);

 private:
  double beta1_, beta2_, epsilon_;
  std::vector<std::string> names_;
  std::vector<std::vector<double>> m_, v_;
};

// Rescales all gradients so their global L2 norm is at most `max_norm`;
// returns the norm before clipping.
double clip_gradients(ParameterStore& params, double max_norm);

struct StepReport {
  std::size_t step = 0;
  double learning_rate = 0.0;
  LossReport loss;
  double grad_norm = 0.0;
};

class Trainer {
 public:
  Trainer(const ExperimentConfig& config, std::vector<Sample> train_data);

  Model& model() { return *model_; }
  const Model& model() const { return *model_; }
  const ExperimentConfig& config() const { return config_; }
  std::size_t step() const { return step_; }
  void set_alpha_override(AlphaOverride fn) { alpha_override_ = std::move(fn); }

  // Sample indices used at 1-based `step`; a pure function of the seed.
  std::vector<std::size_t> batch_indices(std::size_t step) const;

  StepReport train_step();
  // Runs until `total_steps`; writes one log line per step to `log` when
  // given and a checkpoint to `checkpoint_path` every checkpoint_interval
  // steps and at the end.
  void run(std::size_t total_steps, std::ostream* log, const std::string& checkpoint_path = "");

  void save(const std::string& path) const;
  // Restores parameters, optimizer state and step.  The stored config must
  // match this trainer's model shape.
  void resume(const std::string& path);

 private:
  ExperimentConfig config_;
  std::vector<Sample> data_;
  std::unique_ptr<Model> model_;
  Adam adam_;
  std::size_t step_ = 0;
  AlphaOverride alpha_override_;
  double wall_seconds_ = 0.0;
};

// The config stored in a checkpoint header.
ExperimentConfig checkpoint_config(const std::string& path);
// Builds a model from a checkpoint's stored config and parameters.
std::unique_ptr<Model> load_model(const std::string& path, ExperimentConfig* config_out = nullptr);

std::string training_log_header();
std::string training_log_line(const StepReport& report, double wall_seconds);

struct EvalOptions {
  std::size_t beam = 1;
  double gamma = 0.0;
  const NGramLM* lm = nullptr;
  bool online = false;
  std::size_t boundary_tolerance = 1;
};

struct UtteranceResult {
  std::string id;
  Hypothesis best;
  std::vector<Hypothesis> nbest;
  std::vector<std::size_t> positions;  // firing step of each emitted token
};

UtteranceResult decode_utterance(const Model& model, const CifConfig& cif, const Sample& sample,
                                 const EvalOptions& options);

MetricsAccumulator evaluate(const Model& model, const CifConfig& cif,
                            const std::vector<Sample>& samples, const EvalOptions& options);

}  // namespace cif

#endif  // CIF_TRAINER_H_
