#include "cif/trainer.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>

#include "cif/checkpoint.h"
#include "cif/labels.h"

namespace cif {
namespace {

const char* const kMomentPrefix = "adam.m.";
const char* const kVariancePrefix = "adam.v.";

bool is_optimizer_tensor(const std::string& name) {
  return name.rfind(kMomentPrefix, 0) == 0 || name.rfind(kVariancePrefix, 0) == 0;
}

std::vector<std::pair<std::string, std::string>> config_pairs_of(const Checkpoint& ck) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& kv : ck.header)
    if (kv.first != "step") out.push_back(kv);
  return out;
}

}  // namespace

JointLoss utterance_loss(const Model& model, const ExperimentConfig& config, const Sample& sample,
                         const Tensor& features, std::size_t valid_frames,
                         const AlphaOverride& alpha_override) {
  const Tensor states = model.encode(features, valid_frames);
  const std::size_t valid_steps = model.encoded_length(valid_frames);
  Tensor alpha = model.predict_weights(states, valid_steps);
  if (alpha_override) alpha = alpha_override(sample, alpha);
  for (double a : alpha.values()) {
    if (!std::isfinite(a)) throw TrainingError("utterance '" + sample.id + "': non-finite weights");
  }
  const std::size_t target_len = sample.labels.size();
  const Tensor qua = quantity_loss(alpha, target_len);
  const Tensor used = config.loss.use_scaling ? scale_weights(alpha, target_len) : alpha;
  const FiringResult fired = cif_fire_training(states, used, target_len, config.cif);
  const Tensor logits = model.decode(fired.embeddings, sample.labels);
  const Tensor ce = cross_entropy_smoothed(logits, sample.labels, config.loss.label_smoothing);

  const Tensor valid_states =
      valid_steps < states.dim(0) ? slice(states, 0, 0, valid_steps) : states;
  const std::vector<int> ctc_target = config.loss.ctc_include_eos ? sample.labels : sample.symbols();
  Tensor ctc;
  try {
    ctc = ctc_loss(model.ctc_logits(valid_states), ctc_target, kBlankId);
  } catch (const CtcUnreachable& e) {
    throw TrainingError("utterance '" + sample.id + "': " + e.what());
  }
  return joint_loss(ce, ctc, qua, config.loss.lambda_ctc, config.loss.lambda_qua);
}

JointLoss utterance_loss(const Model& model, const ExperimentConfig& config, const Sample& sample,
                         const AlphaOverride& alpha_override) {
  return utterance_loss(model, config, sample, sample.feature_tensor(), sample.frames,
                        alpha_override);
}

namespace {

JointLoss mean_loss(const std::vector<JointLoss>& parts) {
  std::vector<Tensor> totals;
  LossReport r;
  for (const auto& p : parts) {
    totals.push_back(p.total);
    r.ce += p.report.ce;
    r.ctc += p.report.ctc;
    r.qua += p.report.qua;
  }
  const double n = static_cast<double>(parts.size());
  JointLoss out;
  out.total = scale(sum(stack_scalars(totals)), 1.0 / n);
  r.ce /= n;
  r.ctc /= n;
  r.qua /= n;
  r.lambda_ctc = parts.front().report.lambda_ctc;
  r.lambda_qua = parts.front().report.lambda_qua;
  r.total = out.total.item();
  out.report = r;
  return out;
}

}  // namespace

JointLoss batch_loss(const Model& model, const ExperimentConfig& config,
                     const std::vector<Sample>& samples, const AlphaOverride& alpha_override) {
  const PaddedBatch batch = batch_pad(samples, kPadId);
  std::vector<JointLoss> parts;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    parts.push_back(utterance_loss(model, config, samples[i], batch.features[i],
                                   batch.frame_lengths[i], alpha_override));
  }
  return mean_loss(parts);
}

double learning_rate_at(const TrainConfig& config, std::size_t step) {
  if (config.warmup_steps == 0 || step == 0) return config.learning_rate;
  const double s = static_cast<double>(step), w = static_cast<double>(config.warmup_steps);
  return config.learning_rate * std::min(s / w, std::sqrt(w / s));
}

Adam::Adam(const ParameterStore& params, double beta1, double beta2, double epsilon)
    : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
  for (const auto& e : params.entries()) {
    names_.push_back(e.name);
    m_.emplace_back(e.tensor.size(), 0.0);
    v_.emplace_back(e.tensor.size(), 0.0);
  }
}

void Adam::update(ParameterStore& params, double lr, std::size_t step) {
  const auto& entries = params.entries();
  if (entries.size() != names_.size()) throw std::logic_error("Adam: parameter set changed");
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step));
  for (std::size_t p = 0; p < entries.size(); ++p) {
    Tensor t = entries[p].tensor;
    auto g = t.grad();
    auto w = t.mutable_values();
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + epsilon_);
    }
  }
}

std::vector<NamedTensor> Adam::state() const {
  std::vector<NamedTensor> out;
  for (std::size_t p = 0; p < names_.size(); ++p) {
    out.push_back({kMomentPrefix + names_[p], Tensor::constant({m_[p].size()}, m_[p])});
    out.push_back({kVariancePrefix + names_[p], Tensor::constant({v_[p].size()}, v_[p])});
  }
  return out;
}

void Adam::load_state(const std::vector<NamedTensor>& tensors) {
  for (std::size_t p = 0; p < names_.size(); ++p) {
    bool found_m = false, found_v = false;
    for (const auto& t : tensors) {
      if (t.name == kMomentPrefix + names_[p] || t.name == kVariancePrefix + names_[p]) {
        const bool is_m = t.name[5] == 'm';
        auto& dst = is_m ? m_[p] : v_[p];
        if (t.tensor.size() != dst.size())
          throw CheckpointError("optimizer state '" + t.name + "' has the wrong size");
        dst.assign(t.tensor.values().begin(), t.tensor.values().end());
        (is_m ? found_m : found_v) = true;
      }
    }
    if (!found_m || !found_v)
      throw CheckpointError("optimizer state for '" + names_[p] + "' missing from checkpoint");
  }
}

double clip_gradients(ParameterStore& params, double max_norm) {
  double sq = 0.0;
  for (const auto& e : params.entries())
    for (double g : e.tensor.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (const auto& e : params.entries()) {
      Tensor t = e.tensor;
      if (t.grad().empty()) continue;
      for (double& g : t.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

Trainer::Trainer(const ExperimentConfig& config, std::vector<Sample> train_data)
    : config_(config),
      data_(std::move(train_data)),
      model_(std::make_unique<Model>(config.model, config.train.seed)),
      adam_(model_->parameters()) {
  config_.validate();
}

std::vector<std::size_t> Trainer::batch_indices(std::size_t step) const {
  if (data_.empty()) throw TrainingError("no training data");
  const std::size_t n = data_.size(), b = config_.train.batch_size;
  std::vector<std::size_t> out;
  std::size_t cached_epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> perm(n);
  for (std::size_t k = 0; k < b; ++k) {
    const std::size_t q = (step - 1) * b + k;
    const std::size_t epoch = q / n;
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::mt19937_64 rng(config_.train.seed * 0x9E3779B97F4A7C15ULL + epoch);
      std::shuffle(perm.begin(), perm.end(), rng);
      cached_epoch = epoch;
    }
    out.push_back(perm[q % n]);
  }
  return out;
}

StepReport Trainer::train_step() {
  const std::size_t step = step_ + 1;
  const auto indices = batch_indices(step);
  ParameterStore& params = model_->parameters();
  params.zero_grad();
  std::string ids;
  for (std::size_t i : indices) ids += (ids.empty() ? "" : ",") + data_[i].id;
  std::vector<JointLoss> parts;
  try {
    for (std::size_t i : indices)
      parts.push_back(utterance_loss(*model_, config_, data_[i], alpha_override_));
  } catch (const std::exception& e) {
    throw TrainingError("step " + std::to_string(step) + " batch=[" + ids + "]: " + e.what());
  }
  JointLoss loss = mean_loss(parts);
  if (!std::isfinite(loss.report.total)) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "non-finite loss at step %zu: ce=%g ctc=%g qua=%g total=%g",
                  step, loss.report.ce, loss.report.ctc, loss.report.qua, loss.report.total);
    throw TrainingError(std::string(buf) + " batch=[" + ids + "]");
  }
  backward(loss.total);
  StepReport report;
  report.step = step;
  report.loss = loss.report;
  report.grad_norm = clip_gradients(params, config_.train.clip_norm);
  report.learning_rate = learning_rate_at(config_.train, step);
  adam_.update(params, report.learning_rate, step);
  step_ = step;
  return report;
}

void Trainer::run(std::size_t total_steps, std::ostream* log, const std::string& checkpoint_path) {
  const auto start = std::chrono::steady_clock::now();
  const double base = wall_seconds_;
  while (step_ < total_steps) {
    const StepReport r = train_step();
    wall_seconds_ =
        base + std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (log) *log << training_log_line(r, wall_seconds_) << '\n';
    const std::size_t interval = config_.train.checkpoint_interval;
    if (!checkpoint_path.empty() && interval > 0 && step_ % interval == 0 && step_ < total_steps)
      save(checkpoint_path);
  }
  if (log) log->flush();
  if (!checkpoint_path.empty()) save(checkpoint_path);
}

void Trainer::save(const std::string& path) const {
  Checkpoint ck;
  ck.header = config_.to_pairs();
  ck.header.emplace_back("step", std::to_string(step_));
  ck.tensors = model_->parameters().entries();
  for (auto& t : adam_.state()) ck.tensors.push_back(std::move(t));
  write_checkpoint(path, ck);
}

void Trainer::resume(const std::string& path) {
  const Checkpoint ck = read_checkpoint(path);
  const ExperimentConfig stored = config_from_pairs(config_pairs_of(ck));
  const auto mine = config_.model;
  const auto theirs = stored.model;
  if (mine.d_in != theirs.d_in || mine.d_model != theirs.d_model ||
      mine.n_heads != theirs.n_heads || mine.d_ff != theirs.d_ff ||
      mine.enc_layers != theirs.enc_layers || mine.dec_layers != theirs.dec_layers ||
      mine.reduction != theirs.reduction || mine.weight_window != theirs.weight_window ||
      mine.vocab_size != theirs.vocab_size || mine.decoder_kind != theirs.decoder_kind) {
    throw CheckpointError("checkpoint '" + path + "' was written for a different model shape");
  }
  std::vector<NamedTensor> params, optimizer;
  for (const auto& t : ck.tensors) (is_optimizer_tensor(t.name) ? optimizer : params).push_back(t);
  model_->parameters().assign(params);
  adam_.load_state(optimizer);
  const std::string* step = ck.header_value("step");
  if (!step) throw CheckpointError("checkpoint '" + path + "' has no step");
  step_ = std::stoull(*step);
}

ExperimentConfig checkpoint_config(const std::string& path) {
  return config_from_pairs(config_pairs_of(read_checkpoint(path)));
}

std::unique_ptr<Model> load_model(const std::string& path, ExperimentConfig* config_out) {
  const Checkpoint ck = read_checkpoint(path);
  const ExperimentConfig config = config_from_pairs(config_pairs_of(ck));
  auto model = std::make_unique<Model>(config.model, config.train.seed);
  std::vector<NamedTensor> params;
  for (const auto& t : ck.tensors)
    if (!is_optimizer_tensor(t.name)) params.push_back(t);
  try {
    model->parameters().assign(params);
  } catch (const std::runtime_error& e) {
    throw CheckpointError("checkpoint '" + path + "' does not match its config: " + e.what());
  }
  if (config_out) *config_out = config;
  return model;
}

std::string training_log_header() { return "step\tlr\tce\tctc\tqua\ttotal\twall"; }

std::string training_log_line(const StepReport& r, double wall_seconds) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%zu\t%.6g\t%.6f\t%.6f\t%.6f\t%.6f\t%.3f", r.step,
                r.learning_rate, r.loss.ce, r.loss.ctc, r.loss.qua, r.loss.total, wall_seconds);
  return buf;
}

UtteranceResult decode_utterance(const Model& model, const CifConfig& cif, const Sample& sample,
                                 const EvalOptions& options) {
  UtteranceResult r;
  r.id = sample.id;
  const FiredSequence fired = fire_for_decoding(model, sample.feature_tensor(), cif, options.online);
  if (options.beam <= 1) {
    r.nbest.push_back(greedy_decode(model, fired));
  } else {
    r.nbest = beam_search(model, fired, options.beam);
  }
  const std::size_t best = rescore(r.nbest, options.lm, options.gamma);
  r.best = r.nbest[best];
  r.positions.assign(fired.positions.begin(),
                     fired.positions.begin() + static_cast<std::ptrdiff_t>(std::min(
                                                   r.best.tokens.size(), fired.positions.size())));
  return r;
}

MetricsAccumulator evaluate(const Model& model, const CifConfig& cif,
                            const std::vector<Sample>& samples, const EvalOptions& options) {
  MetricsAccumulator acc;
  for (const Sample& s : samples) {
    const UtteranceResult r = decode_utterance(model, cif, s, options);
    acc.add_transcript(s.symbols(), r.best.tokens);
    acc.add_boundaries(boundary_f1(encoded_boundaries(s.boundaries, model.config().reduction),
                                   firing_boundaries(r.positions), options.boundary_tolerance));
  }
  return acc;
}

}  // namespace cif
