#include "cif/trainer.h"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>
#include <unistd.h>

#include "cif/checkpoint.h"
#include "cif/labels.h"
#include "full_model_fixture.h"

namespace cif {
namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() /
          ("cif_trainer_" + std::to_string(getpid()) + "_" + name))
      .string();
}

ExperimentConfig small_training_config() {
  ExperimentConfig c = testing::tiny_experiment();
  c.train.batch_size = 4;
  c.train.warmup_steps = 5;
  c.train.total_steps = 20;
  c.train.learning_rate = 3e-3;
  c.train.seed = 11;
  return c;
}

std::vector<double> flat_parameters(const Model& m) {
  std::vector<double> out;
  for (const auto& e : m.parameters().entries())
    out.insert(out.end(), e.tensor.values().begin(), e.tensor.values().end());
  return out;
}

TEST(Schedule, WarmupThenInverseSqrt) {
  TrainConfig t;
  t.learning_rate = 1e-3;
  t.warmup_steps = 100;
  EXPECT_DOUBLE_EQ(learning_rate_at(t, 1), 1e-5);
  EXPECT_DOUBLE_EQ(learning_rate_at(t, 100), 1e-3);
  EXPECT_DOUBLE_EQ(learning_rate_at(t, 400), 5e-4);
  t.warmup_steps = 0;
  EXPECT_DOUBLE_EQ(learning_rate_at(t, 7), 1e-3);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  ParameterStore p(1);
  Tensor w = p.add_glorot("w", {3, 2});
  const std::vector<double> before(w.values().begin(), w.values().end());
  Adam adam(p);
  p.zero_grad();
  adam.update(p, 0.1, 1);
  EXPECT_EQ(std::vector<double>(w.values().begin(), w.values().end()), before);
}

TEST(Adam, FirstStepMagnitudeIsScheduledRate) {
  ParameterStore p(1);
  Tensor w = p.add_constant("w", {1}, 0.5);
  Adam adam(p);
  TrainConfig t;
  t.learning_rate = 1e-2;
  t.warmup_steps = 10;
  backward(sum(w));
  adam.update(p, learning_rate_at(t, 1), 1);
  // Unit gradient: m_hat = 1, v_hat = 1.
  EXPECT_NEAR(0.5 - w.at(0), 1e-2 * 0.1 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, ConvergesOnQuadratic) {
  ParameterStore p(1);
  Tensor x = p.add_constant("x", {2}, 0.0);
  Adam adam(p);
  TrainConfig t;
  t.learning_rate = 0.1;
  t.warmup_steps = 10;
  const Tensor target = Tensor::constant({2}, {3.0, -1.0});
  const Tensor weights = Tensor::constant({2}, {1.0, 10.0});
  for (std::size_t step = 1; step <= 5000; ++step) {
    p.zero_grad();
    const Tensor d = subtract(x, target);
    backward(sum(multiply(multiply(d, d), weights)));
    adam.update(p, learning_rate_at(t, step), step);
  }
  EXPECT_NEAR(x.at(0), 3.0, 1e-6);
  EXPECT_NEAR(x.at(1), -1.0, 1e-6);
}

TEST(Adam, ClippingBoundsGlobalNorm) {
  ParameterStore p(1);
  Tensor w = p.add_constant("w", {2}, 0.0);
  backward(sum(multiply(w, Tensor::constant({2}, {30.0, 40.0}))));
  EXPECT_DOUBLE_EQ(clip_gradients(p, 5.0), 50.0);
  EXPECT_NEAR(w.grad()[0], 3.0, 1e-12);
  EXPECT_NEAR(w.grad()[1], 4.0, 1e-12);
}

TEST(Loss, PaddedBatchEqualsMeanOfUtterances) {
  const ExperimentConfig config = small_training_config();
  Model model(config.model, 3);
  TaskSpec task = testing::tiny_task();
  task.max_labels = 5;
  task.max_segment = 6;
  const auto samples = gen_grouped_symbols(task, 5, 4);
  NoGradGuard no_grad;
  double mean = 0.0;
  for (const auto& s : samples) mean += utterance_loss(model, config, s).report.total;
  mean /= static_cast<double>(samples.size());
  EXPECT_NEAR(batch_loss(model, config, samples).report.total, mean, 1e-9);
}

TEST(Loss, ScalingYieldsTargetLengthEmbeddings) {
  ExperimentConfig config = small_training_config();
  Model model(config.model, 3);
  NoGradGuard no_grad;
  for (const auto& s : gen_grouped_symbols(testing::tiny_task(), 20, 6)) {
    const Tensor alpha = scale_weights(model.predict_weights(model.encode(s.feature_tensor())),
                                       s.labels.size());
    EXPECT_EQ(cif_fire_training(model.encode(s.feature_tensor()), alpha, s.labels.size(), config.cif)
                  .count(),
              s.labels.size());
    EXPECT_TRUE(std::isfinite(utterance_loss(model, config, s).report.total));
  }
}

TEST(Loss, FullModelGradientMatchesFiniteDifference) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    auto c = testing::make_full_model_case(seed, 1e-3);
    const GradCheckResult r = testing::check_full_model(c, 1e-5);
    EXPECT_LT(r.max_relative_error, 1e-4) << "seed " << seed << " leaf " << r.worst_leaf;
  }
}

TEST(Trainer, SameSeedSameTrajectory) {
  const auto data = gen_grouped_symbols(testing::tiny_task(), 16, 5);
  Trainer a(small_training_config(), data), b(small_training_config(), data);
  for (int i = 0; i < 8; ++i) EXPECT_EQ(a.train_step().loss.total, b.train_step().loss.total);
  EXPECT_EQ(flat_parameters(a.model()), flat_parameters(b.model()));
}

TEST(Trainer, BatchOrderIsSeededAndCoversEpochs) {
  const auto data = gen_grouped_symbols(testing::tiny_task(), 10, 5);
  Trainer t(small_training_config(), data);
  std::vector<int> seen(10, 0);
  for (std::size_t step = 1; step <= 5; ++step)
    for (std::size_t i : t.batch_indices(step)) ++seen[i];
  for (int n : seen) EXPECT_EQ(n, 2);
  EXPECT_EQ(t.batch_indices(3), t.batch_indices(3));
}

TEST(Trainer, ResumeReproducesUninterruptedRun) {
  const auto data = gen_grouped_symbols(testing::tiny_task(), 12, 5);
  ExperimentConfig config = small_training_config();
  const std::string path = temp_path("resume.ckpt");
  Trainer straight(config, data);
  straight.run(10, nullptr);
  Trainer first(config, data);
  first.run(4, nullptr, path);
  Trainer second(config, data);
  second.resume(path);
  EXPECT_EQ(second.step(), 4u);
  second.run(10, nullptr);
  EXPECT_EQ(flat_parameters(second.model()), flat_parameters(straight.model()));
  std::filesystem::remove(path);
}

TEST(Trainer, CheckpointRoundTripGivesIdenticalForward) {
  const auto data = gen_grouped_symbols(testing::tiny_task(), 8, 5);
  Trainer t(small_training_config(), data);
  t.run(3, nullptr);
  const std::string path = temp_path("rt.ckpt");
  t.save(path);
  ExperimentConfig loaded_config;
  auto loaded = load_model(path, &loaded_config);
  EXPECT_EQ(loaded_config.to_pairs(), t.config().to_pairs());
  NoGradGuard no_grad;
  const Tensor a = t.model().encode(data[0].feature_tensor());
  const Tensor b = loaded->encode(data[0].feature_tensor());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.at(i), b.at(i));
  std::filesystem::remove(path);
}

TEST(Trainer, ResumeOntoDifferentShapeFails) {
  const auto data = gen_grouped_symbols(testing::tiny_task(), 8, 5);
  const std::string path = temp_path("shape.ckpt");
  Trainer(small_training_config(), data).save(path);
  ExperimentConfig other = small_training_config();
  other.model.d_ff = 16;
  Trainer t(other, data);
  EXPECT_THROW(t.resume(path), CheckpointError);
  std::filesystem::remove(path);
}

TEST(Trainer, OracleWeightsLossDecreasesMonotonically) {
  ExperimentConfig config;
  config.model.vocab_size = kReservedLabels + 16;
  config.model.enc_layers = 1;
  config.model.dec_layers = 1;
  config.loss.lambda_ctc = 0.0;
  config.loss.lambda_qua = 0.0;
  config.train.batch_size = 8;
  config.train.learning_rate = 5e-4;
  config.train.warmup_steps = 0;
  const auto data = gen_grouped_symbols(TaskSpec::easy(), 8, 3);
  Trainer t(config, data);
  const std::size_t r = config.model.reduction;
  t.set_alpha_override([r](const Sample& s, const Tensor& predicted) {
    std::vector<double> alpha(predicted.size(), 0.0);
    std::size_t start = 0;
    for (std::size_t b : s.boundaries) {
      const std::size_t end = std::max(start + 1, (b + r / 2) / r);
      for (std::size_t u = start; u < end && u < alpha.size(); ++u)
        alpha[u] = 1.0 / static_cast<double>(end - start);
      start = end;
    }
    return Tensor::constant({alpha.size()}, alpha);
  });
  double previous = 1e300;
  for (int i = 0; i < 50; ++i) {
    const double loss = t.train_step().loss.total;
    EXPECT_LT(loss, previous) << "step " << i + 1;
    previous = loss;
  }
}

TEST(Trainer, NonFiniteLossIsReported) {
  const auto data = gen_grouped_symbols(testing::tiny_task(), 4, 5);
  Trainer t(small_training_config(), data);
  t.set_alpha_override([](const Sample&, const Tensor& predicted) {
    std::vector<double> alpha(predicted.size(), 0.5);
    alpha[0] = std::nan("");
    return Tensor::constant({alpha.size()}, alpha);
  });
  try {
    t.train_step();
    FAIL();
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("non-finite"), std::string::npos) << msg;
    EXPECT_NE(msg.find("step 1"), std::string::npos) << msg;
  }
}

TEST(Trainer, LogLineHasSevenColumns) {
  StepReport r;
  r.step = 3;
  const std::string line = training_log_line(r, 1.5);
  EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 6);
  const std::string header = training_log_header();
  EXPECT_EQ(std::count(header.begin(), header.end(), '\t'), 6);
}

}  // namespace
}  // namespace cif
