// Experiment configuration: model shape, CIF thresholds, loss weights and
// optimizer settings.  Read from `key = value` files, overridable per key,
// and stored verbatim in checkpoint headers.

#ifndef CIF_CONFIG_H_
#define CIF_CONFIG_H_

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cif/cif.h"

namespace cif {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DecoderKind { kAutoregressive, kNonAutoregressive };

std::string decoder_kind_name(DecoderKind kind);
DecoderKind parse_decoder_kind(const std::string& text);

struct ModelConfig {
  std::size_t d_in = 8;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t enc_layers = 2;
  std::size_t dec_layers = 2;
  std::size_t reduction = 4;  // power of two
  std::size_t weight_window = 3;
  std::size_t vocab_size = 0;
  std::size_t chunk_size = 32;
  std::size_t hop_size = 16;
  DecoderKind decoder_kind = DecoderKind::kAutoregressive;

  void validate() const;
};

struct LossConfig {
  double lambda_ctc = 0.25;
  double lambda_qua = 1.0;
  double label_smoothing = 0.2;
  bool use_scaling = true;
  bool ctc_include_eos = false;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t warmup_steps = 500;
  std::size_t total_steps = 4000;
  std::size_t batch_size = 8;
  std::uint64_t seed = 1;
  std::size_t checkpoint_interval = 1000;
  double clip_norm = 5.0;
};

struct ExperimentConfig {
  ModelConfig model;
  CifConfig cif;
  LossConfig loss;
  TrainConfig train;

  // Assigns one key; throws ConfigError naming the key on unknown keys or
  // unparsable values.
  void set(const std::string& key, const std::string& value);
  // Every key with its current value, in a fixed order.
  std::vector<std::pair<std::string, std::string>> to_pairs() const;
  void validate() const;
};

// Applies `key = value` lines on top of `base`.  Blank lines and `#` comments
// are ignored.  Errors carry "<source>:<line>: " and the offending key.
ExperimentConfig parse_config(const std::string& text, const std::string& source,
                              ExperimentConfig base = {});
ExperimentConfig load_config(const std::string& path, ExperimentConfig base = {});

// Rebuilds a config from checkpoint header pairs; unknown keys are errors.
ExperimentConfig config_from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs);

}  // namespace cif

#endif  // CIF_CONFIG_H_
