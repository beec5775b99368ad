#include "cif/config.h"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace cif {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  if (v.empty() || v[0] == '-') throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + v + "'");
  char* end = nullptr;
  errno = 0;
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (errno != 0 || *end != '\0') {
    throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return static_cast<std::size_t>(x);
}

double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  errno = 0;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || errno != 0 || *end != '\0' || !std::isfinite(x)) {
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  }
  return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "': expected true or false, got '" + v + "'");
}

std::string format_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

std::string decoder_kind_name(DecoderKind kind) {
  return kind == DecoderKind::kAutoregressive ? "ar" : "nar";
}

DecoderKind parse_decoder_kind(const std::string& text) {
  if (text == "ar") return DecoderKind::kAutoregressive;
  if (text == "nar") return DecoderKind::kNonAutoregressive;
  throw ConfigError("key 'decoder_kind': expected ar or nar, got '" + text + "'");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("invalid model config: " + msg); };
  if (d_in == 0) fail("d_in must be positive");
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
    fail("d_model must be a positive multiple of n_heads");
  if (d_ff == 0) fail("d_ff must be positive");
  if (reduction == 0 || (reduction & (reduction - 1)) != 0) fail("reduction must be a power of two");
  if (weight_window % 2 == 0) fail("weight_window must be odd");
  if (hop_size == 0 || hop_size > chunk_size) fail("hop_size must lie in [1, chunk_size]");
  if (hop_size % reduction != 0 || chunk_size % reduction != 0)
    fail("chunk_size and hop_size must be multiples of reduction");
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (key == "beta") cif.beta = parse_double(key, v);
  else if (key == "tail_threshold") cif.tail_threshold = parse_double(key, v);
  else if (key == "lambda_ctc") loss.lambda_ctc = parse_double(key, v);
  else if (key == "lambda_qua") loss.lambda_qua = parse_double(key, v);
  else if (key == "label_smoothing") loss.label_smoothing = parse_double(key, v);
  else if (key == "use_scaling") loss.use_scaling = parse_bool(key, v);
  else if (key == "ctc_include_eos") loss.ctc_include_eos = parse_bool(key, v);
  else if (key == "d_in") model.d_in = parse_size(key, v);
  else if (key == "d_model") model.d_model = parse_size(key, v);
  else if (key == "n_heads") model.n_heads = parse_size(key, v);
  else if (key == "d_ff") model.d_ff = parse_size(key, v);
  else if (key == "enc_layers") model.enc_layers = parse_size(key, v);
  else if (key == "dec_layers") model.dec_layers = parse_size(key, v);
  else if (key == "reduction") model.reduction = parse_size(key, v);
  else if (key == "weight_window") model.weight_window = parse_size(key, v);
  else if (key == "vocab_size") model.vocab_size = parse_size(key, v);
  else if (key == "chunk_size") model.chunk_size = parse_size(key, v);
  else if (key == "hop_size") model.hop_size = parse_size(key, v);
  else if (key == "decoder_kind") model.decoder_kind = parse_decoder_kind(v);
  else if (key == "learning_rate") train.learning_rate = parse_double(key, v);
  else if (key == "warmup_steps") train.warmup_steps = parse_size(key, v);
  else if (key == "total_steps") train.total_steps = parse_size(key, v);
  else if (key == "batch_size") train.batch_size = parse_size(key, v);
  else if (key == "seed") train.seed = parse_size(key, v);
  else if (key == "checkpoint_interval") train.checkpoint_interval = parse_size(key, v);
  else if (key == "clip_norm") train.clip_norm = parse_double(key, v);
  else throw ConfigError("unknown config key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> ExperimentConfig::to_pairs() const {
  auto n = [](std::size_t x) { return std::to_string(x); };
  auto b = [](bool x) { return std::string(x ? "true" : "false"); };
  return {
      {"beta", format_double(cif.beta)},
      {"tail_threshold", format_double(cif.tail_threshold)},
      {"lambda_ctc", format_double(loss.lambda_ctc)},
      {"lambda_qua", format_double(loss.lambda_qua)},
      {"label_smoothing", format_double(loss.label_smoothing)},
      {"use_scaling", b(loss.use_scaling)},
      {"ctc_include_eos", b(loss.ctc_include_eos)},
      {"d_in", n(model.d_in)},
      {"d_model", n(model.d_model)},
      {"n_heads", n(model.n_heads)},
      {"d_ff", n(model.d_ff)},
      {"enc_layers", n(model.enc_layers)},
      {"dec_layers", n(model.dec_layers)},
      {"reduction", n(model.reduction)},
      {"weight_window", n(model.weight_window)},
      {"vocab_size", n(model.vocab_size)},
      {"chunk_size", n(model.chunk_size)},
      {"hop_size", n(model.hop_size)},
      {"decoder_kind", decoder_kind_name(model.decoder_kind)},
      {"learning_rate", format_double(train.learning_rate)},
      {"warmup_steps", n(train.warmup_steps)},
      {"total_steps", n(train.total_steps)},
      {"batch_size", n(train.batch_size)},
      {"seed", std::to_string(train.seed)},
      {"checkpoint_interval", n(train.checkpoint_interval)},
      {"clip_norm", format_double(train.clip_norm)},
  };
}

void ExperimentConfig::validate() const {
  model.validate();
  try {
    cif.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (loss.label_smoothing < 0.0 || loss.label_smoothing >= 1.0)
    throw ConfigError("invalid loss config: label_smoothing must lie in [0, 1)");
  if (loss.lambda_ctc < 0.0 || loss.lambda_qua < 0.0)
    throw ConfigError("invalid loss config: loss weights must be non-negative");
  if (train.learning_rate <= 0.0) throw ConfigError("invalid train config: learning_rate must be positive");
  if (train.batch_size == 0) throw ConfigError("invalid train config: batch_size must be positive");
  if (train.warmup_steps > train.total_steps)
    throw ConfigError("invalid train config: warmup_steps exceeds total_steps");
  if (train.clip_norm <= 0.0) throw ConfigError("invalid train config: clip_norm must be positive");
}

ExperimentConfig parse_config(const std::string& text, const std::string& source,
                              ExperimentConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(number) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    try {
      base.set(key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return base;
}

ExperimentConfig load_config(const std::string& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path, std::move(base));
}

ExperimentConfig config_from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs) {
  ExperimentConfig config;
  for (const auto& [k, v] : pairs) config.set(k, v);
  return config;
}

}  // namespace cif
