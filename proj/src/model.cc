#include "cif/model.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "cif/labels.h"

namespace cif {
namespace {

constexpr double kMaskedScore = -1e9;

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add(matmul(x, w), b);
}

// Rows at or after `valid` are zeroed; identity when nothing is padded.
Tensor mask_rows(const Tensor& x, std::size_t valid) {
  const std::size_t rows = x.dim(0);
  if (valid >= rows) return x;
  const std::size_t cols = x.rank() == 2 ? x.dim(1) : 1;
  std::vector<double> m(rows * cols, 0.0);
  std::fill(m.begin(), m.begin() + valid * cols, 1.0);
  return multiply(x, Tensor::constant(x.shape(), std::move(m)));
}

Tensor key_padding_mask(std::size_t n, std::size_t valid) {
  std::vector<double> m(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = valid; j < n; ++j) m[i * n + j] = kMaskedScore;
  return Tensor::constant({n, n}, std::move(m));
}

Tensor causal_mask(std::size_t n) {
  std::vector<double> m(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m[i * n + j] = kMaskedScore;
  return Tensor::constant({n, n}, std::move(m));
}

std::size_t log2_exact(std::size_t x) {
  std::size_t n = 0;
  while ((std::size_t{1} << n) < x) ++n;
  return n;
}

}  // namespace

Tensor sinusoidal_positions(std::size_t n, std::size_t d, std::size_t offset) {
  std::vector<double> v(n * d);
  for (std::size_t p = 0; p < n; ++p) {
    const double pos = static_cast<double>(p + offset);
    for (std::size_t i = 0; i < d; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
      v[p * d + i] = std::sin(pos * freq);
      if (i + 1 < d) v[p * d + i + 1] = std::cos(pos * freq);
    }
  }
  return Tensor::constant({n, d}, std::move(v));
}

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config), params_(seed) {
  config_.validate();
  if (config_.vocab_size <= static_cast<std::size_t>(kReservedLabels)) {
    throw ConfigError("invalid model config: vocab_size must exceed the reserved labels");
  }
  const std::size_t d = config_.d_model, v = config_.vocab_size;
  const std::size_t halvings = log2_exact(config_.reduction);
  const std::size_t front_layers = std::max<std::size_t>(1, halvings);
  for (std::size_t i = 0; i < front_layers; ++i) {
    const std::string p = "enc.front" + std::to_string(i);
    front_w_.push_back(params_.add_glorot(p + ".w", {3, i == 0 ? config_.d_in : d, d}));
    front_b_.push_back(params_.add_constant(p + ".b", {d}, 0.0));
  }
  for (std::size_t i = 0; i < config_.enc_layers; ++i)
    encoder_.push_back(add_block("enc.block" + std::to_string(i)));
  enc_ln_g_ = params_.add_constant("enc.ln.g", {d}, 1.0);
  enc_ln_b_ = params_.add_constant("enc.ln.b", {d}, 0.0);

  wp_conv_w_ = params_.add_glorot("wp.conv.w", {config_.weight_window, d, d});
  wp_conv_b_ = params_.add_constant("wp.conv.b", {d}, 0.0);
  wp_ln_g_ = params_.add_constant("wp.ln.g", {d}, 1.0);
  wp_ln_b_ = params_.add_constant("wp.ln.b", {d}, 0.0);
  wp_out_w_ = params_.add_glorot("wp.out.w", {d, 1});
  wp_out_b_ = params_.add_constant("wp.out.b", {1}, -1.0);

  ctc_w_ = params_.add_glorot("ctc.w", {d, v});
  ctc_b_ = params_.add_constant("ctc.b", {v}, 0.0);

  if (config_.decoder_kind == DecoderKind::kAutoregressive) {
    label_embed_ = params_.add_glorot("dec.embed", {v, d});
    dec_in_w_ = params_.add_glorot("dec.in.w", {2 * d, d});
  } else {
    dec_in_w_ = params_.add_glorot("dec.in.w", {d, d});
  }
  dec_in_b_ = params_.add_constant("dec.in.b", {d}, 0.0);
  for (std::size_t i = 0; i < config_.dec_layers; ++i)
    decoder_.push_back(add_block("dec.block" + std::to_string(i)));
  dec_ln_g_ = params_.add_constant("dec.ln.g", {d}, 1.0);
  dec_ln_b_ = params_.add_constant("dec.ln.b", {d}, 0.0);
  out_w_ = params_.add_glorot("dec.out.w", {2 * d, v});
  out_b_ = params_.add_constant("dec.out.b", {v}, 0.0);
}

Model::Block Model::add_block(const std::string& p) {
  const std::size_t d = config_.d_model, f = config_.d_ff;
  Block b;
  b.ln1_g = params_.add_constant(p + ".ln1.g", {d}, 1.0);
  b.ln1_b = params_.add_constant(p + ".ln1.b", {d}, 0.0);
  b.wq = params_.add_glorot(p + ".attn.wq", {d, d});
  b.wk = params_.add_glorot(p + ".attn.wk", {d, d});
  b.wv = params_.add_glorot(p + ".attn.wv", {d, d});
  b.wo = params_.add_glorot(p + ".attn.wo", {d, d});
  b.bo = params_.add_constant(p + ".attn.bo", {d}, 0.0);
  b.ln2_g = params_.add_constant(p + ".ln2.g", {d}, 1.0);
  b.ln2_b = params_.add_constant(p + ".ln2.b", {d}, 0.0);
  b.w1 = params_.add_glorot(p + ".ff.w1", {d, f});
  b.b1 = params_.add_constant(p + ".ff.b1", {f}, 0.0);
  b.w2 = params_.add_glorot(p + ".ff.w2", {f, d});
  b.b2 = params_.add_constant(p + ".ff.b2", {d}, 0.0);
  return b;
}

Tensor Model::run_block(const Block& b, const Tensor& x, const Tensor& mask) const {
  const std::size_t d = config_.d_model, heads = config_.n_heads, dh = d / heads;
  const Tensor normed = layer_norm(x, b.ln1_g, b.ln1_b);
  const Tensor q = matmul(normed, b.wq);
  const Tensor k = matmul(normed, b.wk);
  const Tensor v = matmul(normed, b.wv);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = slice(q, 1, h * dh, (h + 1) * dh);
    const Tensor kh = slice(k, 1, h * dh, (h + 1) * dh);
    const Tensor vh = slice(v, 1, h * dh, (h + 1) * dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    if (mask.defined()) scores = add(scores, mask);
    outs.push_back(matmul(softmax(scores), vh));
  }
  const Tensor attended = heads == 1 ? outs[0] : concat_last(outs);
  const Tensor y = add(x, linear(attended, b.wo, b.bo));
  const Tensor hidden = relu(linear(layer_norm(y, b.ln2_g, b.ln2_b), b.w1, b.b1));
  return add(y, linear(hidden, b.w2, b.b2));
}

std::size_t Model::encoded_length(std::size_t frames) const {
  return (frames + config_.reduction - 1) / config_.reduction;
}

Tensor Model::encode_window(const Tensor& features, std::size_t valid_frames,
                            std::size_t position_offset) const {
  if (features.rank() != 2 || features.dim(1) != config_.d_in) {
    throw std::invalid_argument("encode: features must be [T, " + std::to_string(config_.d_in) +
                                "], got " + shape_string(features.shape()));
  }
  if (features.dim(0) == 0 || valid_frames == 0) {
    throw std::invalid_argument("encode: empty feature sequence");
  }
  Tensor x = mask_rows(features, valid_frames);
  std::size_t valid = valid_frames;
  const std::size_t stride = config_.reduction == 1 ? 1 : 2;
  for (std::size_t i = 0; i < front_w_.size(); ++i) {
    x = relu(conv1d(x, front_w_[i], front_b_[i], stride));
    valid = (valid + stride - 1) / stride;
    x = mask_rows(x, valid);
  }
  const std::size_t steps = x.dim(0);
  x = add(x, sinusoidal_positions(steps, config_.d_model, position_offset));
  const Tensor mask = valid < steps ? key_padding_mask(steps, valid) : Tensor();
  for (const Block& b : encoder_) x = run_block(b, x, mask);
  return mask_rows(layer_norm(x, enc_ln_g_, enc_ln_b_), valid);
}

Tensor Model::encode(const Tensor& features) const {
  return encode_window(features, features.rank() == 2 ? features.dim(0) : 0, 0);
}

Tensor Model::encode(const Tensor& features, std::size_t valid_frames) const {
  if (features.rank() == 2 && valid_frames > features.dim(0)) {
    throw std::invalid_argument("encode: valid_frames exceeds the feature rows");
  }
  return encode_window(features, valid_frames, 0);
}

Tensor Model::encode_chunked(const Tensor& features) const {
  if (features.rank() != 2 || features.dim(0) == 0) return encode(features);
  const std::size_t frames = features.dim(0);
  const std::size_t r = config_.reduction, chunk = config_.chunk_size, hop = config_.hop_size;
  if (frames <= chunk) return encode(features);
  const std::size_t left = (chunk - hop) / 2 / r * r;
  const std::size_t last_start = (frames - chunk) / r * r;
  std::vector<Tensor> parts;
  for (std::size_t begin = 0; begin < frames; begin += hop) {
    const std::size_t end = std::min(frames, begin + hop);
    const std::size_t start = std::min(begin >= left ? begin - left : 0, last_start);
    const std::size_t stop = std::min(frames, std::max(start + chunk, end));
    const Tensor window = slice(features, 0, start, stop);
    const Tensor states = encode_window(window, stop - start, start / r);
    const std::size_t first = (begin - start) / r;
    parts.push_back(slice(states, 0, first, first + encoded_length(end - begin)));
  }
  return parts.size() == 1 ? parts[0] : concat_rows(parts);
}

Tensor Model::predict_weights(const Tensor& states) const {
  return predict_weights(states, states.rank() == 2 ? states.dim(0) : 0);
}

Tensor Model::predict_weights(const Tensor& states, std::size_t valid_steps) const {
  if (states.rank() != 2 || states.dim(0) == 0 || states.dim(1) != config_.d_model) {
    throw std::invalid_argument("predict_weights: states must be non-empty [U, d_model], got " +
                                shape_string(states.shape()));
  }
  const Tensor x = mask_rows(states, valid_steps);
  const Tensor h = relu(layer_norm(conv1d(x, wp_conv_w_, wp_conv_b_), wp_ln_g_, wp_ln_b_));
  const Tensor alpha = reshape(sigmoid(linear(h, wp_out_w_, wp_out_b_)), {states.dim(0)});
  return mask_rows(alpha, valid_steps);
}

EncodedSequence Model::encode_sequence(const Tensor& features, bool chunked) const {
  EncodedSequence out;
  out.states = chunked ? encode_chunked(features) : encode(features);
  out.weights = predict_weights(out.states);
  out.frames = features.dim(0);
  return out;
}

Tensor Model::ctc_logits(const Tensor& states) const { return linear(states, ctc_w_, ctc_b_); }

Tensor Model::output_logits(const Tensor& hidden, const Tensor& embeddings) const {
  const Tensor o = layer_norm(hidden, dec_ln_g_, dec_ln_b_);
  return linear(concat_last({o, embeddings}), out_w_, out_b_);
}

Tensor Model::decode_autoregressive(const Tensor& embeddings, std::span<const int> labels) const {
  if (config_.decoder_kind != DecoderKind::kAutoregressive) {
    throw std::logic_error("decode_autoregressive: model was built with a non-autoregressive decoder");
  }
  if (embeddings.rank() != 2 || embeddings.dim(1) != config_.d_model || embeddings.dim(0) == 0) {
    throw std::invalid_argument("decode_autoregressive: embeddings must be non-empty [S, d_model], got " +
                                shape_string(embeddings.shape()));
  }
  const std::size_t steps = embeddings.dim(0), d = config_.d_model;
  if (labels.size() != steps) {
    throw std::invalid_argument("decode_autoregressive: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(steps) + " embeddings");
  }
  std::vector<int> previous(steps, kEosId);
  std::copy(labels.begin(), labels.end() - 1, previous.begin() + 1);
  Tensor previous_c = Tensor::zeros({1, d});
  if (steps > 1) previous_c = concat_rows({previous_c, slice(embeddings, 0, 0, steps - 1)});
  const Tensor input = concat_last({embedding(label_embed_, previous), previous_c});
  Tensor x = add(linear(input, dec_in_w_, dec_in_b_), sinusoidal_positions(steps, d));
  const Tensor mask = causal_mask(steps);
  for (const Block& b : decoder_) x = run_block(b, x, mask);
  return output_logits(x, embeddings);
}

Tensor Model::decode_nonautoregressive(const Tensor& embeddings) const {
  if (config_.decoder_kind != DecoderKind::kNonAutoregressive) {
    throw std::logic_error("decode_nonautoregressive: model was built with an autoregressive decoder");
  }
  if (embeddings.rank() != 2 || embeddings.dim(1) != config_.d_model || embeddings.dim(0) == 0) {
    throw std::invalid_argument("decode_nonautoregressive: embeddings must be non-empty [S, d_model], got " +
                                shape_string(embeddings.shape()));
  }
  const std::size_t steps = embeddings.dim(0);
  Tensor x = add(linear(embeddings, dec_in_w_, dec_in_b_),
                 sinusoidal_positions(steps, config_.d_model));
  for (const Block& b : decoder_) x = run_block(b, x, Tensor());
  return output_logits(x, embeddings);
}

Tensor Model::decode(const Tensor& embeddings, std::span<const int> labels) const {
  if (config_.decoder_kind == DecoderKind::kAutoregressive)
    return decode_autoregressive(embeddings, labels);
  return decode_nonautoregressive(embeddings);
}

}  // namespace cif
