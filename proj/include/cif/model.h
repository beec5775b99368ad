// Networks around CIF: a convolutional front-end with self-attention encoder,
// the per-step weight predictor, a CTC projection on the encoder and the
// autoregressive / non-autoregressive decoders.

#ifndef CIF_MODEL_H_
#define CIF_MODEL_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cif/config.h"
#include "cif/parameters.h"
#include "cif/tensor.h"

namespace cif {

struct EncodedSequence {
  Tensor states;   // [U, d_model]
  Tensor weights;  // [U], each in (0, 1)
  std::size_t frames = 0;
};

class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }
  ParameterStore& parameters() { return params_; }
  const ParameterStore& parameters() const { return params_; }

  // features [T, d_in] -> states [ceil(T / reduction), d_model].  When
  // `valid_frames` is smaller than T, trailing rows are treated as padding:
  // they never influence the valid states and their states are zero.
  Tensor encode(const Tensor& features) const;
  Tensor encode(const Tensor& features, std::size_t valid_frames) const;

  // Overlapping windows of chunk_size frames advanced by hop_size; each window
  // contributes the states of its central hop region only.
  Tensor encode_chunked(const Tensor& features) const;

  // states [U, d] -> alpha [U].  Steps at or after `valid_steps` get zero.
  Tensor predict_weights(const Tensor& states) const;
  Tensor predict_weights(const Tensor& states, std::size_t valid_steps) const;

  EncodedSequence encode_sequence(const Tensor& features, bool chunked = false) const;

  // states [U, d] -> [U, vocab] logits for the CTC objective.
  Tensor ctc_logits(const Tensor& states) const;

  // Teacher forcing: row i is conditioned on c[0..i] and labels[0..i-1]; the
  // first step sees the start label and a zero embedding.  Requires
  // labels.size() == c rows.
  Tensor decode_autoregressive(const Tensor& embeddings, std::span<const int> labels) const;
  // Row i sees every embedding and no labels.
  Tensor decode_nonautoregressive(const Tensor& embeddings) const;
  // Dispatches on config().decoder_kind; labels are ignored for the
  // non-autoregressive decoder.
  Tensor decode(const Tensor& embeddings, std::span<const int> labels) const;

  std::size_t encoded_length(std::size_t frames) const;

 private:
  struct Block {
    Tensor ln1_g, ln1_b, wq, wk, wv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };
  Block add_block(const std::string& prefix);
  Tensor run_block(const Block& block, const Tensor& x, const Tensor& mask) const;
  Tensor encode_window(const Tensor& features, std::size_t valid_frames,
                       std::size_t position_offset) const;
  Tensor output_logits(const Tensor& hidden, const Tensor& embeddings) const;

  ModelConfig config_;
  ParameterStore params_;
  std::vector<Tensor> front_w_, front_b_;
  std::vector<Block> encoder_;
  Tensor enc_ln_g_, enc_ln_b_;
  Tensor wp_conv_w_, wp_conv_b_, wp_ln_g_, wp_ln_b_, wp_out_w_, wp_out_b_;
  Tensor ctc_w_, ctc_b_;
  Tensor label_embed_, dec_in_w_, dec_in_b_;
  std::vector<Block> decoder_;
  Tensor dec_ln_g_, dec_ln_b_, out_w_, out_b_;
};

// Sinusoidal position table rows [offset, offset + n) of width d.
Tensor sinusoidal_positions(std::size_t n, std::size_t d, std::size_t offset = 0);

}  // namespace cif

#endif  // CIF_MODEL_H_
