// Continuous integrate-and-fire (CIF).
//
// Walking the encoder steps left to right, CIF accumulates the per-step
// weights alpha_u and the weighted states alpha_u * h_u.  As soon as the
// accumulated weight reaches the threshold beta, the step's weight is split:
// the first part completes the current integrated embedding (whose weights
// then sum to exactly beta), the remainder starts the next one.  A step whose
// remainder still reaches beta fires again, so firing positions are
// non-decreasing rather than strictly increasing.  Reaching beta exactly
// fires.

#ifndef CIF_CIF_H_
#define CIF_CIF_H_

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "cif/tensor.h"

namespace cif {

struct CifConfig {
  // Values below 1 can give negative split weights when a single step
  // carries more than beta; 1.0 is the recommended setting.
  double beta = 1.0;
  // Inference-time residual above this value fires one extra embedding.
  double tail_threshold = 0.5;

  void validate() const;
};

struct SplitWeights {
  double completing = 0.0;  // part of alpha_u closing the firing
  double carried = 0.0;     // part left over for the next integration
};

struct FiringResult {
  Tensor embeddings;                   // [S, width]
  std::vector<std::size_t> positions;  // encoder step (0-based) of each firing
  std::vector<SplitWeights> splits;
  double residual_weight = 0.0;
  std::vector<double> residual_state;

  std::size_t count() const { return positions.size(); }
};

struct CifStreamState {
  double weight = 0.0;        // accumulated alpha since the last firing
  std::vector<double> state;  // accumulated weighted state
  std::size_t fired = 0;
  std::size_t steps = 0;      // encoder steps consumed so far
};

struct Firing {
  std::size_t position = 0;
  std::vector<double> embedding;
  SplitWeights split;
};

// Differentiable in `states` [U, d] and `weights` [U] for a fixed firing
// pattern.  Throws on negative weights or mismatched lengths.
FiringResult cif_fire(const Tensor& states, const Tensor& weights, const CifConfig& config);

// Teacher-forced variant used with scaled weights during training: always
// returns exactly `target_len` embeddings.  If the last firing is not reached
// (rounding drift), the residual accumulated state becomes the final
// embedding; surplus firings are dropped.
FiringResult cif_fire_training(const Tensor& states, const Tensor& weights,
                               std::size_t target_len, const CifConfig& config);

// alpha' = alpha * target_len / sum(alpha).  Throws when sum(alpha) == 0.
Tensor scale_weights(const Tensor& weights, std::size_t target_len);

// |sum(alpha) - target_len| on the raw (unscaled) weights.
Tensor quantity_loss(const Tensor& weights, std::size_t target_len);

// Causal incremental form.  Feeding consecutive chunks reproduces cif_fire
// bit for bit.  `states` is [n, d], `weights` is [n]; neither is tracked.
std::vector<Firing> cif_fire_streaming(const Tensor& states, const Tensor& weights,
                                       CifStreamState& stream, const CifConfig& config);

// End-of-utterance rule: residual weight strictly above the tail threshold
// yields the (unnormalized) residual state as one more embedding.
std::optional<std::vector<double>> tail_handle(const CifStreamState& stream,
                                               const CifConfig& config);

}  // namespace cif

#endif  // CIF_CIF_H_
