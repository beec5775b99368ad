// Training objectives: label-smoothed cross-entropy on the decoder, CTC on
// the encoder and their weighted combination with the quantity loss.

#ifndef CIF_LOSSES_H_
#define CIF_LOSSES_H_

#include <span>
#include <stdexcept>
#include <string>

#include "cif/tensor.h"

namespace cif {

// Thrown when no CTC alignment can produce the target from the given frames.
class CtcUnreachable : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Mean over rows of -sum_v q_v log softmax(logits)_v with
// q = (1 - smoothing) * onehot(target) + smoothing / V.
Tensor cross_entropy_smoothed(const Tensor& logits, std::span<const int> targets,
                              double smoothing);

// -log of the total probability of every blank-augmented alignment of
// `target` to the frames of `logits` [U, V].  Forward recursion in log space;
// the gradient comes from the matching backward recursion.
Tensor ctc_loss(const Tensor& logits, std::span<const int> target, int blank);

// Minimum number of frames a CTC path needs for `target` (one per label plus
// one blank between each pair of equal neighbours).
std::size_t ctc_min_frames(std::span<const int> target);

struct LossReport {
  double total = 0.0;
  double ce = 0.0;
  double ctc = 0.0;
  double qua = 0.0;
  double lambda_ctc = 0.0;
  double lambda_qua = 0.0;

  // total, ce, ctc, qua, lambda_ctc, lambda_qua separated by tabs.
  std::string to_tsv() const;
};

struct JointLoss {
  Tensor total;
  LossReport report;
};

// total = ce + lambda_ctc * ctc + lambda_qua * qua
JointLoss joint_loss(const Tensor& ce, const Tensor& ctc, const Tensor& qua, double lambda_ctc,
                     double lambda_qua);

}  // namespace cif

#endif  // CIF_LOSSES_H_
