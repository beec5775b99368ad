// Central finite-difference check of analytic gradients.

#ifndef CIF_GRAD_CHECK_H_
#define CIF_GRAD_CHECK_H_

#include <functional>
#include <vector>

#include "cif/tensor.h"

namespace cif {

struct GradCheckResult {
  double max_relative_error = 0.0;
  // ||analytic - numeric|| / max(||analytic||, ||numeric||) over all
  // checked coordinates.
  double norm_relative_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t worst_leaf = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// `loss` rebuilds a scalar from the current values of `leaves`.  Analytic
// gradients come from one backward pass; each leaf coordinate is then nudged
// by +-step.  The error per coordinate is
//   |analytic - numeric| / max(|analytic|, |numeric|, floor).
GradCheckResult finite_difference_check(const std::function<Tensor()>& loss,
                                        std::vector<Tensor> leaves, double step,
                                        double floor = 1e-8);

// Single-input convenience form: f maps a tensor to a scalar.
double finite_difference_check(const std::function<Tensor(const Tensor&)>& f,
                               const Tensor& point, double step, double floor = 1e-8);

}  // namespace cif

#endif  // CIF_GRAD_CHECK_H_
