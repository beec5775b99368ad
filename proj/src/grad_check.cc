#include "cif/grad_check.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cif {

GradCheckResult finite_difference_check(const std::function<Tensor()>& loss,
                                        std::vector<Tensor> leaves, double step,
                                        double floor) {
  if (step <= 0) throw std::invalid_argument("finite_difference_check: step must be > 0");
  for (auto& leaf : leaves) {
    if (!leaf.is_leaf()) throw std::invalid_argument("finite_difference_check: not a leaf");
    leaf.zero_grad();
  }
  backward(loss());

  GradCheckResult result;
  double diff_sq = 0.0, analytic_sq = 0.0, numeric_sq = 0.0;
  NoGradGuard no_grad;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    auto values = leaves[l].mutable_values();
    std::vector<double> analytic(leaves[l].grad().begin(), leaves[l].grad().end());
    analytic.resize(values.size(), 0.0);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = loss().item();
      values[i] = saved - step;
      const double down = loss().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      diff_sq += (analytic[i] - numeric) * (analytic[i] - numeric);
      analytic_sq += analytic[i] * analytic[i];
      numeric_sq += numeric * numeric;
      ++result.coordinates;
      const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), floor});
      const double err = std::fabs(analytic[i] - numeric) / denom;
      if (err > result.max_relative_error || std::isnan(err)) {
        result.max_relative_error = err;
        result.worst_leaf = l;
        result.worst_index = i;
        result.analytic = analytic[i];
        result.numeric = numeric;
      }
    }
  }
  const double scale = std::sqrt(std::max(analytic_sq, numeric_sq));
  result.norm_relative_error = scale > 0.0 ? std::sqrt(diff_sq) / scale : std::sqrt(diff_sq);
  return result;
}

double finite_difference_check(const std::function<Tensor(const Tensor&)>& f,
                               const Tensor& point, double step, double floor) {
  Tensor x = Tensor::leaf(point.shape(),
                          std::vector<double>(point.values().begin(), point.values().end()));
  return finite_difference_check([&] { return f(x); }, {x}, step, floor).max_relative_error;
}

}  // namespace cif
