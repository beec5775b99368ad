// Named, ordered collection of trainable leaves.

#ifndef CIF_PARAMETERS_H_
#define CIF_PARAMETERS_H_

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cif/tensor.h"

namespace cif {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed) : rng_(seed) {}

  // Uniform in +-sqrt(6 / (fan_in + fan_out)).  For rank-3 conv kernels
  // [K, Cin, Cout] the fans are K*Cin and K*Cout.
  Tensor add_glorot(const std::string& name, Shape shape);
  Tensor add_constant(const std::string& name, Shape shape, double value);

  const std::vector<NamedTensor>& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;
  Tensor find(const std::string& name) const;
  std::size_t scalar_count() const;
  void zero_grad();

  // Copies values from `source`; names, order and shapes must match exactly.
  void assign(const std::vector<NamedTensor>& source);

 private:
  Tensor add(const std::string& name, Shape shape, std::vector<double> values);

  std::mt19937_64 rng_;
  std::vector<NamedTensor> entries_;
};

}  // namespace cif

#endif  // CIF_PARAMETERS_H_
