#include "cif/parameters.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cif {

Tensor ParameterStore::add(const std::string& name, Shape shape, std::vector<double> values) {
  if (std::any_of(entries_.begin(), entries_.end(),
                  [&](const NamedTensor& e) { return e.name == name; })) {
    throw std::logic_error("duplicate parameter name: " + name);
  }
  Tensor t = Tensor::leaf(std::move(shape), std::move(values));
  entries_.push_back({name, t});
  return t;
}

Tensor ParameterStore::add_glorot(const std::string& name, Shape shape) {
  double fan_in = 1, fan_out = 1;
  if (shape.size() == 2) {
    fan_in = static_cast<double>(shape[0]);
    fan_out = static_cast<double>(shape[1]);
  } else if (shape.size() == 3) {
    fan_in = static_cast<double>(shape[0] * shape[1]);
    fan_out = static_cast<double>(shape[0] * shape[2]);
  } else {
    throw std::invalid_argument("add_glorot expects rank 2 or 3: " + name);
  }
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> values(shape_size(shape));
  for (double& v : values) v = dist(rng_);
  return add(name, std::move(shape), std::move(values));
}

Tensor ParameterStore::add_constant(const std::string& name, Shape shape, double value) {
  std::vector<double> values(shape_size(shape), value);
  return add(name, std::move(shape), std::move(values));
}

std::vector<Tensor> ParameterStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.tensor);
  return out;
}

Tensor ParameterStore::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.tensor;
  throw std::out_of_range("no parameter named " + name);
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

void ParameterStore::assign(const std::vector<NamedTensor>& source) {
  if (source.size() != entries_.size()) {
    throw std::runtime_error("parameter count mismatch: expected " +
                             std::to_string(entries_.size()) + ", got " +
                             std::to_string(source.size()));
  }
  for (std::size_t i = 0; i < source.size(); ++i) {
    auto& dst = entries_[i];
    const auto& src = source[i];
    if (src.name != dst.name || src.tensor.shape() != dst.tensor.shape()) {
      throw std::runtime_error("parameter mismatch: expected " + dst.name +
                               shape_string(dst.tensor.shape()) + ", got " + src.name +
                               shape_string(src.tensor.shape()));
    }
  }
  for (std::size_t i = 0; i < source.size(); ++i) {
    auto values = entries_[i].tensor.mutable_values();
    std::copy(source[i].tensor.values().begin(), source[i].tensor.values().end(),
              values.begin());
  }
}

}  // namespace cif
