// Dense double-precision tensors with reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared node.  Nodes created by an op whose
// inputs include at least one tracked tensor are themselves tracked and
// remember how to push gradients back to their inputs.  Calling backward() on
// a tracked scalar walks the recorded graph in reverse topological order and
// accumulates gradients into every tracked leaf (parameters).

#ifndef CIF_TENSOR_H_
#define CIF_TENSOR_H_

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cif {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

struct Node;

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor scalar(double value);
  // A tracked leaf: receives gradients, typically a model parameter.
  static Tensor leaf(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  bool tracked() const;
  bool is_leaf() const;

  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;

  std::span<const double> values() const;
  // Only leaves may be written in place (optimizer updates, gradient checks).
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t i) const { return values()[i]; }
  double at(std::size_t r, std::size_t c) const;

  // Gradient of a leaf after backward(); empty span if none accumulated yet.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Same values, not tracked.
  Tensor detach() const;

  const Node* node() const { return node_.get(); }

 private:
  friend struct TensorAccess;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Receives the output gradient and one gradient buffer per input.  Buffers of
// untracked inputs are empty spans and must be skipped.
using BackwardFn = std::function<void(std::span<const double> out_grad,
                                      std::span<const std::span<double>> in_grads)>;

// Builds an op output.  When recording is enabled and any input is tracked,
// the output is tracked and `backward` is kept for the reverse pass.
Tensor record_op(const char* name, Shape shape, std::vector<double> values,
                 std::vector<Tensor> inputs, BackwardFn backward);

// Reverse pass from a tracked scalar.  The recorded graph is released
// afterwards; calling backward() again through the same graph throws.
void backward(const Tensor& loss);

// --- primitives -------------------------------------------------------------

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// [m,n] -> [n,m]
Tensor transpose(const Tensor& a);
// Elementwise; `b` may also be a vector matching the last axis of `a`.
Tensor add(const Tensor& a, const Tensor& b);
Tensor subtract(const Tensor& a, const Tensor& b);
Tensor multiply(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);
// Concatenates along the last axis (rank 1 or 2, equal leading extents).
Tensor concat_last(const std::vector<Tensor>& parts);
// Concatenates rank-2 tensors along the first axis, or rank-1 tensors.
Tensor concat_rows(const std::vector<Tensor>& parts);
// Half-open range [begin, end) along `axis` of a rank-1 or rank-2 tensor.
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
// Rows of `table` [V,d] selected by `ids` -> [n,d].
Tensor embedding(const Tensor& table, std::span<const int> ids);
// x [T,Cin], weight [K,Cin,Cout], bias [Cout] -> [ceil(T/stride), Cout].
// Zero padding of (K-1)/2 on each side; output t is centred on input t*stride.
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              std::size_t stride = 1);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
// Subgradient 0 at the origin.
Tensor abs(const Tensor& a);
Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);
// Normalizes over the last axis.  A constant row maps to zeros before the
// affine terms.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double epsilon = 1e-6);
Tensor sum(const Tensor& a);
// Stacks rank-0/1-element tensors into a vector.
Tensor stack_scalars(const std::vector<Tensor>& scalars);
// Reinterprets the values under a new shape of equal size.
Tensor reshape(const Tensor& a, Shape shape);

}  // namespace cif

#endif  // CIF_TENSOR_H_
