#include "cif/tensor.h"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace cif {

struct Node {
  const char* op = "constant";
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool tracked = false;
  bool leaf = false;
  bool released = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
};

struct TensorAccess {
  static const std::shared_ptr<Node>& node(const Tensor& t) { return t.node_; }
  static Tensor wrap(std::shared_ptr<Node> n) { return Tensor(std::move(n)); }
};

namespace {

thread_local bool g_grad_enabled = true;

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw std::invalid_argument(std::string(op) + ": " + detail);
}

void require_defined(const char* op, const Tensor& t) {
  if (!t.defined()) shape_error(op, "undefined tensor");
}

std::string shapes(const Tensor& a, const Tensor& b) {
  return shape_string(a.shape()) + " vs " + shape_string(b.shape());
}

// rows x cols view of a rank-1 or rank-2 tensor; rank 1 counts as one row.
std::size_t row_count(const Shape& s) {
  std::size_t rows = 1;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) rows *= s[i];
  return rows;
}
std::size_t last_extent(const Shape& s) { return s.empty() ? 1 : s.back(); }

enum class Broadcast { kSame, kLastAxis };

Broadcast binary_broadcast(const char* op, const Tensor& a, const Tensor& b) {
  require_defined(op, a);
  require_defined(op, b);
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (b.rank() == 1 && a.rank() >= 2 && b.dim(0) == a.shape().back()) {
    return Broadcast::kLastAxis;
  }
  shape_error(op, "shape mismatch " + shapes(a, b));
}

template <typename Fn, typename Grad>
Tensor unary(const char* name, const Tensor& a, Fn fn, Grad grad) {
  require_defined(name, a);
  auto x = a.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fn(x[i]);
  Tensor input = a;
  // The backward closure keeps its own copy of the output so it does not
  // depend on the output node staying alive.
  auto y = std::make_shared<std::vector<double>>(out);
  return record_op(name, a.shape(), std::move(out), {a},
                   [input, y, grad](std::span<const double> g,
                                    std::span<const std::span<double>> in) {
                     if (in[0].empty()) return;
                     auto xs = input.values();
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       in[0][i] += g[i] * grad(xs[i], (*y)[i]);
                     }
                   });
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

// --- Tensor -------------------------------------------------------------------

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  if (shape_size(shape) != values.size()) {
    throw std::invalid_argument("constant: shape " + shape_string(shape) + " holds " +
                                std::to_string(shape_size(shape)) + " values, got " +
                                std::to_string(values.size()));
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape) {
  auto size = shape_size(shape);
  return constant(std::move(shape), std::vector<double>(size, 0.0));
}

Tensor Tensor::scalar(double value) { return constant({}, {value}); }

Tensor Tensor::leaf(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->op = "leaf";
  t.node_->tracked = true;
  t.node_->leaf = true;
  return t;
}

bool Tensor::tracked() const { return node_ && node_->tracked; }
bool Tensor::is_leaf() const { return node_ && node_->leaf; }

const Shape& Tensor::shape() const {
  if (!node_) throw std::logic_error("shape() of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw std::out_of_range("axis " + std::to_string(axis) + " of " + shape_string(s));
  }
  return s[axis];
}

std::size_t Tensor::size() const { return node_ ? node_->value.size() : 0; }

std::span<const double> Tensor::values() const {
  if (!node_) return {};
  return node_->value;
}

std::span<double> Tensor::mutable_values() {
  if (!node_ || (!node_->leaf && node_->tracked)) {
    throw std::logic_error("only leaves and constants may be modified in place");
  }
  return node_->value;
}

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item() of tensor " + shape_string(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return node_->value[r * last_extent(node_->shape) + c];
}

std::span<const double> Tensor::grad() const {
  if (!node_) return {};
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!node_) return {};
  if (node_->grad.size() != node_->value.size()) node_->grad.assign(node_->value.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return constant(shape(), node_->value); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// --- recording & backward -----------------------------------------------------

Tensor record_op(const char* name, Shape shape, std::vector<double> values,
                 std::vector<Tensor> inputs, BackwardFn backward_fn) {
  if (shape_size(shape) != values.size()) {
    shape_error(name, "output shape " + shape_string(shape) + " does not match " +
                          std::to_string(values.size()) + " values");
  }
  auto n = std::make_shared<Node>();
  n->op = name;
  n->shape = std::move(shape);
  n->value = std::move(values);
  if (g_grad_enabled) {
    bool any = std::any_of(inputs.begin(), inputs.end(),
                           [](const Tensor& t) { return t.tracked(); });
    if (any) {
      for (const auto& in : inputs) {
        if (in.node()->released) {
          shape_error(name, "input belongs to a graph already consumed by backward()");
        }
      }
      n->tracked = true;
      n->inputs.reserve(inputs.size());
      for (auto& in : inputs) n->inputs.push_back(TensorAccess::node(in));
      n->backward = std::move(backward_fn);
    }
  }
  return TensorAccess::wrap(std::move(n));
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got " +
                                (loss.defined() ? shape_string(loss.shape()) : "undefined"));
  }
  const auto& root = TensorAccess::node(loss);
  if (root->released) {
    throw std::logic_error("backward: graph already consumed; build a new one");
  }
  if (!root->tracked) throw std::invalid_argument("backward: loss is not tracked");

  // Iterative post-order DFS gives a topological order (inputs first).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->tracked && !child->leaf && !seen.count(child)) {
        if (child->released) throw std::logic_error("backward: graph already consumed");
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) n->grad.assign(n->value.size(), 0.0);
  root->grad[0] = 1.0;

  std::vector<std::span<double>> spans;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    spans.clear();
    for (auto& in : n->inputs) {
      if (!in->tracked) {
        spans.emplace_back();
        continue;
      }
      if (in->grad.size() != in->value.size()) in->grad.assign(in->value.size(), 0.0);
      spans.emplace_back(in->grad);
    }
    if (n->backward) n->backward(n->grad, spans);
  }

  for (Node* n : order) {
    n->inputs.clear();
    n->backward = nullptr;
    n->grad.clear();
    n->grad.shrink_to_fit();
    n->released = true;
  }
}

// --- primitives -----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined("matmul", a);
  require_defined("matmul", b);
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    shape_error("matmul", "incompatible shapes " + shapes(a, b));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  const double* A = a.values().data();
  const double* B = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = A[i * k + p];
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
  return record_op("matmul", {m, n}, std::move(out), {a, b},
                   [a, b, m, k, n](std::span<const double> g,
                                   std::span<const std::span<double>> in) {
                     const double* A = a.values().data();
                     const double* B = b.values().data();
                     if (!in[0].empty()) {
                       double* dA = in[0].data();
                       for (std::size_t i = 0; i < m; ++i) {
                         const double* grow = g.data() + i * n;
                         for (std::size_t p = 0; p < k; ++p) {
                           const double* brow = B + p * n;
                           double acc = 0.0;
                           for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                           dA[i * k + p] += acc;
                         }
                       }
                     }
                     if (!in[1].empty()) {
                       double* dB = in[1].data();
                       for (std::size_t i = 0; i < m; ++i) {
                         const double* grow = g.data() + i * n;
                         for (std::size_t p = 0; p < k; ++p) {
                           const double s = A[i * k + p];
                           double* drow = dB + p * n;
                           for (std::size_t j = 0; j < n; ++j) drow[j] += s * grow[j];
                         }
                       }
                     }
                   });
}

Tensor transpose(const Tensor& a) {
  require_defined("transpose", a);
  if (a.rank() != 2) shape_error("transpose", "expects rank 2, got " + shape_string(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  auto x = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  return record_op("transpose", {n, m}, std::move(out), {a},
                   [m, n](std::span<const double> g, std::span<const std::span<double>> in) {
                     if (in[0].empty()) return;
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j) in[0][i * n + j] += g[j * m + i];
                   });
}

Tensor add(const Tensor& a, const Tensor& b) {
  auto mode = binary_broadcast("add", a, b);
  auto x = a.values();
  auto y = b.values();
  std::vector<double> out(x.size());
  const std::size_t width = y.size();
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = x[i] + (mode == Broadcast::kSame ? y[i] : y[i % width]);
  }
  return record_op("add", a.shape(), std::move(out), {a, b},
                   [mode, width](std::span<const double> g,
                                 std::span<const std::span<double>> in) {
                     if (!in[0].empty())
                       for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i];
                     if (!in[1].empty()) {
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         in[1][mode == Broadcast::kSame ? i : i % width] += g[i];
                       }
                     }
                   });
}

Tensor subtract(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor multiply(const Tensor& a, const Tensor& b) {
  auto mode = binary_broadcast("multiply", a, b);
  auto x = a.values();
  auto y = b.values();
  std::vector<double> out(x.size());
  const std::size_t width = y.size();
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = x[i] * (mode == Broadcast::kSame ? y[i] : y[i % width]);
  }
  return record_op("multiply", a.shape(), std::move(out), {a, b},
                   [a, b, mode, width](std::span<const double> g,
                                       std::span<const std::span<double>> in) {
                     auto x = a.values();
                     auto y = b.values();
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       const std::size_t j = mode == Broadcast::kSame ? i : i % width;
                       if (!in[0].empty()) in[0][i] += g[i] * y[j];
                       if (!in[1].empty()) in[1][j] += g[i] * x[i];
                     }
                   });
}

Tensor scale(const Tensor& a, double factor) {
  require_defined("scale", a);
  auto x = a.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * factor;
  return record_op("scale", a.shape(), std::move(out), {a},
                   [factor](std::span<const double> g, std::span<const std::span<double>> in) {
                     if (in[0].empty()) return;
                     for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i] * factor;
                   });
}

Tensor add_scalar(const Tensor& a, double offset) {
  require_defined("add_scalar", a);
  auto x = a.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + offset;
  return record_op("add_scalar", a.shape(), std::move(out), {a},
                   [](std::span<const double> g, std::span<const std::span<double>> in) {
                     if (in[0].empty()) return;
                     for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i];
                   });
}

Tensor concat_last(const std::vector<Tensor>& parts) {
  if (parts.empty()) shape_error("concat_last", "no inputs");
  for (const auto& p : parts) require_defined("concat_last", p);
  const std::size_t rank = parts[0].rank();
  if (rank != 1 && rank != 2) {
    shape_error("concat_last", "expects rank 1 or 2, got " + shape_string(parts[0].shape()));
  }
  const std::size_t rows = rank == 2 ? parts[0].dim(0) : 1;
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank || (rank == 2 && p.dim(0) != rows)) {
      shape_error("concat_last", "shape mismatch " + shapes(parts[0], p));
    }
    widths.push_back(last_extent(p.shape()));
    total += widths.back();
  }
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto x = parts[k].values();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(x.data() + r * widths[k], widths[k], out.data() + r * total + offset);
    offset += widths[k];
  }
  Shape shape = rank == 2 ? Shape{rows, total} : Shape{total};
  return record_op("concat_last", std::move(shape), std::move(out), parts,
                   [widths, rows, total](std::span<const double> g,
                                         std::span<const std::span<double>> in) {
                     std::size_t offset = 0;
                     for (std::size_t k = 0; k < widths.size(); ++k) {
                       if (!in[k].empty()) {
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t c = 0; c < widths[k]; ++c)
                             in[k][r * widths[k] + c] += g[r * total + offset + c];
                       }
                       offset += widths[k];
                     }
                   });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) shape_error("concat_rows", "no inputs");
  for (const auto& p : parts) require_defined("concat_rows", p);
  const std::size_t rank = parts[0].rank();
  if (rank != 1 && rank != 2) {
    shape_error("concat_rows", "expects rank 1 or 2, got " + shape_string(parts[0].shape()));
  }
  const std::size_t width = rank == 2 ? parts[0].dim(1) : 1;
  std::size_t rows = 0;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    if (p.rank() != rank || (rank == 2 && p.dim(1) != width)) {
      shape_error("concat_rows", "shape mismatch " + shapes(parts[0], p));
    }
    rows += rank == 2 ? p.dim(0) : p.dim(0);
    sizes.push_back(p.size());
  }
  std::vector<double> out;
  out.reserve(rows * width);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  Shape shape = rank == 2 ? Shape{rows, width} : Shape{rows};
  return record_op("concat_rows", std::move(shape), std::move(out), parts,
                   [sizes](std::span<const double> g, std::span<const std::span<double>> in) {
                     std::size_t offset = 0;
                     for (std::size_t k = 0; k < sizes.size(); ++k) {
                       if (!in[k].empty())
                         for (std::size_t i = 0; i < sizes[k]; ++i) in[k][i] += g[offset + i];
                       offset += sizes[k];
                     }
                   });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  require_defined("slice", a);
  if (a.rank() < 1 || a.rank() > 2 || axis >= a.rank() || begin > end || end > a.dim(axis)) {
    shape_error("slice", "range [" + std::to_string(begin) + "," + std::to_string(end) +
                             ") on axis " + std::to_string(axis) + " of " +
                             shape_string(a.shape()));
  }
  const std::size_t rows = a.rank() == 2 ? a.dim(0) : 1;
  const std::size_t cols = last_extent(a.shape());
  const bool by_rows = a.rank() == 2 && axis == 0;
  const std::size_t r0 = by_rows ? begin : 0, r1 = by_rows ? end : rows;
  const std::size_t c0 = by_rows ? 0 : begin, c1 = by_rows ? cols : end;
  std::vector<double> out;
  out.reserve((r1 - r0) * (c1 - c0));
  auto x = a.values();
  for (std::size_t r = r0; r < r1; ++r)
    for (std::size_t c = c0; c < c1; ++c) out.push_back(x[r * cols + c]);
  Shape shape = a.rank() == 2 ? Shape{r1 - r0, c1 - c0} : Shape{c1 - c0};
  return record_op("slice", std::move(shape), std::move(out), {a},
                   [r0, r1, c0, c1, cols](std::span<const double> g,
                                          std::span<const std::span<double>> in) {
                     if (in[0].empty()) return;
                     std::size_t k = 0;
                     for (std::size_t r = r0; r < r1; ++r)
                       for (std::size_t c = c0; c < c1; ++c) in[0][r * cols + c] += g[k++];
                   });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_defined("embedding", table);
  if (table.rank() != 2) shape_error("embedding", "table must be rank 2");
  const std::size_t vocab = table.dim(0), width = table.dim(1);
  std::vector<int> rows(ids.begin(), ids.end());
  std::vector<double> out;
  out.reserve(rows.size() * width);
  auto x = table.values();
  for (int id : rows) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      shape_error("embedding", "id " + std::to_string(id) + " outside table " +
                                   shape_string(table.shape()));
    }
    out.insert(out.end(), x.begin() + id * width, x.begin() + (id + 1) * width);
  }
  return record_op("embedding", {rows.size(), width}, std::move(out), {table},
                   [rows, width](std::span<const double> g,
                                 std::span<const std::span<double>> in) {
                     if (in[0].empty()) return;
                     for (std::size_t r = 0; r < rows.size(); ++r)
                       for (std::size_t c = 0; c < width; ++c)
                         in[0][rows[r] * width + c] += g[r * width + c];
                   });
}

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride) {
  require_defined("conv1d", x);
  require_defined("conv1d", weight);
  require_defined("conv1d", bias);
  if (stride == 0) shape_error("conv1d", "stride must be positive");
  if (x.rank() != 2 || weight.rank() != 3 || bias.rank() != 1 ||
      weight.dim(1) != x.dim(1) || weight.dim(2) != bias.dim(0) || weight.dim(0) % 2 == 0) {
    shape_error("conv1d", "input " + shape_string(x.shape()) + ", weight " +
                              shape_string(weight.shape()) + ", bias " +
                              shape_string(bias.shape()));
  }
  const std::size_t T = x.dim(0), cin = x.dim(1);
  const std::size_t K = weight.dim(0), cout = weight.dim(2);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(K / 2);
  const std::size_t out_len = (T + stride - 1) / stride;
  std::vector<double> out(out_len * cout);
  const double* X = x.values().data();
  const double* W = weight.values().data();
  const double* B = bias.values().data();
  for (std::size_t t = 0; t < out_len; ++t) {
    double* orow = out.data() + t * cout;
    std::copy_n(B, cout, orow);
    for (std::size_t k = 0; k < K; ++k) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + k) - pad;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double xv = X[src * cin + ci];
        const double* wrow = W + (k * cin + ci) * cout;
        for (std::size_t co = 0; co < cout; ++co) orow[co] += xv * wrow[co];
      }
    }
  }
  return record_op(
      "conv1d", {out_len, cout}, std::move(out), {x, weight, bias},
      [x, weight, T, cin, K, cout, pad, stride, out_len](std::span<const double> g,
                                                        std::span<const std::span<double>> in) {
        const double* X = x.values().data();
        const double* W = weight.values().data();
        for (std::size_t t = 0; t < out_len; ++t) {
          const double* grow = g.data() + t * cout;
          if (!in[2].empty())
            for (std::size_t co = 0; co < cout; ++co) in[2][co] += grow[co];
          for (std::size_t k = 0; k < K; ++k) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + k) - pad;
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const std::size_t wbase = (k * cin + ci) * cout;
              if (!in[0].empty()) {
                double acc = 0.0;
                for (std::size_t co = 0; co < cout; ++co) acc += grow[co] * W[wbase + co];
                in[0][src * cin + ci] += acc;
              }
              if (!in[1].empty()) {
                const double xv = X[src * cin + ci];
                double* dw = in[1].data() + wbase;
                for (std::size_t co = 0; co < cout; ++co) dw[co] += xv * grow[co];
              }
            }
          }
        }
      });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      "sigmoid", a,
      [](double v) {
        // Two branches keep exp() from overflowing for large |v|.
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](double v) { return v > 0 ? v : 0.0; },
      [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      "log", a, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor abs(const Tensor& a) {
  return unary(
      "abs", a, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor softmax(const Tensor& a) {
  require_defined("softmax", a);
  const std::size_t rows = row_count(a.shape()), width = last_extent(a.shape());
  if (width == 0) shape_error("softmax", "empty last axis");
  auto x = a.values();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * width;
    double* yr = out.data() + r * width;
    const double mx = *std::max_element(xr, xr + width);
    double total = 0.0;
    for (std::size_t c = 0; c < width; ++c) total += (yr[c] = std::exp(xr[c] - mx));
    for (std::size_t c = 0; c < width; ++c) yr[c] /= total;
  }
  auto y = std::make_shared<std::vector<double>>(out);
  return record_op("softmax", a.shape(), std::move(out), {a},
                   [y, rows, width](std::span<const double> g,
                                    std::span<const std::span<double>> in) {
                     if (in[0].empty()) return;
                     for (std::size_t r = 0; r < rows; ++r) {
                       const double* yr = y->data() + r * width;
                       const double* gr = g.data() + r * width;
                       double dot = 0.0;
                       for (std::size_t c = 0; c < width; ++c) dot += gr[c] * yr[c];
                       for (std::size_t c = 0; c < width; ++c)
                         in[0][r * width + c] += yr[c] * (gr[c] - dot);
                     }
                   });
}

Tensor log_softmax(const Tensor& a) {
  require_defined("log_softmax", a);
  const std::size_t rows = row_count(a.shape()), width = last_extent(a.shape());
  if (width == 0) shape_error("log_softmax", "empty last axis");
  auto x = a.values();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * width;
    double* yr = out.data() + r * width;
    const double mx = *std::max_element(xr, xr + width);
    double total = 0.0;
    for (std::size_t c = 0; c < width; ++c) total += std::exp(xr[c] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t c = 0; c < width; ++c) yr[c] = xr[c] - lse;
  }
  auto y = std::make_shared<std::vector<double>>(out);
  return record_op("log_softmax", a.shape(), std::move(out), {a},
                   [y, rows, width](std::span<const double> g,
                                    std::span<const std::span<double>> in) {
                     if (in[0].empty()) return;
                     for (std::size_t r = 0; r < rows; ++r) {
                       const double* yr = y->data() + r * width;
                       const double* gr = g.data() + r * width;
                       double total = 0.0;
                       for (std::size_t c = 0; c < width; ++c) total += gr[c];
                       for (std::size_t c = 0; c < width; ++c)
                         in[0][r * width + c] += gr[c] - std::exp(yr[c]) * total;
                     }
                   });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double epsilon) {
  require_defined("layer_norm", x);
  const std::size_t rows = row_count(x.shape()), width = last_extent(x.shape());
  if (gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != width || bias.dim(0) != width) {
    shape_error("layer_norm", "input " + shape_string(x.shape()) + ", gain " +
                                  shape_string(gain.shape()) + ", bias " +
                                  shape_string(bias.shape()));
  }
  auto xs = x.values();
  auto gs = gain.values();
  auto bs = bias.values();
  auto normed = std::make_shared<std::vector<double>>(xs.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(xs.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xs.data() + r * width;
    double* nr = normed->data() + r * width;
    const bool flat = std::all_of(xr, xr + width, [&](double v) { return v == xr[0]; });
    double mean = 0.0, var = 0.0;
    if (!flat) {
      for (std::size_t c = 0; c < width; ++c) mean += xr[c];
      mean /= static_cast<double>(width);
      for (std::size_t c = 0; c < width; ++c) var += (xr[c] - mean) * (xr[c] - mean);
      var /= static_cast<double>(width);
    }
    const double inv = 1.0 / std::sqrt(var + epsilon);
    (*inv_std)[r] = inv;
    for (std::size_t c = 0; c < width; ++c) {
      nr[c] = flat ? 0.0 : (xr[c] - mean) * inv;
      out[r * width + c] = nr[c] * gs[c] + bs[c];
    }
  }
  return record_op(
      "layer_norm", x.shape(), std::move(out), {x, gain, bias},
      [gain, normed, inv_std, rows, width](std::span<const double> g,
                                           std::span<const std::span<double>> in) {
        auto gs = gain.values();
        std::vector<double> dn(width);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gr = g.data() + r * width;
          const double* nr = normed->data() + r * width;
          if (!in[1].empty())
            for (std::size_t c = 0; c < width; ++c) in[1][c] += gr[c] * nr[c];
          if (!in[2].empty())
            for (std::size_t c = 0; c < width; ++c) in[2][c] += gr[c];
          if (in[0].empty()) continue;
          double mean_dn = 0.0, mean_dn_n = 0.0;
          for (std::size_t c = 0; c < width; ++c) {
            dn[c] = gr[c] * gs[c];
            mean_dn += dn[c];
            mean_dn_n += dn[c] * nr[c];
          }
          mean_dn /= static_cast<double>(width);
          mean_dn_n /= static_cast<double>(width);
          const double inv = (*inv_std)[r];
          for (std::size_t c = 0; c < width; ++c)
            in[0][r * width + c] += inv * (dn[c] - mean_dn - nr[c] * mean_dn_n);
        }
      });
}

Tensor sum(const Tensor& a) {
  require_defined("sum", a);
  double total = 0.0;
  for (double v : a.values()) total += v;
  return record_op("sum", {}, {total}, {a},
                   [](std::span<const double> g, std::span<const std::span<double>> in) {
                     if (in[0].empty()) return;
                     for (double& v : in[0]) v += g[0];
                   });
}

Tensor stack_scalars(const std::vector<Tensor>& scalars) {
  std::vector<double> out;
  out.reserve(scalars.size());
  for (const auto& s : scalars) {
    require_defined("stack_scalars", s);
    if (s.size() != 1) shape_error("stack_scalars", "non-scalar " + shape_string(s.shape()));
    out.push_back(s.item());
  }
  return record_op("stack_scalars", {scalars.size()}, std::move(out), scalars,
                   [](std::span<const double> g, std::span<const std::span<double>> in) {
                     for (std::size_t i = 0; i < g.size(); ++i)
                       if (!in[i].empty()) in[i][0] += g[i];
                   });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require_defined("reshape", a);
  if (shape_size(shape) != a.size()) {
    shape_error("reshape", shape_string(a.shape()) + " to " + shape_string(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  return record_op("reshape", std::move(shape), std::move(out), {a},
                   [](std::span<const double> g, std::span<const std::span<double>> in) {
                     if (in[0].empty()) return;
                     for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i];
                   });
}

}  // namespace cif
