#include "mgsr/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace mgsr::ad {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // sized lazily
  bool requires_grad = false;
  bool is_leaf = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  std::int64_t size() const {
    return static_cast<std::int64_t>(values.size());
  }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

}  // namespace detail

using detail::Node;

namespace {

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) {
    if (d <= 0) throw std::invalid_argument("tensor: non-positive dimension in " + shape_str(s));
    n *= d;
  }
  return n;
}

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> values) {
  auto n = std::make_shared<Node>();
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
    throw std::invalid_argument("tensor: value count does not match shape " + shape_str(shape));
  n->shape = std::move(shape);
  n->values = std::move(values);
  return n;
}

using EMat = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using EMatMut = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

constexpr double kLogClamp = 1e-12;

}  // namespace

Tensor make_tensor(std::shared_ptr<Node> n) { return Tensor(std::move(n)); }

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  return make_tensor(new_node(std::move(shape), std::move(values)));
}

Tensor Tensor::scalar(double v) { return constant({1}, {v}); }

Tensor Tensor::leaf(Shape shape, std::vector<double> values) {
  auto n = new_node(std::move(shape), std::move(values));
  n->requires_grad = true;
  n->is_leaf = true;
  return make_tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto numel = shape_numel(shape);
  auto n = new_node(std::move(shape), std::vector<double>(numel, 0.0));
  n->requires_grad = requires_grad;
  n->is_leaf = requires_grad;
  return make_tensor(std::move(n));
}

const Shape& Tensor::shape() const { return node_->shape; }
std::int64_t Tensor::size() const { return node_->size(); }
bool Tensor::requires_grad() const { return node_->requires_grad; }
const std::vector<double>& Tensor::values() const { return node_->values; }
std::vector<double>& Tensor::mutable_values() { return node_->values; }

const std::vector<double>& Tensor::grad() const {
  node_->ensure_grad();
  return node_->grad;
}
std::vector<double>& Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}
void Tensor::zero_grad() { node_->grad.assign(node_->values.size(), 0.0); }

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item(): tensor has shape " + shape_str(shape()));
  return node_->values[0];
}

Tensor Tensor::detach() const { return constant(node_->shape, node_->values); }

void Tensor::set_requires_grad(bool v) {
  node_->requires_grad = v;
  node_->is_leaf = v;
}

namespace {
thread_local int g_no_grad_depth = 0;
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

namespace {

struct OpResult {
  std::shared_ptr<Node> node;
};

// Creates the output node of an operation; only wires parents and the
// backward rule when some parent requires gradient.
Tensor op_node(Shape shape, std::vector<double> values,
               std::vector<std::shared_ptr<Node>> parents,
               std::function<void(Node&)> backprop) {
  auto n = new_node(std::move(shape), std::move(values));
  bool needs = false;
  if (g_no_grad_depth == 0)
    for (const auto& p : parents)
      if (p->requires_grad) needs = true;
  if (needs) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return make_tensor(std::move(n));
}

// Broadcast layout: identical shapes, a scalar operand, or one operand whose
// shape is a trailing suffix of the other's (tiled over the leading axis).
struct Broadcast {
  Shape out_shape;
  std::int64_t out_size;
  std::int64_t mod_a;  // index into a = i % mod_a
  std::int64_t mod_b;
};

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Broadcast plan_broadcast(const Node& a, const Node& b, const char* opname) {
  Broadcast bc;
  if (a.shape == b.shape) {
    bc.out_shape = a.shape;
    bc.mod_a = bc.mod_b = a.size();
  } else if (b.size() == 1) {
    bc.out_shape = a.shape;
    bc.mod_a = a.size();
    bc.mod_b = 1;
  } else if (a.size() == 1) {
    bc.out_shape = b.shape;
    bc.mod_a = 1;
    bc.mod_b = b.size();
  } else if (is_suffix(b.shape, a.shape)) {
    bc.out_shape = a.shape;
    bc.mod_a = a.size();
    bc.mod_b = b.size();
  } else if (is_suffix(a.shape, b.shape)) {
    bc.out_shape = b.shape;
    bc.mod_a = a.size();
    bc.mod_b = b.size();
  } else {
    throw std::invalid_argument(std::string(opname) + ": shape mismatch " +
                                shape_str(a.shape) + " vs " + shape_str(b.shape));
  }
  bc.out_size = shape_numel(bc.out_shape);
  return bc;
}

template <class Fwd, class DA, class DB>
Tensor binary_op(const Tensor& ta, const Tensor& tb, const char* opname,
                 Fwd fwd, DA da, DB db) {
  auto a = ta.node_ptr();
  auto b = tb.node_ptr();
  auto bc = plan_broadcast(*a, *b, opname);
  std::vector<double> out(bc.out_size);
  for (std::int64_t i = 0; i < bc.out_size; ++i)
    out[i] = fwd(a->values[i % bc.mod_a], b->values[i % bc.mod_b]);
  auto backprop = [a, b, bc, da, db](Node& self) {
    if (a->requires_grad) {
      a->ensure_grad();
      for (std::int64_t i = 0; i < bc.out_size; ++i)
        a->grad[i % bc.mod_a] +=
            da(self.grad[i], a->values[i % bc.mod_a], b->values[i % bc.mod_b]);
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (std::int64_t i = 0; i < bc.out_size; ++i)
        b->grad[i % bc.mod_b] +=
            db(self.grad[i], a->values[i % bc.mod_a], b->values[i % bc.mod_b]);
    }
  };
  return op_node(bc.out_shape, std::move(out), {a, b}, std::move(backprop));
}

template <class Fwd, class Deriv>
Tensor unary_op(const Tensor& ta, const char* /*opname*/, Fwd fwd, Deriv deriv) {
  auto a = ta.node_ptr();
  std::vector<double> out(a->values.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(a->values[i]);
  auto backprop = [a, deriv](Node& self) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    for (size_t i = 0; i < self.values.size(); ++i)
      a->grad[i] += self.grad[i] * deriv(a->values[i], self.values[i]);
  };
  return op_node(a->shape, std::move(out), {a}, std::move(backprop));
}

void require_2d(const Tensor& t, const char* opname) {
  if (t.shape().size() != 2)
    throw std::invalid_argument(std::string(opname) + ": expected 2-d tensor, got " +
                                shape_str(t.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "add",
                   [](double x, double y) { return x + y; },
                   [](double g, double, double) { return g; },
                   [](double g, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "sub",
                   [](double x, double y) { return x - y; },
                   [](double g, double, double) { return g; },
                   [](double g, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "mul",
                   [](double x, double y) { return x * y; },
                   [](double g, double, double y) { return g * y; },
                   [](double g, double x, double) { return g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "div",
                   [](double x, double y) { return x / y; },
                   [](double g, double, double y) { return g / y; },
                   [](double g, double x, double y) { return -g * x / (y * y); });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "minimum",
                   [](double x, double y) { return x <= y ? x : y; },
                   [](double g, double x, double y) { return x <= y ? g : 0.0; },
                   [](double g, double x, double y) { return x <= y ? 0.0 : g; });
}

Tensor scale(const Tensor& a, double c) {
  return unary_op(a, "scale",
                  [c](double x) { return c * x; },
                  [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary_op(a, "add_scalar",
                  [c](double x) { return x + c; },
                  [](double, double) { return 1.0; });
}

Tensor matmul(const Tensor& ta, const Tensor& tb) {
  require_2d(ta, "matmul");
  require_2d(tb, "matmul");
  auto a = ta.node_ptr();
  auto b = tb.node_ptr();
  const auto m = a->shape[0], k = a->shape[1], k2 = b->shape[0], n = b->shape[1];
  if (k != k2)
    throw std::invalid_argument("matmul: shape mismatch " + shape_str(a->shape) +
                                " vs " + shape_str(b->shape));
  std::vector<double> out(static_cast<size_t>(m * n));
  {
    EMat A(a->values.data(), m, k);
    EMat B(b->values.data(), k, n);
    EMatMut C(out.data(), m, n);
    C.noalias() = A * B;
  }
  auto backprop = [a, b, m, k, n](Node& self) {
    EMat G(self.grad.data(), m, n);
    if (a->requires_grad) {
      a->ensure_grad();
      EMat B(b->values.data(), k, n);
      EMatMut dA(a->grad.data(), m, k);
      dA.noalias() += G * B.transpose();
    }
    if (b->requires_grad) {
      b->ensure_grad();
      EMat A(a->values.data(), m, k);
      EMatMut dB(b->grad.data(), k, n);
      dB.noalias() += A.transpose() * G;
    }
  };
  return op_node({m, n}, std::move(out), {a, b}, std::move(backprop));
}

Tensor transpose(const Tensor& ta) {
  require_2d(ta, "transpose");
  auto a = ta.node_ptr();
  const auto r = a->shape[0], c = a->shape[1];
  std::vector<double> out(a->values.size());
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < c; ++j) out[j * r + i] = a->values[i * c + j];
  auto backprop = [a, r, c](Node& self) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    for (std::int64_t i = 0; i < r; ++i)
      for (std::int64_t j = 0; j < c; ++j) a->grad[i * c + j] += self.grad[j * r + i];
  };
  return op_node({c, r}, std::move(out), {a}, std::move(backprop));
}

Tensor sum(const Tensor& ta) {
  auto a = ta.node_ptr();
  double s = 0.0;
  for (double v : a->values) s += v;
  auto backprop = [a](Node& self) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    const double g = self.grad[0];
    for (auto& gi : a->grad) gi += g;
  };
  return op_node({1}, {s}, {a}, std::move(backprop));
}

Tensor sum(const Tensor& ta, int axis) {
  require_2d(ta, "sum");
  if (axis != 0 && axis != 1) throw std::invalid_argument("sum: axis must be 0 or 1");
  auto a = ta.node_ptr();
  const auto r = a->shape[0], c = a->shape[1];
  const std::int64_t out_len = axis == 0 ? c : r;
  std::vector<double> out(static_cast<size_t>(out_len), 0.0);
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < c; ++j)
      out[axis == 0 ? j : i] += a->values[i * c + j];
  auto backprop = [a, r, c, axis](Node& self) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    for (std::int64_t i = 0; i < r; ++i)
      for (std::int64_t j = 0; j < c; ++j)
        a->grad[i * c + j] += self.grad[axis == 0 ? j : i];
  };
  return op_node({out_len}, std::move(out), {a}, std::move(backprop));
}

Tensor mean(const Tensor& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor log(const Tensor& ta) {
  for (double v : ta.values()) {
    if (std::isnan(v)) throw std::invalid_argument("log: NaN input");
    if (v < 0.0) throw std::invalid_argument("log: negative input " + std::to_string(v));
  }
  return unary_op(ta, "log",
                  [](double x) { return std::log(x < kLogClamp ? kLogClamp : x); },
                  [](double x, double) { return x < kLogClamp ? 0.0 : 1.0 / x; });
}

Tensor exp(const Tensor& a) {
  return unary_op(a, "exp",
                  [](double x) { return std::exp(x); },
                  [](double, double y) { return y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(a, "sigmoid",
                  [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                  [](double, double y) { return y * (1.0 - y); });
}

Tensor abs(const Tensor& a) {
  return unary_op(a, "abs",
                  [](double x) { return std::abs(x); },
                  [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  return unary_op(a, "gelu",
                  [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
                  [](double x, double) {
                    const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
                    const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
                    return cdf + x * pdf;
                  });
}

Tensor sqrt(const Tensor& a) {
  return unary_op(a, "sqrt",
                  [](double x) { return std::sqrt(x); },
                  [](double x, double y) { return x == 0.0 ? 0.0 : 0.5 / y; });
}

Tensor softmax(const Tensor& ta) {
  auto a = ta.node_ptr();
  if (a->shape.empty()) throw std::invalid_argument("softmax: rank-0 tensor");
  const std::int64_t d = a->shape.back();
  const std::int64_t rows = a->size() / d;
  std::vector<double> out(a->values.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* x = a->values.data() + r * d;
    double* y = out.data() + r * d;
    double mx = x[0];
    for (std::int64_t j = 0; j < d; ++j) {
      if (std::isnan(x[j])) throw std::invalid_argument("softmax: NaN input");
      mx = std::max(mx, x[j]);
    }
    double z = 0.0;
    for (std::int64_t j = 0; j < d; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (std::int64_t j = 0; j < d; ++j) y[j] /= z;
  }
  auto backprop = [a, rows, d](Node& self) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* y = self.values.data() + r * d;
      const double* g = self.grad.data() + r * d;
      double dot = 0.0;
      for (std::int64_t j = 0; j < d; ++j) dot += g[j] * y[j];
      for (std::int64_t j = 0; j < d; ++j) a->grad[r * d + j] += y[j] * (g[j] - dot);
    }
  };
  return op_node(a->shape, std::move(out), {a}, std::move(backprop));
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const auto rank = parts[0].shape().size();
  if (axis < 0 || static_cast<size_t>(axis) >= rank)
    throw std::invalid_argument("concat: bad axis");
  for (const auto& p : parts) {
    if (p.shape().size() != rank)
      throw std::invalid_argument("concat: rank mismatch");
    for (size_t dim = 0; dim < rank; ++dim)
      if (dim != static_cast<size_t>(axis) && p.shape()[dim] != parts[0].shape()[dim])
        throw std::invalid_argument("concat: off-axis shape mismatch " +
                                    shape_str(parts[0].shape()) + " vs " +
                                    shape_str(p.shape()));
  }
  Shape out_shape = parts[0].shape();
  out_shape[axis] = 0;
  for (const auto& p : parts) out_shape[axis] += p.shape()[axis];

  // Treat as [outer, along, inner] blocks.
  std::int64_t outer = 1, inner = 1;
  for (int dim = 0; dim < axis; ++dim) outer *= out_shape[dim];
  for (size_t dim = axis + 1; dim < rank; ++dim) inner *= out_shape[dim];
  const std::int64_t total_along = out_shape[axis];

  std::vector<double> out(static_cast<size_t>(outer * total_along * inner));
  std::vector<std::shared_ptr<Node>> nodes;
  std::vector<std::int64_t> offsets;
  std::int64_t off = 0;
  for (const auto& p : parts) {
    nodes.push_back(p.node_ptr());
    offsets.push_back(off);
    const std::int64_t along = p.shape()[axis];
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy_n(p.values().data() + o * along * inner, along * inner,
                  out.data() + (o * total_along + off) * inner);
    off += along;
  }
  auto backprop = [nodes, offsets, outer, inner, total_along, axis](Node& self) {
    for (size_t pi = 0; pi < nodes.size(); ++pi) {
      auto& p = nodes[pi];
      if (!p->requires_grad) continue;
      p->ensure_grad();
      const std::int64_t along = p->shape[axis];
      for (std::int64_t o = 0; o < outer; ++o) {
        const double* g = self.grad.data() + (o * total_along + offsets[pi]) * inner;
        double* dst = p->grad.data() + o * along * inner;
        for (std::int64_t i = 0; i < along * inner; ++i) dst[i] += g[i];
      }
    }
  };
  return op_node(std::move(out_shape), std::move(out), std::move(nodes),
                 std::move(backprop));
}

Tensor sort_descending(const Tensor& ta) {
  const auto& shape = ta.shape();
  const std::int64_t d = shape.back();
  const std::int64_t rows = ta.size() / d;
  std::vector<double> out(ta.values());
  for (std::int64_t r = 0; r < rows; ++r)
    std::sort(out.begin() + r * d, out.begin() + (r + 1) * d, std::greater<>());
  return Tensor::constant(shape, std::move(out));
}

Tensor gather_rows(const Tensor& ttable, std::span<const int> ids) {
  require_2d(ttable, "gather_rows");
  auto table = ttable.node_ptr();
  const auto rows = table->shape[0], d = table->shape[1];
  for (int id : ids)
    if (id < 0 || id >= rows)
      throw std::out_of_range("gather_rows: id " + std::to_string(id) +
                              " out of range [0," + std::to_string(rows) + ")");
  const std::int64_t n = static_cast<std::int64_t>(ids.size());
  std::vector<double> out(static_cast<size_t>(n * d));
  std::vector<int> idx(ids.begin(), ids.end());
  for (std::int64_t i = 0; i < n; ++i)
    std::copy_n(table->values.data() + idx[i] * d, d, out.data() + i * d);
  auto backprop = [table, idx, d](Node& self) {
    if (!table->requires_grad) return;
    table->ensure_grad();
    for (size_t i = 0; i < idx.size(); ++i) {
      const double* g = self.grad.data() + i * d;
      double* dst = table->grad.data() + idx[i] * d;
      for (std::int64_t j = 0; j < d; ++j) dst[j] += g[j];
    }
  };
  return op_node({n, d}, std::move(out), {table}, std::move(backprop));
}

Tensor gather(const Tensor& ta, std::span<const int> index) {
  if (ta.shape().size() != 1) throw std::invalid_argument("gather: expected 1-d tensor");
  auto a = ta.node_ptr();
  const auto len = a->shape[0];
  std::vector<int> idx(index.begin(), index.end());
  std::vector<double> out(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= len) throw std::out_of_range("gather: index out of range");
    out[i] = a->values[idx[i]];
  }
  auto backprop = [a, idx](Node& self) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    for (size_t i = 0; i < idx.size(); ++i) a->grad[idx[i]] += self.grad[i];
  };
  return op_node({static_cast<std::int64_t>(idx.size())}, std::move(out), {a},
                 std::move(backprop));
}

Tensor pick(const Tensor& ta, std::span<const int> cols) {
  require_2d(ta, "pick");
  auto a = ta.node_ptr();
  const auto r = a->shape[0], c = a->shape[1];
  if (static_cast<std::int64_t>(cols.size()) != r)
    throw std::invalid_argument("pick: need one column index per row");
  std::vector<int> idx(cols.begin(), cols.end());
  std::vector<double> out(idx.size());
  for (std::int64_t i = 0; i < r; ++i) {
    if (idx[i] < 0 || idx[i] >= c) throw std::out_of_range("pick: column out of range");
    out[i] = a->values[i * c + idx[i]];
  }
  auto backprop = [a, idx, c](Node& self) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    for (size_t i = 0; i < idx.size(); ++i) a->grad[i * c + idx[i]] += self.grad[i];
  };
  return op_node({r}, std::move(out), {a}, std::move(backprop));
}

Tensor slice_cols(const Tensor& ta, std::int64_t start, std::int64_t len) {
  require_2d(ta, "slice_cols");
  auto a = ta.node_ptr();
  const auto r = a->shape[0], c = a->shape[1];
  if (start < 0 || len <= 0 || start + len > c)
    throw std::out_of_range("slice_cols: range out of bounds");
  std::vector<double> out(static_cast<size_t>(r * len));
  for (std::int64_t i = 0; i < r; ++i)
    std::copy_n(a->values.data() + i * c + start, len, out.data() + i * len);
  auto backprop = [a, r, c, start, len](Node& self) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    for (std::int64_t i = 0; i < r; ++i)
      for (std::int64_t j = 0; j < len; ++j)
        a->grad[i * c + start + j] += self.grad[i * len + j];
  };
  return op_node({r, len}, std::move(out), {a}, std::move(backprop));
}

Tensor slice_rows(const Tensor& ta, std::int64_t start, std::int64_t len) {
  require_2d(ta, "slice_rows");
  auto a = ta.node_ptr();
  const auto r = a->shape[0], c = a->shape[1];
  if (start < 0 || len <= 0 || start + len > r)
    throw std::out_of_range("slice_rows: range out of bounds");
  std::vector<double> out(a->values.begin() + start * c,
                          a->values.begin() + (start + len) * c);
  auto backprop = [a, c, start, len](Node& self) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    for (std::int64_t i = 0; i < len * c; ++i) a->grad[start * c + i] += self.grad[i];
  };
  return op_node({len, c}, std::move(out), {a}, std::move(backprop));
}

Tensor row(const Tensor& a, std::int64_t i) {
  return reshape(slice_rows(a, i, 1), {a.shape()[1]});
}

Tensor reshape(const Tensor& ta, Shape shape) {
  auto a = ta.node_ptr();
  if (shape_numel(shape) != a->size())
    throw std::invalid_argument("reshape: size mismatch " + shape_str(a->shape) +
                                " -> " + shape_str(shape));
  std::vector<double> out = a->values;
  auto backprop = [a](Node& self) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i];
  };
  return op_node(std::move(shape), std::move(out), {a}, std::move(backprop));
}

Tensor layer_norm(const Tensor& tx, const Tensor& tgain, const Tensor& tbias,
                  double eps) {
  require_2d(tx, "layer_norm");
  auto x = tx.node_ptr();
  auto gain = tgain.node_ptr();
  auto bias = tbias.node_ptr();
  const auto n = x->shape[0], d = x->shape[1];
  if (gain->size() != d || bias->size() != d)
    throw std::invalid_argument("layer_norm: gain/bias must have width " + std::to_string(d));

  std::vector<double> out(x->values.size());
  auto xhat = std::make_shared<std::vector<double>>(x->values.size());
  auto inv_std = std::make_shared<std::vector<double>>(n);
  for (std::int64_t i = 0; i < n; ++i) {
    const double* xi = x->values.data() + i * d;
    double m = 0.0;
    for (std::int64_t j = 0; j < d; ++j) m += xi[j];
    m /= d;
    double var = 0.0;
    for (std::int64_t j = 0; j < d; ++j) var += (xi[j] - m) * (xi[j] - m);
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::int64_t j = 0; j < d; ++j) {
      const double xh = (xi[j] - m) * is;
      (*xhat)[i * d + j] = xh;
      out[i * d + j] = gain->values[j] * xh + bias->values[j];
    }
  }
  auto backprop = [x, gain, bias, xhat, inv_std, n, d](Node& self) {
    for (std::int64_t i = 0; i < n; ++i) {
      const double* g = self.grad.data() + i * d;
      const double* xh = xhat->data() + i * d;
      if (gain->requires_grad) {
        gain->ensure_grad();
        for (std::int64_t j = 0; j < d; ++j) gain->grad[j] += g[j] * xh[j];
      }
      if (bias->requires_grad) {
        bias->ensure_grad();
        for (std::int64_t j = 0; j < d; ++j) bias->grad[j] += g[j];
      }
      if (x->requires_grad) {
        x->ensure_grad();
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
          const double dxh = g[j] * gain->values[j];
          mean_dxhat += dxh;
          mean_dxhat_xhat += dxh * xh[j];
        }
        mean_dxhat /= d;
        mean_dxhat_xhat /= d;
        for (std::int64_t j = 0; j < d; ++j) {
          const double dxh = g[j] * gain->values[j];
          x->grad[i * d + j] +=
              (*inv_std)[i] * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
      }
    }
  };
  return op_node(x->shape, std::move(out), {x, gain, bias}, std::move(backprop));
}

void backward(const Tensor& root) {
  if (root.size() != 1)
    throw std::invalid_argument("backward: root must be scalar, got " +
                                shape_str(root.shape()));
  Node* r = root.node();
  if (!r->requires_grad) return;

  // Iterative post-order DFS; reverse post-order is a valid execution order
  // for reverse accumulation.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack{{r, 0}};
  visited.insert(r);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Leaf grads accumulate across calls; interior grads are per-pass scratch
  // and must start from zero so repeated backward calls double leaf grads
  // instead of compounding.
  for (Node* node : order)
    if (!node->is_leaf) node->grad.assign(node->values.size(), 0.0);
  r->ensure_grad();
  r->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backprop) {
      node->ensure_grad();
      node->backprop(*node);
    }
  }
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double h) {
  Tensor xg = Tensor::leaf(x.shape(), x.values());
  Tensor y = f(xg);
  if (y.size() != 1) throw std::invalid_argument("grad_check: f must return a scalar");
  backward(y);
  const auto& analytic = xg.grad();

  double max_err = 0.0;
  std::vector<double> vals = x.values();
  for (size_t i = 0; i < vals.size(); ++i) {
    const double orig = vals[i];
    vals[i] = orig + h;
    const double fp = f(Tensor::constant(x.shape(), vals)).item();
    vals[i] = orig - h;
    const double fm = f(Tensor::constant(x.shape(), vals)).item();
    vals[i] = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    const double err =
        std::abs(analytic[i] - numeric) /
        (std::abs(analytic[i]) + std::abs(numeric) + 1e-12);
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace mgsr::ad
