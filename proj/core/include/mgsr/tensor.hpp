#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mgsr::ad {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);

namespace detail {
struct Node;
}

/// Dense 64-bit real tensor participating in reverse-mode differentiation.
/// A Tensor is a cheap handle onto a graph node; operations record the
/// backward rule so that backward() on a scalar root accumulates gradients
/// on every ancestor that requires them.
class Tensor {
 public:
  Tensor() = default;

  // Constant value, no gradient tracking.
  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor scalar(double v);
  // Trainable leaf: gradient accumulates until zero_grad().
  static Tensor leaf(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::int64_t size() const;
  bool requires_grad() const;

  const std::vector<double>& values() const;
  // In-place edits are only meaningful on leaves (optimizer updates).
  std::vector<double>& mutable_values();
  const std::vector<double>& grad() const;
  std::vector<double>& mutable_grad();
  void zero_grad();

  void set_requires_grad(bool v);

  double item() const;  // scalar tensors only
  Tensor detach() const;

  detail::Node* node() const { return node_.get(); }
  std::shared_ptr<detail::Node> node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;
  friend Tensor make_tensor(std::shared_ptr<detail::Node>);
};

// While alive on the current thread, operations record no backward rules;
// forward values are unaffected. Used for inference on trainable models.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Elementwise binary ops. Shapes must match, or one operand may broadcast:
// a scalar against anything, or a tensor whose shape is a trailing suffix of
// the other's (broadcast over the leading batch axis).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

// 2-d matrix product and transpose.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor sum(const Tensor& a);            // all elements -> shape {1}
Tensor sum(const Tensor& a, int axis);  // 2-d only
Tensor mean(const Tensor& a);

// log clamps its argument at 1e-12 before taking the logarithm; strictly
// negative inputs are an error.
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor sqrt(const Tensor& a);

// Numerically stable softmax along the last axis (max subtraction).
Tensor softmax(const Tensor& a);

Tensor concat(std::span<const Tensor> parts, int axis);
// Descending sort along the last axis. The output is detached: no gradient
// flows through the permutation.
Tensor sort_descending(const Tensor& a);

Tensor gather_rows(const Tensor& table, std::span<const int> ids);
Tensor gather(const Tensor& a, std::span<const int> idx);  // 1-d
Tensor pick(const Tensor& a, std::span<const int> cols);   // a[i, cols[i]]
Tensor slice_cols(const Tensor& a, std::int64_t start, std::int64_t len);
Tensor slice_rows(const Tensor& a, std::int64_t start, std::int64_t len);
Tensor row(const Tensor& a, std::int64_t i);  // 1-d view of row i
Tensor reshape(const Tensor& a, Shape shape);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

// Accumulates d(root)/d(ancestor) into every ancestor's grad. root must be
// scalar. Repeated calls without zeroing accumulate.
void backward(const Tensor& root);

// Max over coordinates of |analytic - central difference| /
// (|analytic| + |numeric| + 1e-12).
double grad_check(const std::function<Tensor(const Tensor&)>& f,
                  const Tensor& x, double h);

}  // namespace mgsr::ad
