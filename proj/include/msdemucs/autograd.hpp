// Copyright 2026 The msdemucs Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace msd::ag {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;

/// One recorded operation. The closure reads the output gradient and adds
/// into the gradients of whichever inputs require them.
struct Node {
  std::string name;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;
};

/// Shared handle to a dense row-major float64 array. Copies alias the same
/// storage, as with a reference-counted tensor in any autograd framework.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<double> data() { return impl_->data; }
  std::span<const double> data() const { return impl_->data; }
  const std::vector<double>& values() const { return impl_->data; }
  double item() const;

  /// Empty until a backward pass reaches this tensor.
  std::span<const double> grad() const { return impl_->grad; }
  std::vector<double>& mutable_grad();
  void zero_grad();

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool value) { impl_->requires_grad = value; }
  bool is_leaf() const { return impl_->grad_fn == nullptr; }

  /// Deep copy detached from any graph.
  Tensor detach() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Disables graph recording on this thread for its lifetime.
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

/// True when an op over these inputs must be recorded.
bool needs_grad(std::initializer_list<const Tensor*> inputs);

/// Builds an op result. When recording, attaches a Node over `inputs`.
Tensor make_result(std::string name, Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs,
                   std::function<void(const TensorImpl&)> backward);

/// Gradient buffer of an input, zero-allocated on first use.
std::vector<double>& grad_buffer(TensorImpl& impl);

/// Reverse-mode sweep from `root` seeded with `seed` (same shape as root).
/// Leaf gradients accumulate; intermediate gradients are reset each call.
void backward(const Tensor& root, const Tensor& seed);
/// Scalar root seeded with 1.
void backward(const Tensor& root);

// --- elementwise and reduction ops ---------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);
/// log(max(a, floor)); zero gradient below the floor.
Tensor log_floor(const Tensor& a, double floor);
/// max(a, floor); zero gradient below the floor.
Tensor clamp_min(const Tensor& a, double floor);
/// Scalar / scalar.
Tensor div(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);
Tensor elu(const Tensor& a, double alpha = 1.0);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
/// (a + b + c) / 3 evaluated in exactly that order.
Tensor mean_of_three(const Tensor& a, const Tensor& b, const Tensor& c);

// --- graph wrapper ---------------------------------------------------------

/// Re-runnable computation: a builder over input tensors plus the outputs of
/// its last evaluation.
class Graph {
 public:
  using Builder = std::function<std::vector<Tensor>(const std::vector<Tensor>&)>;

  explicit Graph(Builder builder) : builder_(std::move(builder)) {}

  const std::vector<Tensor>& forward(const std::vector<Tensor>& inputs);
  /// Throws StateError when forward has not run.
  void backward(const Tensor& output_grad, std::size_t output_index = 0);
  bool has_run() const { return !outputs_.empty(); }
  const std::vector<Tensor>& outputs() const { return outputs_; }

 private:
  Builder builder_;
  std::vector<Tensor> outputs_;
};

// --- finite-difference checking -------------------------------------------

struct GradCheckOptions {
  double eps = 1e-4;
  double tol = 1e-3;
  /// Denominator floor for the relative error, so gradients near zero are
  /// compared absolutely.
  double abs_floor = 1e-6;
  /// 0 checks every coordinate; otherwise a seeded random subset.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  bool passed = true;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t coords_checked = 0;

  std::string to_string() const;
};

/// Compares backward gradients of scalar f at x0 against central
/// differences. Throws InvalidArgument if f is not scalar.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f,
                           const Tensor& x0, const GradCheckOptions& opts = {});

/// Same check over coordinates of several parameter tensors, which are
/// perturbed in place and restored. Indices in the report are flat over the
/// concatenation of `params`.
GradCheckReport grad_check_params(const std::function<Tensor()>& f,
                                  std::span<Tensor> params,
                                  const GradCheckOptions& opts = {});

}  // namespace msd::ag
