// Copyright 2026 The msdemucs Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "msdemucs/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

#include "msdemucs/error.hpp"

namespace msd::ag {
namespace {

thread_local bool g_grad_enabled = true;

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_scalar(const char* op, const Tensor& a) {
  if (a.numel() != 1) {
    throw ShapeError(std::string(op) + ": expected a scalar, got " +
                     shape_str(a.shape()));
  }
}

template <typename Fwd, typename Deriv>
Tensor unary(const char* name, const Tensor& a, Fwd fwd, Deriv deriv) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.data()[i]);
  auto ai = a.impl();
  return make_result(name, a.shape(), std::move(out), {a},
                     [ai, deriv](const TensorImpl& o) {
                       if (!ai->requires_grad) return;
                       auto& g = grad_buffer(*ai);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         g[i] += o.grad[i] * deriv(ai->data[i], o.data[i]);
                       }
                     });
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(ag::numel(shape), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (ag::numel(shape) != data.size()) {
    throw ShapeError("Tensor::from: shape " + shape_str(shape) + " holds " +
                     std::to_string(ag::numel(shape)) + " values, got " +
                     std::to_string(data.size()));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item: tensor of shape " + shape_str(shape()) +
                     " is not a scalar");
  }
  return impl_->data[0];
}

std::vector<double>& Tensor::mutable_grad() { return grad_buffer(*impl_); }

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::detach() const {
  return from(impl_->shape, impl_->data, false);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

bool needs_grad(std::initializer_list<const Tensor*> inputs) {
  if (!g_grad_enabled) return false;
  for (const Tensor* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

Tensor make_result(std::string name, Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs,
                   std::function<void(const TensorImpl&)> backward) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  bool record = false;
  if (g_grad_enabled) {
    for (const auto& t : inputs) {
      if (t.defined() && t.requires_grad()) record = true;
    }
  }
  if (record) {
    auto node = std::make_shared<Node>();
    node->name = std::move(name);
    for (const auto& t : inputs) {
      if (t.defined()) node->inputs.push_back(t.impl());
    }
    node->backward = std::move(backward);
    impl->grad_fn = std::move(node);
    impl->requires_grad = true;
  }
  return Tensor(std::move(impl));
}

std::vector<double>& grad_buffer(TensorImpl& impl) {
  if (impl.grad.size() != impl.data.size()) impl.grad.assign(impl.data.size(), 0.0);
  return impl.grad;
}

void backward(const Tensor& root, const Tensor& seed) {
  if (!root.defined() || !root.requires_grad()) {
    throw StateError("backward: tensor is not part of a recorded graph");
  }
  if (seed.numel() != root.numel()) {
    throw ShapeError("backward: seed shape " + shape_str(seed.shape()) +
                     " does not match output " + shape_str(root.shape()));
  }
  if (root.is_leaf()) {
    auto& g = grad_buffer(*root.impl());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed.data()[i];
    return;
  }
  // Iterative post-order DFS gives a topological order of recorded nodes.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(root.impl().get(), 0);
  visited.insert(root.impl().get());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    if (impl->grad_fn && next < impl->grad_fn->inputs.size()) {
      TensorImpl* child = impl->grad_fn->inputs[next++].get();
      if (child->grad_fn && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
      continue;
    }
    if (impl->grad_fn) order.push_back(impl);
    stack.pop_back();
  }
  for (TensorImpl* impl : order) impl->grad.assign(impl->data.size(), 0.0);
  auto& root_grad = root.impl()->grad;
  for (std::size_t i = 0; i < root_grad.size(); ++i) root_grad[i] = seed.data()[i];
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    (*it)->grad_fn->backward(**it);
  }
}

void backward(const Tensor& root) {
  require_scalar("backward", root);
  backward(root, Tensor::scalar(1.0));
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto ai = a.impl(), bi = b.impl();
  return make_result("add", a.shape(), std::move(out), {a, b},
                     [ai, bi](const TensorImpl& o) {
                       for (auto* in : {ai.get(), bi.get()}) {
                         if (!in->requires_grad) continue;
                         auto& g = grad_buffer(*in);
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                       }
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  auto ai = a.impl(), bi = b.impl();
  return make_result("sub", a.shape(), std::move(out), {a, b},
                     [ai, bi](const TensorImpl& o) {
                       if (ai->requires_grad) {
                         auto& g = grad_buffer(*ai);
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                       }
                       if (bi->requires_grad) {
                         auto& g = grad_buffer(*bi);
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
                       }
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto ai = a.impl(), bi = b.impl();
  return make_result("mul", a.shape(), std::move(out), {a, b},
                     [ai, bi](const TensorImpl& o) {
                       if (ai->requires_grad) {
                         auto& g = grad_buffer(*ai);
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] += o.grad[i] * bi->data[i];
                       }
                       if (bi->requires_grad) {
                         auto& g = grad_buffer(*bi);
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] += o.grad[i] * ai->data[i];
                       }
                     });
}

Tensor scale(const Tensor& a, double s) {
  return unary("scale", a, [s](double x) { return x * s; },
               [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary("add_scalar", a, [s](double x) { return x + s; },
               [](double, double) { return 1.0; });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  auto ai = a.impl();
  return make_result("sum", {1}, {acc}, {a}, [ai](const TensorImpl& o) {
    if (!ai->requires_grad) return;
    auto& g = grad_buffer(*ai);
    for (double& v : g) v += o.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean: empty tensor");
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  const double n = static_cast<double>(a.numel());
  auto ai = a.impl();
  return make_result("mean", {1}, {acc / n}, {a}, [ai, n](const TensorImpl& o) {
    if (!ai->requires_grad) return;
    auto& g = grad_buffer(*ai);
    for (double& v : g) v += o.grad[0] / n;
  });
}

Tensor abs(const Tensor& a) {
  return unary("abs", a, [](double x) { return std::abs(x); },
               [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Tensor sqrt(const Tensor& a) {
  return unary("sqrt", a, [](double x) { return std::sqrt(x); },
               [](double, double y) { return y > 0 ? 0.5 / y : 0.0; });
}

Tensor square(const Tensor& a) {
  return unary("square", a, [](double x) { return x * x; },
               [](double x, double) { return 2.0 * x; });
}

Tensor log_floor(const Tensor& a, double floor) {
  return unary("log_floor", a,
               [floor](double x) { return std::log(std::max(x, floor)); },
               [floor](double x, double) { return x > floor ? 1.0 / x : 0.0; });
}

Tensor clamp_min(const Tensor& a, double floor) {
  return unary("clamp_min", a, [floor](double x) { return std::max(x, floor); },
               [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_scalar("div", a);
  require_scalar("div", b);
  const double av = a.item(), bv = b.item();
  auto ai = a.impl(), bi = b.impl();
  return make_result("div", {1}, {av / bv}, {a, b},
                     [ai, bi, av, bv](const TensorImpl& o) {
                       if (ai->requires_grad) grad_buffer(*ai)[0] += o.grad[0] / bv;
                       if (bi->requires_grad)
                         grad_buffer(*bi)[0] -= o.grad[0] * av / (bv * bv);
                     });
}

Tensor relu(const Tensor& a) {
  return unary("relu", a, [](double x) { return x > 0 ? x : 0.0; },
               [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor elu(const Tensor& a, double alpha) {
  return unary("elu", a,
               [alpha](double x) { return x > 0 ? x : alpha * std::expm1(x); },
               [alpha](double x, double y) { return x > 0 ? 1.0 : y + alpha; });
}

Tensor sigmoid(const Tensor& a) {
  return unary("sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
               [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  auto ai = a.impl();
  return make_result("reshape", std::move(shape), std::move(out), {a},
                     [ai](const TensorImpl& o) {
                       if (!ai->requires_grad) return;
                       auto& g = grad_buffer(*ai);
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                     });
}

Tensor mean_of_three(const Tensor& a, const Tensor& b, const Tensor& c) {
  require_same_shape("mean_of_three", a, b);
  require_same_shape("mean_of_three", a, c);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = (a.data()[i] + b.data()[i] + c.data()[i]) / 3.0;
  }
  auto ai = a.impl(), bi = b.impl(), ci = c.impl();
  return make_result("mean_of_three", a.shape(), std::move(out), {a, b, c},
                     [ai, bi, ci](const TensorImpl& o) {
                       for (auto* in : {ai.get(), bi.get(), ci.get()}) {
                         if (!in->requires_grad) continue;
                         auto& g = grad_buffer(*in);
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] += o.grad[i] / 3.0;
                       }
                     });
}

const std::vector<Tensor>& Graph::forward(const std::vector<Tensor>& inputs) {
  outputs_ = builder_(inputs);
  return outputs_;
}

void Graph::backward(const Tensor& output_grad, std::size_t output_index) {
  if (!has_run()) throw StateError("Graph::backward called before forward");
  if (output_index >= outputs_.size()) {
    throw InvalidArgument("Graph::backward: output index out of range");
  }
  const Tensor& out = outputs_[output_index];
  if (output_grad.shape() != out.shape()) {
    throw ShapeError("Graph::backward: output_grad " +
                     shape_str(output_grad.shape()) + " does not match output " +
                     shape_str(out.shape()));
  }
  ag::backward(out, output_grad);
}

std::string GradCheckReport::to_string() const {
  std::ostringstream os;
  os << (passed ? "pass" : "FAIL") << " max_rel_error=" << max_rel_error
     << " at index " << worst_index << " (analytic " << analytic_at_worst
     << ", numeric " << numeric_at_worst << ", " << coords_checked
     << " coords)";
  return os.str();
}

namespace {

std::vector<std::size_t> pick_coords(std::size_t total,
                                     const GradCheckOptions& opts) {
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  if (opts.max_coords == 0 || opts.max_coords >= total) return idx;
  std::mt19937_64 rng(opts.seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(opts.max_coords);
  std::sort(idx.begin(), idx.end());
  return idx;
}

void record(GradCheckReport& r, std::size_t index, double analytic,
            double numeric, const GradCheckOptions& opts) {
  const double denom =
      std::max({std::abs(analytic), std::abs(numeric), opts.abs_floor});
  const double rel = std::abs(analytic - numeric) / denom;
  ++r.coords_checked;
  if (r.coords_checked == 1 || rel > r.max_rel_error) {
    r.max_rel_error = rel;
    r.worst_index = index;
    r.analytic_at_worst = analytic;
    r.numeric_at_worst = numeric;
  }
  if (!(rel <= opts.tol)) r.passed = false;
}

double eval_scalar(const std::function<Tensor()>& f) {
  NoGradGuard guard;
  Tensor y = f();
  if (y.numel() != 1) throw InvalidArgument("grad_check: f is not scalar-valued");
  return y.item();
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f,
                           const Tensor& x0, const GradCheckOptions& opts) {
  Tensor x = x0.detach();
  x.set_requires_grad(true);
  std::vector<Tensor> params{x};
  return grad_check_params([&] { return f(x); }, params, opts);
}

GradCheckReport grad_check_params(const std::function<Tensor()>& f,
                                  std::span<Tensor> params,
                                  const GradCheckOptions& opts) {
  for (auto& p : params) p.zero_grad();
  Tensor y = f();
  if (y.numel() != 1) throw InvalidArgument("grad_check: f is not scalar-valued");
  backward(y);

  std::vector<std::pair<std::size_t, std::size_t>> flat;  // (param, offset)
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].numel(); ++i) flat.emplace_back(p, i);
  }
  GradCheckReport report;
  for (std::size_t k : pick_coords(flat.size(), opts)) {
    auto [p, i] = flat[k];
    Tensor& t = params[p];
    const double analytic = t.grad().empty() ? 0.0 : t.grad()[i];
    const double orig = t.data()[i];
    t.data()[i] = orig + opts.eps;
    const double fp = eval_scalar(f);
    t.data()[i] = orig - opts.eps;
    const double fm = eval_scalar(f);
    t.data()[i] = orig;
    record(report, k, analytic, (fp - fm) / (2.0 * opts.eps), opts);
  }
  return report;
}

}  // namespace msd::ag
