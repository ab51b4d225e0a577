#include "darkforge/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "darkforge/errors.hpp"
#include "darkforge/tensor_debug.hpp"

namespace darkforge {

namespace {

thread_local bool g_grad_enabled = true;

#ifdef NDEBUG
std::atomic<bool> g_finite_checks{false};
#else
std::atomic<bool> g_finite_checks{true};
#endif

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// Applies a unary elementwise map with derivative dfdx(x, y).
template <class F, class D>
Tensor unary(const Tensor& a, F f, D dfdx) {
  Buffer out(a.numel());
  auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_result(a.shape(), std::move(out), {a}, [a, dfdx](detail::Node& o) {
    if (!a.requires_grad()) return;
    auto& g = a.node().ensure_grad();
    const auto& x = a.node().data;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * dfdx(x[i], o.data[i]);
  });
}

}  // namespace

void set_finite_checks(bool on) { g_finite_checks.store(on); }
bool finite_checks() { return g_finite_checks.load(); }

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Buffer& detail::Node::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  return grad;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Buffer data(shape_numel(shape), value);
  return from_buffer(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  return from_buffer(std::move(shape), Buffer(data.begin(), data.end()), requires_grad);
}

Tensor Tensor::from_buffer(Shape shape, Buffer data, bool requires_grad) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive: " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  Tensor t(std::move(n));
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from_data({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw DimensionError("axis out of range for shape " + shape_str(shape()));
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->data.size(); }
std::span<double> Tensor::data() { return node_->data; }
std::span<const double> Tensor::data() const { return node_->data; }

std::span<double> Tensor::grad() {
  if (!node_->requires_grad) return {};
  return node_->ensure_grad();
}

std::span<const double> Tensor::grad() const {
  if (!node_->requires_grad) return {};
  return node_->ensure_grad();
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (on && !node_->is_leaf()) throw ContractError("requires_grad can only be set on leaf tensors");
  node_->requires_grad = on;
  if (on) {
    node_->ensure_grad();
  } else {
    node_->grad.clear();
  }
}

void Tensor::zero_grad() {
  if (node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

Tensor Tensor::detach() const { return from_buffer(shape(), node_->data, false); }

Tensor make_result(Shape shape, Buffer data, const std::vector<Tensor>& parents,
                   detail::BackwardFn backward) {
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  if (g_finite_checks.load() && !all_finite(n->data)) {
    const bool inputs_finite = std::all_of(parents.begin(), parents.end(),
                                           [](const Tensor& p) { return all_finite(p.data()); });
    if (inputs_finite) throw NumericalError("non-finite value produced from finite inputs");
  }
  const bool track = g_grad_enabled && std::any_of(parents.begin(), parents.end(), [](const Tensor& p) {
                       return p.requires_grad();
                     });
  if (track) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (const auto& p : parents) n->parents.push_back(p.node_ptr());
    n->backward = std::move(backward);
  }
  return Tensor(std::move(n));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Buffer out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [a, b](detail::Node& o) {
    for (const Tensor* t : {&a, &b}) {
      if (!t->requires_grad()) continue;
      auto& g = t->node().ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Buffer out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [a, b](detail::Node& o) {
    if (a.requires_grad()) {
      auto& g = a.node().ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
    if (b.requires_grad()) {
      auto& g = b.node().ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Buffer out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [a, b](detail::Node& o) {
    if (a.requires_grad()) {
      auto& g = a.node().ensure_grad();
      const auto& y = b.node().data;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * y[i];
    }
    if (b.requires_grad()) {
      auto& g = b.node().ensure_grad();
      const auto& x = a.node().data;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * x[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(a, [factor](double x) { return factor * x; },
               [factor](double, double) { return factor; });
}

Tensor abs(const Tensor& a) {
  return unary(a, [](double x) { return std::abs(x); },
               [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor reduce_sum(const Tensor& a) {
  auto x = a.data();
  const double s = std::accumulate(x.begin(), x.end(), 0.0);
  return make_result({1}, {s}, {a}, [a](detail::Node& o) {
    if (!a.requires_grad()) return;
    auto& g = a.node().ensure_grad();
    for (auto& v : g) v += o.grad[0];
  });
}

Tensor reduce_mean(const Tensor& a) {
  if (!a.defined() || a.numel() == 0) throw DimensionError("reduce_mean of empty tensor");
  auto x = a.data();
  const double n = static_cast<double>(x.size());
  const double m = std::accumulate(x.begin(), x.end(), 0.0) / n;
  return make_result({1}, {m}, {a}, [a, n](detail::Node& o) {
    if (!a.requires_grad()) return;
    auto& g = a.node().ensure_grad();
    const double share = o.grad[0] / n;
    for (auto& v : g) v += share;
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  Buffer out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), {a}, [a](detail::Node& o) {
    if (!a.requires_grad()) return;
    auto& g = a.node().ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Backward pass

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() requires a scalar loss");
  }
  auto* root = loss.node_ptr().get();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order with each node once.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->data.size(), 0.0);
  }
  root->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (!n->is_leaf() && n->backward) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------
// Finite-difference checking

double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& wrt, double eps,
                  std::size_t max_coords_per_tensor) {
  std::vector<Tensor> params = wrt;
  std::vector<std::vector<double>> saved_grads;
  for (auto& p : params) {
    if (!p.requires_grad()) throw ContractError("grad_check: tensor does not require grad");
    saved_grads.emplace_back(p.grad().begin(), p.grad().end());
    p.zero_grad();
  }

  {
    Tensor y = f();
    if (y.numel() != 1) throw ContractError("grad_check: function is not scalar-valued");
    backward(y);
  }

  double worst = 0.0;
  for (auto& p : params) {
    auto values = p.data();
    std::vector<double> analytic(p.grad().begin(), p.grad().end());
    double g_max = 0.0;
    for (double g : analytic) g_max = std::max(g_max, std::abs(g));
    // coordinates far below the tensor's gradient scale are judged against that scale
    const double denom_floor = std::max(1e-8, kGradCheckScaleFloor * g_max);
    const std::size_t n = values.size();
    const std::size_t stride =
        (max_coords_per_tensor == 0 || n <= max_coords_per_tensor) ? 1 : (n + max_coords_per_tensor - 1) / max_coords_per_tensor;
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = values[i];
      double plus, minus;
      {
        NoGradGuard ng;
        values[i] = orig + eps;
        plus = f().item();
        values[i] = orig - eps;
        minus = f().item();
      }
      values[i] = orig;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double err =
          std::abs(analytic[i] - numeric) / std::max(denom_floor, std::abs(analytic[i]) + std::abs(numeric));
      worst = std::max(worst, err);
    }
  }

  for (std::size_t k = 0; k < params.size(); ++k) {
    auto g = params[k].grad();
    std::copy(saved_grads[k].begin(), saved_grads[k].end(), g.begin());
  }
  return worst;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  Tensor probe = x.detach();
  probe.set_requires_grad(true);
  return grad_check([&] { return f(probe); }, {probe}, eps, 0);
}

}  // namespace darkforge
