#pragma once

// Dense double-precision tensors with define-by-run reverse-mode autodiff.
//
// A Tensor is a cheap handle onto a shared node. Operations on tensors that
// require gradients record their inputs and a backward rule; calling
// backward() on a scalar walks that record once in reverse topological order.

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace darkforge {

using Shape = std::vector<std::size_t>;

/// Cache-line aligned allocator. Vectorised reductions peel according to the
/// start address, so a fixed alignment keeps results bit-identical between runs.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {

struct Node;
using BackwardFn = std::function<void(Node& out)>;

struct Node {
  Shape shape;
  Buffer data;
  Buffer grad;  // empty until needed
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;

  bool is_leaf() const { return parents.empty(); }
  Buffer& ensure_grad();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor from_buffer(Shape shape, Buffer data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<double> data();
  std::span<const double> data() const;
  /// Gradient buffer; allocated (zeroed) on first access for tensors that require grad.
  std::span<double> grad();
  std::span<const double> grad() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  void zero_grad();

  /// Value of a one-element tensor.
  double item() const;

  /// Deep copy of the data into a new leaf.
  Tensor detach() const;

  detail::Node& node() const { return *node_; }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor make_result(Shape, Buffer, const std::vector<Tensor>&,
                            detail::BackwardFn);
};

/// Builds an op output. Parents and the backward rule are recorded only when
/// grad mode is on and at least one parent requires grad.
Tensor make_result(Shape shape, Buffer data, const std::vector<Tensor>& parents,
                   detail::BackwardFn backward);

/// True while recording is enabled on this thread.
bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Elementwise arithmetic. Shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);
/// Clamp with pass-through gradient inside (lo, hi), zero outside.
Tensor clamp(const Tensor& a, double lo, double hi);

Tensor reduce_sum(const Tensor& a);
Tensor reduce_mean(const Tensor& a);

/// Same data, new shape of equal element count.
Tensor reshape(const Tensor& a, Shape shape);

/// Accumulates d loss / d t into every reachable tensor that requires grad.
/// Leaf gradients accumulate across calls; intermediate ones are recomputed.
void backward(const Tensor& loss);

inline constexpr double kGradCheckScaleFloor = 1e-3;

/// Max relative error between the analytic gradient of `f` and central
/// differences, over every coordinate of every tensor in `wrt`. The
/// denominator is |a| + |n|, floored at kGradCheckScaleFloor times the largest
/// analytic magnitude of the same tensor.
/// `max_coords_per_tensor` > 0 restricts each tensor to an evenly strided subset.
double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& wrt,
                  double eps = 1e-5, std::size_t max_coords_per_tensor = 0);

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double eps = 1e-5);

}  // namespace darkforge
