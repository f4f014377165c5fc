#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace diffseg {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {

template <class T, std::size_t Align = 64>
struct AlignedAllocator {
  using value_type = T;
  template <class U>
  struct rebind {
    using other = AlignedAllocator<U, Align>;
  };

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U, Align>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{Align})); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{Align}); }
  bool operator==(const AlignedAllocator&) const = default;
};

}  // namespace detail

/// Tensor storage. Every buffer starts on a 64-byte boundary so vectorized
/// kernels peel and sum in the same order on every run, whatever the heap
/// history; without it results drift in the last bit between processes.
using Buffer = std::vector<double, detail::AlignedAllocator<double>>;

namespace detail {

struct Node {
  Shape shape;
  Buffer value;
  Buffer grad;  // empty unless requires_grad
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Propagates this node's grad into its inputs' grads. Null for leaves.
  std::function<void(Node&)> backward_fn;
};

}  // namespace detail

/// Dense row-major array of doubles with an optional reverse-mode graph.
///
/// A Tensor is a shared handle: copies alias the same storage, like the
/// tensors of mainstream frameworks. Use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, Buffer values, bool requires_grad = false);
  static Tensor from(Shape shape, std::span<const double> values, bool requires_grad = false);
  static Tensor from(Shape shape, std::initializer_list<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  const Buffer& values() const;

  bool requires_grad() const;
  /// Empty span when the tensor does not track gradients.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Value of a single-element tensor.
  double item() const;

  /// Reverse-mode pass from this scalar. Leaf gradients accumulate across
  /// calls; call zero_grad() on the leaves to start fresh.
  void backward() const;

  /// Same values, no graph.
  Tensor detach() const;
  Tensor clone() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  /// Builds an op result. The graph is recorded only when grad mode is on and
  /// some input requires grad.
  static Tensor make_result(Shape shape, Buffer values,
                            std::vector<Tensor> inputs,
                            std::function<void(detail::Node&)> backward_fn);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Whether new ops record a backward graph on this thread.
bool grad_enabled();

/// Disables graph recording for the enclosing scope.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace diffseg
