#pragma once

// Reverse-mode differentiable tensors.
//
// A Tensor is a cheap handle onto a graph node: copying the handle shares the
// node. Ops read their inputs' values at call time and record a backward
// closure when gradients are enabled and some input requires them. backward()
// walks the recorded graph in a deterministic reverse topological order and
// accumulates into leaf gradients.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace inject {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something is accumulated
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  /// Size of dimension i; negative i counts from the end.
  std::size_t dim(int i) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  /// Direct access to the stored values; intended for parameters (initialization,
  /// optimizer updates, finite-difference perturbation).
  std::span<double> mutable_values();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  /// Gradient, or an empty span before any accumulation.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Populates gradients of every reachable leaf. Must be called on a scalar.
  void backward() const;

  /// New leaf sharing no graph history, with copied values.
  Tensor detach() const;
  Tensor clone(bool requires_grad = false) const;

  const char* op_name() const;

  // Internal: used by op implementations.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on this thread while alive.
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

/// Boolean keep-mask with its own shape; broadcast against a tensor by
/// right-aligning dimensions, where size-1 mask dimensions repeat.
struct Mask {
  Shape shape;
  std::vector<std::uint8_t> keep;
};

}  // namespace inject
