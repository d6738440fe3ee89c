#include "inject/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "inject/errors.hpp"

namespace inject {

namespace {

thread_local bool g_grad_enabled = true;

std::shared_ptr<detail::Node> make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size())
    throw DimensionError("tensor of shape " + shape_str(shape) + " given " + std::to_string(values.size()) +
                         " values");
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_leaf({}, {value}, requires_grad));
}

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(int i) const {
  const auto& s = shape();
  const int r = static_cast<int>(s.size());
  const int idx = i < 0 ? r + i : i;
  if (idx < 0 || idx >= r) throw IndexError("dimension " + std::to_string(i) + " out of range for " + shape_str(s));
  return s[static_cast<std::size_t>(idx)];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::values() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->value;
}

std::span<double> Tensor::mutable_values() {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw IndexError("index rank mismatch for " + shape_str(s));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= s[axis]) throw IndexError("index out of range for " + shape_str(s));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return node_->value[flat];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!node_) throw ContractError("use of undefined tensor");
  node_->requires_grad = flag;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->grad_buffer();
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

const char* Tensor::op_name() const { return node_ ? node_->op : "undefined"; }

Tensor Tensor::detach() const { return clone(false); }

Tensor Tensor::clone(bool requires_grad) const {
  return Tensor(make_leaf(shape(), node_->value, requires_grad));
}

void Tensor::backward() const {
  if (!node_) throw ContractError("backward on undefined tensor");
  if (node_->value.size() != 1)
    throw ContractError("backward requires a scalar, got shape " + shape_str(node_->shape));
  if (!node_->requires_grad) throw ContractError("backward on a tensor that does not require grad");

  // Iterative post-order DFS; input order is fixed, so the topological order is too.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->is_leaf || !node->backward || node->grad.empty()) continue;
    // Each op writes its contribution into zeroed buffers, which are then added
    // to what was already there in one step. Gradient accumulation is then
    // exactly additive across losses and backward calls.
    std::vector<std::vector<double>> saved(node->inputs.size());
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      detail::Node* in = node->inputs[i].get();
      if (!in->requires_grad || in->grad.empty()) continue;
      bool first = true;
      for (std::size_t j = 0; j < i; ++j) first = first && node->inputs[j].get() != in;
      if (!first) continue;
      saved[i] = std::move(in->grad);
      in->grad.clear();
    }
    node->backward(*node);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      if (saved[i].empty()) continue;
      auto& g = node->inputs[i]->grad_buffer();
      for (std::size_t e = 0; e < g.size(); ++e) g[e] = saved[i][e] + g[e];
    }
    // Interior gradients are consumed once; keeps repeated backward calls additive.
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

}  // namespace inject
