// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major float64 tensor with a reverse-mode gradient graph.
//
// A Tensor is a handle: copies share storage and graph position, like
// framework tensors. Use clone() for an independent value.
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ctcadapt/error.hpp"

namespace ctcadapt {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // lazily sized to data.size()
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Called with this node once its grad is final; accumulates into parents.
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    for (std::size_t d : shape) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("shape " + shape_str(shape) + " does not match " +
                           std::to_string(data.size()) + " elements");
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor filled(Shape shape, double value, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), 0.0, requires_grad);
  }
  static Tensor scalar(double v, bool requires_grad = false) { return Tensor({1}, {v}, requires_grad); }

  // Rank-2 tensor from nested rows.
  static Tensor matrix(const std::vector<std::vector<double>>& rows, bool requires_grad = false) {
    if (rows.empty() || rows.front().empty()) throw DimensionError("matrix needs at least one element");
    std::vector<double> flat;
    flat.reserve(rows.size() * rows.front().size());
    for (const auto& r : rows) {
      if (r.size() != rows.front().size()) throw DimensionError("ragged matrix rows");
      flat.insert(flat.end(), r.begin(), r.end());
    }
    return Tensor({rows.size(), rows.front().size()}, std::move(flat), requires_grad);
  }

  static Tensor vector(std::vector<double> v, bool requires_grad = false) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v), requires_grad);
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }
  // Rows/cols view for rank-2 tensors; a rank-1 tensor is one row.
  std::size_t rows() const { return rank() == 1 ? 1 : node_->shape[0]; }
  std::size_t cols() const { return node_->shape.back(); }

  std::span<const double> data() const { return node_->data; }
  std::span<double> data() { return node_->data; }
  double operator[](std::size_t i) const { return node_->data[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

  double item() const {
    if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  bool is_leaf() const { return !node_->backward_fn; }

  Tensor clone() const {
    Tensor t(node_->shape, node_->data, false);
    return t;
  }
  Tensor detach() const { return clone(); }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

  static Tensor from_node(std::shared_ptr<detail::Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

inline bool all_finite(std::span<const double> xs) {
  for (double x : xs) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

namespace detail {

// Builds an op output. The graph edge is recorded only when recording is on
// and some input needs a gradient.
inline Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward_fn) {
  Tensor out(std::move(shape), std::move(data), false);
  if (!grad_enabled()) return out;
  bool needs = false;
  for (const auto& t : inputs) needs = needs || t.requires_grad();
  if (!needs) return out;
  auto& n = *out.node();
  n.requires_grad = true;
  n.parents.reserve(inputs.size());
  for (auto& t : inputs) n.parents.push_back(t.node());
  n.backward_fn = std::move(backward_fn);
  return out;
}

}  // namespace detail

// Reverse-mode sweep from a scalar. Leaf gradients accumulate across calls;
// intermediate gradients are recomputed each call.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() requires a scalar loss, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (detail::Node* n : order) {
    if (n->backward_fn) n->grad.assign(n->data.size(), 0.0);
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

}  // namespace ctcadapt
