#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <utility>
#include <vector>

#include "despoof/tensor.hpp"

namespace despoof {

template <class T>
struct Node {
  BasicTensor<T> value;
  BasicTensor<T> grad;  // allocated lazily, same shape as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents.
  std::function<void(Node&)> backward_fn;

  BasicTensor<T>& grad_buffer() {
    if (grad.empty()) grad = BasicTensor<T>::zeros(value.shape());
    return grad;
  }

  void accumulate(const BasicTensor<T>& g) {
    if (!requires_grad) return;
    if (grad.empty()) {
      grad = g;
      return;
    }
    auto& dst = grad;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
  }
};

namespace detail {
inline thread_local int no_grad_depth = 0;
}

inline bool grad_enabled() noexcept { return detail::no_grad_depth == 0; }

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

/// Handle to a node of the reverse-mode graph. Copies share the node.
template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(BasicTensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const noexcept { return node_ != nullptr; }
  const BasicTensor<T>& value() const { return node_->value; }
  BasicTensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t i) const { return node_->value.dim(i); }
  std::size_t rank() const { return node_->value.rank(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  const std::shared_ptr<Node<T>>& node() const noexcept { return node_; }

  /// Gradient accumulated by backward(); zeros if nothing flowed here.
  BasicTensor<T> grad() const {
    if (node_->grad.empty()) return BasicTensor<T>::zeros(node_->value.shape());
    return node_->grad;
  }
  bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }
  void zero_grad() { node_->grad = BasicTensor<T>(); }

  /// Reverse sweep from a single-element value, seeding d(self)/d(self) = 1.
  void backward() const {
    if (node_->value.size() != 1) throw std::invalid_argument("backward() requires a scalar output");
    if (!node_->requires_grad) return;
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    // Iterative post-order DFS; graphs for the nets here are a few hundred nodes deep.
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node<T>* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->grad_buffer().fill(T{1});
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* n = *it;
      if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Builds an op result. The closure is kept only when recording is on and
/// some parent requires a gradient.
template <class T>
Var<T> make_result(BasicTensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Var<T>(std::move(node));
}

}  // namespace despoof
