#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "ncam/tensor.hpp"

namespace ncam {

template <typename T>
class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Graph<T>* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph<T>& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;

 private:
  Graph<T>* graph_ = nullptr;
  std::size_t id_ = 0;
};

enum class GradMode { kRecord, kNoGrad };

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Tape of executed operations, replayed in reverse by backward(). Nodes are
// appended in execution order so the node index is a topological order.
// One graph per forward pass; confined to the thread that built it.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::span<const T>)>;

  explicit Graph(GradMode mode = GradMode::kRecord) : mode_(mode) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return mode_ == GradMode::kRecord; }

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, {}); }
  Var<T> variable(Tensor<T> value) { return push(std::move(value), recording(), {}); }

  // Appends an op result. The backward function is kept only if some input
  // needs a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    return record(std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()), std::move(fn));
  }
  Var<T> record(Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn fn) {
    bool needs = false;
    if (recording()) {
      for (const auto& in : inputs) {
        check_owner(in);
        needs = needs || nodes_[in.id()].requires_grad;
      }
    }
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
  }

  const Tensor<T>& value(const Var<T>& v) const {
    check_owner(v);
    return nodes_[v.id()].value;
  }
  bool requires_grad(const Var<T>& v) const {
    check_owner(v);
    return nodes_[v.id()].requires_grad;
  }

  bool has_grad(const Var<T>& v) const {
    check_owner(v);
    return !nodes_[v.id()].grad.empty();
  }

  // Gradient after backward(); zeros if the node was unreachable.
  Tensor<T> grad(const Var<T>& v) const {
    check_owner(v);
    const auto& node = nodes_[v.id()];
    if (!node.requires_grad) throw GraphError("gradient requested for a node that does not require grad");
    if (node.grad.empty()) return Tensor<T>(node.value.shape());
    return Tensor<T>(node.value.shape(), node.grad);
  }

  // Accumulation buffer used by backward functions; allocated on first use.
  std::span<T> grad_buffer(const Var<T>& v) {
    auto& node = nodes_[v.id()];
    if (node.grad.empty()) node.grad.assign(node.value.size(), T{0});
    return node.grad;
  }

  void backward(const Var<T>& root) {
    check_owner(root);
    if (!recording()) throw GraphError("backward() on a no-grad graph");
    if (backward_done_) throw GraphError("backward() called twice on the same graph");
    auto& r = nodes_[root.id()];
    if (r.value.size() != 1) throw GraphError("backward() root must be a scalar, got " + to_string(r.value.shape()));
    backward_done_ = true;
    if (!r.requires_grad) return;
    r.grad.assign(1, T{1});
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      auto& node = nodes_[i];
      if (!node.backward || node.grad.empty()) continue;
      node.backward(*this, std::span<const T>(node.grad));
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<T> push(Tensor<T> value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, std::move(fn)});
    return Var<T>(this, nodes_.size() - 1);
  }

  void check_owner(const Var<T>& v) const {
    if (&v.graph() != this || v.id() >= nodes_.size()) throw GraphError("variable belongs to another graph");
  }

  GradMode mode_;
  bool backward_done_ = false;
  // A deque keeps references returned by value()/shape() valid while later
  // nodes are appended.
  std::deque<Node> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return graph_->value(*this);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return graph_->requires_grad(*this);
}

}  // namespace ncam
