#pragma once

#include <cassert>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "popdiff/error.hpp"
#include "popdiff/ndarray.hpp"

namespace popdiff {

template <typename T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const NdArray<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return tape->value(id).shape(); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so every
/// parent id is smaller than its child id and the reverse sweep is a plain
/// descending loop.
template <typename T>
class Tape {
 public:
  /// Reads the gradient of node `self` and accumulates into its parents.
  using Adjoint = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Disabling gradients turns the tape into a plain evaluator: no adjoints
  /// are stored and every node is treated as a constant.
  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
  bool grad_enabled() const { return grad_enabled_; }

  Var<T> leaf(NdArray<T> value) { return push(std::move(value), true, {}); }

  Var<T> constant(NdArray<T> value) {
    return push(std::move(value), false, {});
  }

  /// Appends the result of a primitive. `adjoint` is dropped when none of
  /// the parents needs a gradient.
  Var<T> record(NdArray<T> value, const std::vector<std::size_t>& parents,
                Adjoint adjoint) {
    bool needs = false;
    for (std::size_t p : parents) {
      assert(p < nodes_.size() && "parent must precede child");
      if (p >= nodes_.size()) {
        throw Error("tape: parent id out of range");
      }
      needs = needs || nodes_[p].requires_grad;
    }
    needs = needs && grad_enabled_;
    return push(std::move(value), needs, needs ? std::move(adjoint) : Adjoint{});
  }

  std::size_t size() const { return nodes_.size(); }
  const NdArray<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient buffer of a node, allocated as zeros on first access.
  NdArray<T>& grad(std::size_t id) {
    auto& node = nodes_.at(id);
    if (!node.grad) node.grad.emplace(node.value.shape());
    return *node.grad;
  }

  bool has_grad(std::size_t id) const { return nodes_.at(id).grad.has_value(); }

  /// Gradient of a node after backward(); zeros if it is not on a path to
  /// the loss.
  NdArray<T> grad_of(Var<T> v) const {
    const auto& node = nodes_.at(v.id);
    return node.grad ? *node.grad : NdArray<T>(node.value.shape());
  }

  void zero_grad() {
    for (auto& n : nodes_) n.grad.reset();
  }

  void backward(Var<T> loss) {
    if (loss.tape != this) throw Error("backward: loss belongs to another tape");
    if (value(loss.id).size() != 1) {
      throw ShapeError("backward: loss must be scalar, got shape " +
                       shape_str(value(loss.id).shape()));
    }
    grad(loss.id).fill(T(1));
    std::vector<bool> visited(nodes_.size(), false);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& node = nodes_[i];
      if (!node.grad || !node.adjoint) continue;
      assert(!visited[i]);
      visited[i] = true;
      node.adjoint(*this, i);
    }
  }

 private:
  struct Node {
    NdArray<T> value;
    bool requires_grad = false;
    Adjoint adjoint;
    std::optional<NdArray<T>> grad;
  };

  Var<T> push(NdArray<T> value, bool requires_grad, Adjoint adjoint) {
    nodes_.push_back(Node{std::move(value), requires_grad, std::move(adjoint), {}});
    return Var<T>{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
};

}  // namespace popdiff
