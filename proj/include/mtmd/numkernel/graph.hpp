/* Copyright 2026 The MTMD Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <unordered_map>
#include <vector>

#include "mtmd/errors.hpp"
#include "mtmd/numkernel/params.hpp"
#include "mtmd/numkernel/tensor.hpp"

namespace mtmd::nk {

struct Var {
  static constexpr std::uint32_t kInvalid = std::numeric_limits<std::uint32_t>::max();
  std::uint32_t id = kInvalid;
  bool valid() const { return id != kInvalid; }
};

// Reverse-mode tape over Tensor2 values. Nodes are appended in evaluation
// order, so the tape is already topologically sorted; backward() walks it in
// reverse. Parameter nodes alias their ParamSlot: no copy of the weights is
// made, and their gradient accumulates straight into ParamSlot::grad.
//
// A Graph is single-use and not thread-safe; build one per forward pass.
class Graph {
 public:
  using Backward = std::function<void(Graph&, const Tensor2& dy)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor2 value) { return push(std::move(value), nullptr, false); }

  Var input(Tensor2 value) { return push(std::move(value), nullptr, grad_enabled_); }

  Var param(ParamSlot& slot) {
    auto it = param_nodes_.find(&slot);
    if (it != param_nodes_.end()) return it->second;
    Var v = push(Tensor2(), &slot, grad_enabled_ && slot.trainable);
    param_nodes_.emplace(&slot, v);
    return v;
  }

  // Appends the result of an op. `fn` is dropped when no parent needs a gradient.
  Var emit(Tensor2 value, std::initializer_list<Var> parents, Backward fn) {
    bool needs = false;
    for (Var p : parents) needs = needs || requires_grad(p);
    Var v = push(std::move(value), nullptr, needs);
    if (needs) nodes_[v.id].fn = std::move(fn);
    return v;
  }
  Var emit(Tensor2 value, const std::vector<Var>& parents, Backward fn) {
    bool needs = false;
    for (Var p : parents) needs = needs || requires_grad(p);
    Var v = push(std::move(value), nullptr, needs);
    if (needs) nodes_[v.id].fn = std::move(fn);
    return v;
  }

  const Tensor2& value(Var v) const {
    const Node& n = node(v);
    return n.slot ? n.slot->value : n.value;
  }

  bool requires_grad(Var v) const { return v.valid() && node(v).requires_grad; }

  // Gradient buffer of `v`, zero-initialized on first access.
  Tensor2& grad(Var v) {
    Node& n = node(v);
    if (n.slot) {
      n.slot->touched = true;
      return n.slot->grad;
    }
    if (!n.grad_ready) {
      const Tensor2& val = n.value;
      n.grad = Tensor2(val.rows(), val.cols());
      n.grad_ready = true;
    }
    return n.grad;
  }

  bool has_grad(Var v) const {
    const Node& n = node(v);
    return n.slot ? n.slot->touched : n.grad_ready;
  }

  // Seeds d(root)/d(root) = 1 elementwise and propagates to every ancestor.
  void backward(Var root) {
    if (!grad_enabled_) throw ConfigError("backward() on a graph built without gradients");
    if (!requires_grad(root)) return;
    grad(root).fill(1.0);
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.fn || !n.grad_ready) continue;
      n.fn(*this, n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor2 value;
    Tensor2 grad;
    Backward fn;
    ParamSlot* slot = nullptr;
    bool requires_grad = false;
    bool grad_ready = false;
  };

  Var push(Tensor2 value, ParamSlot* slot, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.slot = slot;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  Node& node(Var v) {
    if (v.id >= nodes_.size()) throw ConfigError("Graph: invalid variable");
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw ConfigError("Graph: invalid variable");
    return nodes_[v.id];
  }

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::unordered_map<const ParamSlot*, Var> param_nodes_;
};

}  // namespace mtmd::nk
