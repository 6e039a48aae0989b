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

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mtmd/errors.hpp"
#include "mtmd/numkernel/rng.hpp"
#include "mtmd/numkernel/tensor.hpp"

namespace mtmd::nk {

enum class Init {
  kZeros,
  kOnes,
  kHeUniform,      // layers feeding a (leaky) relu
  kXavierUniform,  // heads and gates
  kNormal,         // embedding tables
};

struct ParamSlot {
  std::string id;
  Tensor2 value;
  Tensor2 grad;
  bool trainable = true;
  Init init = Init::kZeros;
  double init_scale = 1.0;  // gain for uniform schemes, stddev for kNormal
  bool embedding = false;   // counted separately in parameter reports
  bool touched = false;     // received gradient since the last optimizer step
};

// Owns every parameter of a model, keyed by a stable string path. std::map keeps
// the traversal order id-sorted, which fixes both init and update order.
class ParamStore {
 public:
  ParamSlot& add(const std::string& id, std::size_t rows, std::size_t cols, Init init,
                 double init_scale = 1.0, bool trainable = true, bool embedding = false) {
    auto [it, inserted] = slots_.try_emplace(id);
    if (!inserted) throw ConfigError("duplicate parameter id: " + id);
    ParamSlot& s = it->second;
    s.id = id;
    s.value = Tensor2(rows, cols);
    s.grad = Tensor2(rows, cols);
    s.trainable = trainable;
    s.init = init;
    s.init_scale = init_scale;
    s.embedding = embedding;
    return s;
  }

  ParamSlot& at(const std::string& id) {
    auto it = slots_.find(id);
    if (it == slots_.end()) throw ConfigError("unknown parameter id: " + id);
    return it->second;
  }
  const ParamSlot& at(const std::string& id) const {
    auto it = slots_.find(id);
    if (it == slots_.end()) throw ConfigError("unknown parameter id: " + id);
    return it->second;
  }
  bool contains(const std::string& id) const { return slots_.count(id) != 0; }

  std::map<std::string, ParamSlot>& slots() { return slots_; }
  const std::map<std::string, ParamSlot>& slots() const { return slots_; }
  std::size_t size() const { return slots_.size(); }

  void initialize(std::uint64_t seed) {
    Rng rng(seed);
    for (auto& [id, s] : slots_) init_slot(s, rng);
  }

  void zero_grad() {
    for (auto& [id, s] : slots_) {
      s.grad.set_zero();
      s.touched = false;
    }
  }

  std::size_t count(bool embedding) const {
    std::size_t n = 0;
    for (const auto& [id, s] : slots_) {
      if (s.trainable && s.embedding == embedding) n += s.value.size();
    }
    return n;
  }

  // Counts trainable non-embedding scalars whose id starts with `prefix`.
  std::size_t count_prefix(const std::string& prefix, bool embedding = false) const {
    std::size_t n = 0;
    for (auto it = slots_.lower_bound(prefix); it != slots_.end(); ++it) {
      if (it->first.compare(0, prefix.size(), prefix) != 0) break;
      if (it->second.trainable && it->second.embedding == embedding) n += it->second.value.size();
    }
    return n;
  }

 private:
  static void init_slot(ParamSlot& s, Rng& rng) {
    const double fan_in = static_cast<double>(s.value.cols());
    const double fan_out = static_cast<double>(s.value.rows());
    double limit = 0.0;
    switch (s.init) {
      case Init::kZeros:
        s.value.fill(0.0);
        return;
      case Init::kOnes:
        s.value.fill(1.0);
        return;
      case Init::kNormal:
        for (double& v : s.value.values()) v = s.init_scale * rng.normal();
        return;
      case Init::kHeUniform:
        limit = s.init_scale * std::sqrt(6.0 / fan_in);
        break;
      case Init::kXavierUniform:
        limit = s.init_scale * std::sqrt(6.0 / (fan_in + fan_out));
        break;
    }
    for (double& v : s.value.values()) v = rng.uniform(-limit, limit);
  }

  std::map<std::string, ParamSlot> slots_;
};

}  // namespace mtmd::nk
