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

#include <array>
#include <string>
#include <vector>

#include "mtmd/errors.hpp"
#include "mtmd/schema.hpp"

namespace mtmd {

using TaskDims = std::array<std::size_t, kNumTasks>;

inline TaskDims uniform_task_dims(std::size_t d) { return {d, d, d}; }
// CTR gets the wide embedding; the two conditional tasks share a narrow one.
inline TaskDims constrained_task_dims() { return {128, 32, 32}; }

inline constexpr std::size_t kNumExperts = 3;  // task deep, task-shared, domain-shared

struct ModelConfig {
  std::vector<std::size_t> deep_dims{512, 256, 128, 128};
  std::vector<std::size_t> shallow_dims{128, 64};
  std::vector<std::size_t> gate_dims{128, 64};  // hidden widths; output is kNumExperts
  std::size_t dcn_layers = 2;
  std::size_t dcn_rank = 32;
  TaskDims task_dims = uniform_task_dims(64);
  std::size_t se_reduction = 2;
  double leaky_slope = 0.2;
  double emb_init_std = 0.5;
  // Gain on the Xavier limit of the layers that emit embeddings, so the
  // initial dot-product logits are O(1).
  double head_init_gain = 0.1;

  bool domain_adapt = true;  // per-domain batch norm + SE; off = one global batch norm
  bool dcn = true;
  bool pre_norm = true;      // layer norm before the cross network; off = after it
  bool constrained = true;   // P(GCTR) = P(GCTR | CTR) * P(CTR), same for OCTR

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;

  std::size_t mix_dim() const { return deep_dims.back(); }
  std::size_t shallow_dim() const { return shallow_dims.back(); }

  void validate() const {
    auto positive = [](const std::vector<std::size_t>& v, const char* what) {
      if (v.empty()) throw ConfigError(std::string(what) + ": needs at least one layer");
      for (std::size_t d : v)
        if (d == 0) throw ConfigError(std::string(what) + ": zero width");
    };
    positive(deep_dims, "deep_dims");
    positive(shallow_dims, "shallow_dims");
    positive(gate_dims, "gate_dims");
    if (mix_dim() < 2) throw ConfigError("deep_dims: output width must be >= 2");
    if (dcn && dcn_rank == 0) throw ConfigError("dcn_rank must be > 0");
    if (se_reduction == 0) throw ConfigError("se_reduction must be > 0");
    for (std::size_t d : task_dims)
      if (d == 0) throw ConfigError("task embedding dims must be > 0");
    if (!(leaky_slope > 0.0 && leaky_slope < 1.0))
      throw ConfigError("leaky_slope must be in (0, 1)");
  }
};

}  // namespace mtmd
