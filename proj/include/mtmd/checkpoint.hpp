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

#include <map>
#include <memory>
#include <string>

#include "mtmd/baseline.hpp"
#include "mtmd/binary_io.hpp"
#include "mtmd/config.hpp"
#include "mtmd/embedding_io.hpp"
#include "mtmd/towers.hpp"

namespace mtmd {

// Checkpoint layout, after the shared container header (tag = checkpoint):
//   str32 run config text, u64 schema hash, str16 model kind ("mtmd" or
//   "baseline"), u8 domain index (baselines only, else 0), u32 slot count,
//   then per slot: str16 id, u32 rows, u32 cols, rows*cols f64.
// Every slot is stored, including batch norm running statistics.

inline constexpr std::string_view kKindMtmd = "mtmd";
inline constexpr std::string_view kKindBaseline = "baseline";

struct CheckpointData {
  RunConfig config;
  std::string kind;
  DomainKey domain;
  std::map<std::string, nk::Tensor2> slots;
};

inline std::string serialize_checkpoint(const ParamStore& params, const RunConfig& cfg,
                                        std::string_view kind, DomainKey domain = {}) {
  bin::Writer w;
  std::vector<TaskLayout> layout = model_layout(cfg.model);
  if (kind == kKindBaseline) {
    for (TaskLayout& l : layout) {
      l.deep_dim = BaselineModel::kEmbDim;
      l.shallow_dim = 0;
    }
  }
  write_container_header(w, ContainerTag::kCheckpoint, layout);
  w.str32(config_to_text(cfg));
  w.u64(cfg.schema.hash());
  w.str16(kind);
  w.u8(static_cast<std::uint8_t>(kind == kKindBaseline ? domain.index() : 0));
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [id, s] : params.slots()) {
    w.str16(id);
    w.u32(static_cast<std::uint32_t>(s.value.rows()));
    w.u32(static_cast<std::uint32_t>(s.value.cols()));
    for (double v : s.value.values()) w.f64(v);
  }
  return w.data();
}

inline CheckpointData parse_checkpoint(bin::Reader& r) {
  std::vector<TaskLayout> layout;
  if (read_container_header(r, layout) != ContainerTag::kCheckpoint)
    throw FormatError("file is an embedding export, not a checkpoint");
  CheckpointData cp;
  const std::size_t cfg_at = r.offset();
  try {
    cp.config = parse_config(r.str32());
  } catch (const ConfigError& e) {
    throw FormatError("checkpoint config at byte offset " + std::to_string(cfg_at) + ": " + e.what());
  }
  const std::uint64_t hash = r.u64();
  if (hash != cp.config.schema.hash())
    throw FormatError("checkpoint schema hash does not match its embedded schema");
  cp.kind = r.str16();
  if (cp.kind != kKindMtmd && cp.kind != kKindBaseline)
    throw FormatError("unknown checkpoint model kind '" + cp.kind + "'");
  const std::uint8_t d = r.u8();
  if (d >= kNumDomains) throw FormatError("bad domain index " + std::to_string(d));
  cp.domain = DomainKey::from_index(d);
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string id = r.str16();
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    nk::Tensor2 t(rows, cols);
    for (double& v : t.values()) v = r.f64();
    cp.slots.emplace(std::move(id), std::move(t));
  }
  if (!r.at_end())
    throw FormatError("unexpected trailing bytes at byte offset " + std::to_string(r.offset()));
  return cp;
}

// Copies stored values into a freshly built model; slot ids and shapes must
// match one to one.
inline void restore_params(ParamStore& params, const std::map<std::string, nk::Tensor2>& slots) {
  if (slots.size() != params.size())
    throw FormatError("checkpoint has " + std::to_string(slots.size()) + " parameter slots, model has " +
                      std::to_string(params.size()));
  for (auto& [id, s] : params.slots()) {
    auto it = slots.find(id);
    if (it == slots.end()) throw FormatError("checkpoint is missing parameter " + id);
    if (!it->second.same_shape(s.value))
      throw FormatError("parameter " + id + " has shape " + it->second.shape_string() + " in the checkpoint, " +
                        s.value.shape_string() + " in the model");
    s.value = it->second;
  }
}

inline void save_checkpoint(const std::string& path, const MtmdModel& model, const RunConfig& cfg) {
  RunConfig c = cfg;
  c.model = model.config();
  c.schema = model.schema();
  bin::Writer w;
  w.bytes(serialize_checkpoint(model.params(), c, kKindMtmd));
  w.save(path);
}

inline void save_checkpoint(const std::string& path, const BaselineModel& model, const RunConfig& cfg) {
  bin::Writer w;
  w.bytes(serialize_checkpoint(model.params(), cfg, kKindBaseline, model.domain()));
  w.save(path);
}

inline CheckpointData read_checkpoint(const std::string& path) {
  bin::Reader r = bin::Reader::load(path);
  return parse_checkpoint(r);
}

inline std::unique_ptr<MtmdModel> mtmd_from_checkpoint(const CheckpointData& cp) {
  if (cp.kind != kKindMtmd) throw ConfigError("checkpoint holds a " + cp.kind + " model, not mtmd");
  auto m = std::make_unique<MtmdModel>(cp.config.schema, cp.config.model, 0);
  restore_params(m->params(), cp.slots);
  return m;
}

inline std::unique_ptr<BaselineModel> baseline_from_checkpoint(const CheckpointData& cp) {
  if (cp.kind != kKindBaseline) throw ConfigError("checkpoint holds a " + cp.kind + " model, not a baseline");
  auto m = std::make_unique<BaselineModel>(cp.config.schema, cp.domain, cp.config.model, 0);
  restore_params(m->params(), cp.slots);
  return m;
}

}  // namespace mtmd
