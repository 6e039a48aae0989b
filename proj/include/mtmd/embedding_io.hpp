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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "mtmd/binary_io.hpp"
#include "mtmd/towers.hpp"

namespace mtmd {

inline constexpr std::string_view kContainerMagic = "MTMD";
inline constexpr std::uint32_t kContainerVersion = 1;

// Tag byte following the version: which tower produced the rows, or a checkpoint.
enum class ContainerTag : std::uint8_t { kQuery = 0, kItem = 1, kCheckpoint = 2 };

struct TaskLayout {
  TaskId task = TaskId::kCtr;
  std::uint32_t deep_dim = 0;
  std::uint32_t shallow_dim = 0;
  std::size_t width() const { return deep_dim + shallow_dim; }
};

// Rows of f32 embeddings as stored on disk. A task that does not apply to a
// row's ad product is stored as NaN and reported as masked.
struct EmbeddingStore {
  Side tower = Side::kItem;
  std::vector<TaskLayout> tasks;
  std::vector<std::uint64_t> ids;
  std::vector<float> values;  // row-major, tasks in header order, deep then shallow

  std::size_t size() const { return ids.size(); }
  std::size_t row_width() const {
    std::size_t w = 0;
    for (const auto& t : tasks) w += t.width();
    return w;
  }
  std::size_t task_slot(TaskId t) const {
    for (std::size_t i = 0; i < tasks.size(); ++i)
      if (tasks[i].task == t) return i;
    throw ConfigError("embedding store has no task " + std::string(name(t)));
  }
  std::size_t task_offset(std::size_t slot) const {
    std::size_t off = 0;
    for (std::size_t i = 0; i < slot; ++i) off += tasks[i].width();
    return off;
  }

  TaskEmbedding embedding(std::size_t row, TaskId t) const {
    const std::size_t slot = task_slot(t);
    const float* p = values.data() + row * row_width() + task_offset(slot);
    TaskEmbedding e;
    e.task = t;
    e.deep.assign(p, p + tasks[slot].deep_dim);
    e.shallow.assign(p + tasks[slot].deep_dim, p + tasks[slot].width());
    e.masked = tasks[slot].width() > 0 && std::isnan(p[0]);
    return e;
  }

  void append(std::uint64_t id, const TaskEmbeddings& emb) {
    ids.push_back(id);
    for (const TaskLayout& l : tasks) {
      const TaskEmbedding& e = emb.at(l.task);
      if (e.deep.size() != l.deep_dim || e.shallow.size() != l.shallow_dim)
        throw ConfigError("embedding dims do not match store layout for " + std::string(name(l.task)));
      constexpr float nan = std::numeric_limits<float>::quiet_NaN();
      for (double v : e.deep) values.push_back(e.masked ? nan : static_cast<float>(v));
      for (double v : e.shallow) values.push_back(e.masked ? nan : static_cast<float>(v));
    }
  }
};

inline std::vector<TaskLayout> model_layout(const ModelConfig& cfg) {
  std::vector<TaskLayout> out;
  for (TaskId t : kTasks) {
    out.push_back({t, static_cast<std::uint32_t>(cfg.task_dims[index(t)]),
                   static_cast<std::uint32_t>(cfg.shallow_dim())});
  }
  return out;
}

// Magic, version, tag and the task table; shared by embedding files and checkpoints.
inline void write_container_header(bin::Writer& w, ContainerTag tag,
                                   const std::vector<TaskLayout>& tasks) {
  w.bytes(kContainerMagic);
  w.u32(kContainerVersion);
  w.u8(static_cast<std::uint8_t>(tag));
  w.u16(static_cast<std::uint16_t>(tasks.size()));
  for (const TaskLayout& t : tasks) {
    w.str16(name(t.task));
    w.u32(t.deep_dim);
    w.u32(t.shallow_dim);
  }
}

inline ContainerTag read_container_header(bin::Reader& r, std::vector<TaskLayout>& tasks) {
  if (r.bytes(4) != kContainerMagic) throw FormatError("bad magic at byte offset 0");
  const std::size_t at = r.offset();
  const std::uint32_t version = r.u32();
  if (version != kContainerVersion)
    throw FormatError("unsupported container version " + std::to_string(version) +
                      " at byte offset " + std::to_string(at));
  const std::uint8_t tag = r.u8();
  if (tag > static_cast<std::uint8_t>(ContainerTag::kCheckpoint))
    throw FormatError("unknown container tag " + std::to_string(tag));
  const std::uint16_t n = r.u16();
  tasks.clear();
  for (std::uint16_t i = 0; i < n; ++i) {
    const std::size_t where = r.offset();
    const std::string tn = r.str16();
    auto t = parse_task(tn);
    if (!t) throw FormatError("unknown task '" + tn + "' at byte offset " + std::to_string(where));
    TaskLayout l{*t, 0, 0};
    l.deep_dim = r.u32();
    l.shallow_dim = r.u32();
    tasks.push_back(l);
  }
  return static_cast<ContainerTag>(tag);
}

inline std::string serialize_store(const EmbeddingStore& s) {
  bin::Writer w;
  write_container_header(w, s.tower == Side::kQuery ? ContainerTag::kQuery : ContainerTag::kItem,
                         s.tasks);
  w.u64(s.ids.size());
  const std::size_t width = s.row_width();
  for (std::size_t r = 0; r < s.ids.size(); ++r) {
    w.u64(s.ids[r]);
    for (std::size_t c = 0; c < width; ++c) w.f32(s.values[r * width + c]);
  }
  return w.data();
}

inline EmbeddingStore parse_store(bin::Reader& r) {
  EmbeddingStore s;
  const ContainerTag tag = read_container_header(r, s.tasks);
  if (tag == ContainerTag::kCheckpoint) throw FormatError("file is a checkpoint, not an embedding export");
  s.tower = tag == ContainerTag::kQuery ? Side::kQuery : Side::kItem;
  const std::uint64_t rows = r.u64();
  const std::size_t width = s.row_width();
  for (std::uint64_t i = 0; i < rows; ++i) {
    s.ids.push_back(r.u64());
    for (std::size_t c = 0; c < width; ++c) s.values.push_back(r.f32());
  }
  if (!r.at_end()) throw FormatError("trailing bytes at byte offset " + std::to_string(r.offset()));
  return s;
}

// Embeds `examples` on one side in inference mode, in chunks.
inline EmbeddingStore build_store(const MtmdModel& model, const std::vector<Example>& examples,
                                  Side side = Side::kItem, std::size_t chunk = 256) {
  EmbeddingStore s;
  s.tower = side;
  s.tasks = model_layout(model.config());
  for (std::size_t start = 0; start < examples.size(); start += chunk) {
    const std::size_t end = std::min(examples.size(), start + chunk);
    std::vector<const Example*> rows;
    for (std::size_t i = start; i < end; ++i) rows.push_back(&examples[i]);
    Graph g(false);
    TowerOutput out = side == Side::kQuery ? model.query_forward(g, rows, Mode::kInfer)
                                           : model.item_forward(g, rows, Mode::kInfer);
    for (std::size_t i = 0; i < rows.size(); ++i)
      s.append(rows[i]->id, to_task_embeddings(g, out, i, rows[i]->domain.product));
  }
  return s;
}

inline void export_embeddings(const MtmdModel& model, const std::vector<Example>& items,
                              const std::string& path, Side side = Side::kItem) {
  bin::Writer w;
  w.bytes(serialize_store(build_store(model, items, side)));
  w.save(path);
}

inline EmbeddingStore import_embeddings(const std::string& path) {
  bin::Reader r = bin::Reader::load(path);
  return parse_store(r);
}

struct Ranked {
  std::uint64_t id = 0;
  double prob = 0.0;
};

// Top-k items of an item store for one query embedding and task: descending
// probability, ties by ascending id. Items whose task is masked are skipped.
inline std::vector<Ranked> rank_top_k(const TaskEmbeddings& query, const EmbeddingStore& store,
                                      std::size_t k, TaskId task, bool constrained) {
  if (store.tower != Side::kItem) throw ConfigError("rank_top_k needs an item-tower store");
  const TaskEmbedding& qt = query.at(task);
  const TaskEmbedding& qc = query.at(TaskId::kCtr);
  std::vector<Ranked> all;
  for (std::size_t r = 0; r < store.size(); ++r) {
    const TaskEmbedding it = store.embedding(r, task);
    if (it.masked) continue;
    std::array<double, kNumTasks> logits{};
    logits[index(task)] = score(qt, it).logit;
    if (constrained && task != TaskId::kCtr)
      logits[index(TaskId::kCtr)] = score(qc, store.embedding(r, TaskId::kCtr)).logit;
    all.push_back({store.ids[r], task_probability(logits, task, constrained)});
  }
  const std::size_t n = std::min(k, all.size());
  auto better = [](const Ranked& a, const Ranked& b) {
    return a.prob != b.prob ? a.prob > b.prob : a.id < b.id;
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n), all.end(), better);
  all.resize(n);
  return all;
}

inline std::vector<Ranked> rank_top_k(const MtmdModel& model, const Example& query,
                                      const EmbeddingStore& store, std::size_t k, TaskId task) {
  return rank_top_k(model.embed(query, Side::kQuery), store, k, task, model.constrained());
}

}  // namespace mtmd
