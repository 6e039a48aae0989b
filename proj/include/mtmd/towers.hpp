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
#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mtmd/adapt.hpp"
#include "mtmd/expert.hpp"
#include "mtmd/model_config.hpp"
#include "mtmd/numkernel/ops.hpp"
#include "mtmd/numkernel/params.hpp"
#include "mtmd/schema.hpp"

namespace mtmd {

inline constexpr double kProbFloor = 1e-7;

struct TaskEmbedding {
  TaskId task = TaskId::kCtr;
  std::vector<double> deep;     // emb_deep
  std::vector<double> shallow;  // emb_shallow
  bool masked = false;          // task undefined for this example's ad product
};

using TaskEmbeddings = std::map<TaskId, TaskEmbedding>;

struct TowerOutput {
  std::array<Var, kNumTasks> deep;
  std::array<Var, kNumTasks> shallow;
};

struct TaskOutputs {
  std::array<Var, kNumTasks> logits;  // B x 1
  std::array<Var, kNumTasks> probs;   // B x 1, clamped to [1e-7, 1 - 1e-7]
};

// Maps per-task logits to probabilities. Constrained mode composes the
// dependent tasks through CTR: p_t = sigmoid(s_t) * p_CTR.
inline std::array<Var, kNumTasks> compose_probs(Graph& g, const std::array<Var, kNumTasks>& logits,
                                                bool constrained) {
  std::array<Var, kNumTasks> p;
  const std::size_t ctr = index(TaskId::kCtr);
  p[ctr] = nk::clamp(g, nk::sigmoid(g, logits[ctr]), kProbFloor, 1.0 - kProbFloor);
  for (TaskId t : {TaskId::kGctr, TaskId::kOctr}) {
    Var s = nk::sigmoid(g, logits[index(t)]);
    if (constrained) s = nk::mul(g, s, p[ctr]);
    p[index(t)] = nk::clamp(g, s, kProbFloor, 1.0 - kProbFloor);
  }
  return p;
}

// Scalar counterpart of compose_probs for a single task.
inline double task_probability(const std::array<double, kNumTasks>& logits, TaskId task,
                               bool constrained) {
  const double p_ctr = std::clamp(nk::sigmoid(logits[index(TaskId::kCtr)]), kProbFloor,
                                  1.0 - kProbFloor);
  if (task == TaskId::kCtr) return p_ctr;
  double p = nk::sigmoid(logits[index(task)]);
  if (constrained) p *= p_ctr;
  return std::clamp(p, kProbFloor, 1.0 - kProbFloor);
}

// OCTR is omitted for shopping ads. Requires a CTR logit.
inline std::map<TaskId, double> predict_probs(const std::map<TaskId, double>& logits,
                                              bool constrained, AdProduct product) {
  auto ctr = logits.find(TaskId::kCtr);
  if (ctr == logits.end()) throw ConfigError("predict_probs: CTR logit missing");
  std::array<double, kNumTasks> s{};
  for (const auto& [t, v] : logits) s[index(t)] = v;
  std::map<TaskId, double> out;
  for (const auto& [t, v] : logits) {
    if (!task_applies(t, product)) continue;
    out[t] = task_probability(s, t, constrained);
  }
  return out;
}

struct TaskScore {
  double dot_deep = 0.0;
  double dot_shallow = 0.0;
  double logit = 0.0;
  double prob = 0.0;
};

using ScoreBreakdown = std::map<TaskId, TaskScore>;

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ConfigError("dot: dimension mismatch " + std::to_string(a.size()) + " vs " +
                      std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// logit = <q.deep, i.deep> + <q.shallow, i.shallow>; prob is left at 0.
inline TaskScore score(const TaskEmbedding& q, const TaskEmbedding& i) {
  TaskScore s;
  s.dot_deep = dot(q.deep, i.deep);
  s.dot_shallow = dot(q.shallow, i.shallow);
  s.logit = s.dot_deep + s.dot_shallow;
  return s;
}

inline ScoreBreakdown score_pair(const TaskEmbeddings& q, const TaskEmbeddings& i,
                                 bool constrained, AdProduct product) {
  ScoreBreakdown out;
  std::map<TaskId, double> logits;
  for (const auto& [t, qe] : q) {
    auto it = i.find(t);
    if (it == i.end()) continue;
    out[t] = score(qe, it->second);
    logits[t] = out[t].logit;
  }
  const auto probs = predict_probs(logits, constrained, product);
  for (auto it = out.begin(); it != out.end();) {
    auto p = probs.find(it->first);
    if (p == probs.end()) {
      it = out.erase(it);
    } else {
      it->second.prob = p->second;
      ++it;
    }
  }
  return out;
}

// N surface experts (query side) or M product experts (item side), one
// adaptation front-end and one domain-shared expert. Only the expert matching
// a row's domain key runs for that row.
class Tower {
 public:
  Tower(const FeatureSchema& schema, Side side, const ModelConfig& cfg, ParamStore& params)
      : side_(side),
        adapter_(schema, side, cfg, params, std::string(name(side))) {
    const std::string prefix(name(side));
    const std::size_t in = schema.adapted_dim(side);
    const std::size_t hl = schema.high_level_dim(side);
    domain_shared_ = Ffn(params, prefix + ".domain_shared", schema.shared_dim(side), cfg.deep_dims,
                         Ffn::Style::kDeep, cfg);
    const std::size_t n = side == Side::kQuery ? kNumSurfaces : kNumProducts;
    for (std::size_t k = 0; k < n; ++k) {
      const std::string key(side == Side::kQuery ? name(kSurfaces[k]) : name(kProducts[k]));
      experts_.emplace_back(params, prefix + "." + key, side, k, in, hl, cfg);
    }
  }

  Side side() const { return side_; }
  const Adapter& adapter() const { return adapter_; }
  const Ffn& domain_shared() const { return domain_shared_; }
  const std::vector<DomainExpert>& experts() const { return experts_; }

  std::size_t expert_index(const DomainKey& d) const {
    return side_ == Side::kQuery ? index(d.surface) : index(d.product);
  }

  TowerOutput forward(Graph& g, Rows rows, Mode mode) const {
    const std::size_t n = rows.size();
    if (n == 0) throw DataError("tower forward on an empty batch");
    AdaptOutput ad = adapter_.adapt(g, rows, mode);
    Var ds = domain_shared_.forward(g, ad.shared);

    std::vector<std::vector<std::size_t>> groups(experts_.size());
    for (std::size_t r = 0; r < n; ++r) groups[expert_index(rows[r]->domain)].push_back(r);

    std::array<std::vector<Var>, kNumTasks> deep, shallow;
    std::vector<std::vector<std::size_t>> idx;
    for (std::size_t e = 0; e < experts_.size(); ++e) {
      if (groups[e].empty()) continue;
      std::vector<const Example*> sub;
      for (std::size_t r : groups[e]) sub.push_back(rows[r]);
      const bool all = groups[e].size() == n;
      Var x = all ? ad.x : nk::gather_rows(g, ad.x, groups[e]);
      Var d = all ? ds : nk::gather_rows(g, ds, groups[e]);
      Var h = all ? ad.high_level : nk::gather_rows(g, ad.high_level, groups[e]);
      ExpertOutput o = experts_[e].forward(g, sub, x, d, h);
      for (std::size_t t = 0; t < kNumTasks; ++t) {
        deep[t].push_back(o.deep[t]);
        shallow[t].push_back(o.shallow[t]);
      }
      idx.push_back(groups[e]);
    }
    TowerOutput out;
    for (std::size_t t = 0; t < kNumTasks; ++t) {
      if (idx.size() == 1 && idx.front().size() == n) {
        out.deep[t] = deep[t].front();
        out.shallow[t] = shallow[t].front();
      } else {
        out.deep[t] = nk::scatter_rows(g, deep[t], idx, n);
        out.shallow[t] = nk::scatter_rows(g, shallow[t], idx, n);
      }
    }
    return out;
  }

 private:
  Side side_;
  Adapter adapter_;
  Ffn domain_shared_;
  std::vector<DomainExpert> experts_;
};

// Pair logits from two tower outputs.
inline std::array<Var, kNumTasks> pair_logits(Graph& g, const TowerOutput& q, const TowerOutput& i) {
  std::array<Var, kNumTasks> logits;
  for (std::size_t t = 0; t < kNumTasks; ++t) {
    logits[t] = nk::add(g, nk::row_dot(g, q.deep[t], i.deep[t]),
                        nk::row_dot(g, q.shallow[t], i.shallow[t]));
  }
  return logits;
}

inline TaskEmbeddings to_task_embeddings(const Graph& g, const TowerOutput& out, std::size_t row,
                                         AdProduct product) {
  TaskEmbeddings m;
  for (TaskId t : kTasks) {
    TaskEmbedding e;
    e.task = t;
    e.deep = g.value(out.deep[index(t)]).row_vector(row);
    e.shallow = g.value(out.shallow[index(t)]).row_vector(row);
    e.masked = !task_applies(t, product);
    m.emplace(t, std::move(e));
  }
  return m;
}

class MtmdModel {
 public:
  MtmdModel(FeatureSchema schema, ModelConfig cfg, std::uint64_t seed)
      : schema_(std::move(schema)), cfg_(std::move(cfg)), params_(std::make_unique<ParamStore>()) {
    schema_.validate();
    cfg_.validate();
    query_ = std::make_unique<Tower>(schema_, Side::kQuery, cfg_, *params_);
    item_ = std::make_unique<Tower>(schema_, Side::kItem, cfg_, *params_);
    params_->initialize(seed);
  }

  const FeatureSchema& schema() const { return schema_; }
  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return *params_; }
  const ParamStore& params() const { return *params_; }
  const Tower& query_tower() const { return *query_; }
  const Tower& item_tower() const { return *item_; }
  bool constrained() const { return cfg_.constrained; }

  TowerOutput query_forward(Graph& g, Rows rows, Mode mode) const {
    return query_->forward(g, rows, mode);
  }
  TowerOutput item_forward(Graph& g, Rows rows, Mode mode) const {
    return item_->forward(g, rows, mode);
  }

  TaskOutputs forward(Graph& g, Rows rows, Mode mode) const {
    TaskOutputs out;
    out.logits = pair_logits(g, query_forward(g, rows, mode), item_forward(g, rows, mode));
    out.probs = compose_probs(g, out.logits, cfg_.constrained);
    return out;
  }

  // Inference-mode embeddings of one example's query or item side.
  TaskEmbeddings embed(const Example& ex, Side side) const {
    Graph g(false);
    const Example* rows[] = {&ex};
    TowerOutput out = side == Side::kQuery ? query_forward(g, rows, Mode::kInfer)
                                           : item_forward(g, rows, Mode::kInfer);
    return to_task_embeddings(g, out, 0, ex.domain.product);
  }

  std::size_t non_embedding_params() const { return params_->count(false); }
  std::size_t embedding_params() const { return params_->count(true); }

 private:
  FeatureSchema schema_;
  ModelConfig cfg_;
  std::unique_ptr<ParamStore> params_;
  std::unique_ptr<Tower> query_;
  std::unique_ptr<Tower> item_;
};

}  // namespace mtmd
