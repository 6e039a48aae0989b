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
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mtmd/adapt.hpp"
#include "mtmd/expert.hpp"
#include "mtmd/trainer.hpp"

namespace mtmd {

// Plain two-tower model for one domain: per side one global batch norm, no
// SE, one FFN, and a linear 64-dim embedding head per task. Unconstrained.
class BaselineModel {
 public:
  static constexpr std::size_t kEmbDim = 64;

  BaselineModel(const FeatureSchema& schema, DomainKey domain, ModelConfig cfg, std::uint64_t seed)
      : domain_(domain), cfg_(std::move(cfg)), params_(std::make_unique<ParamStore>()) {
    cfg_.domain_adapt = false;
    cfg_.constrained = false;
    cfg_.validate();
    for (Side side : {Side::kQuery, Side::kItem}) {
      const std::string p = "baseline." + std::string(name(side));
      Tower& t = towers_[static_cast<std::size_t>(side)];
      t.adapter = std::make_unique<Adapter>(schema, side, cfg_, *params_, p);
      t.ffn = Ffn(*params_, p + ".ffn", schema.adapted_dim(side), cfg_.deep_dims, Ffn::Style::kDeep, cfg_);
      for (TaskId task : kTasks) {
        const std::string h = p + ".head." + std::string(name(task));
        t.head_w[index(task)] = &params_->add(h + ".W", kEmbDim, cfg_.mix_dim(), nk::Init::kXavierUniform,
                                              cfg_.head_init_gain);
        t.head_b[index(task)] = &params_->add(h + ".b", 1, kEmbDim, nk::Init::kZeros);
      }
    }
    params_->initialize(seed);
  }

  DomainKey domain() const { return domain_; }
  ParamStore& params() { return *params_; }
  const ParamStore& params() const { return *params_; }
  std::size_t non_embedding_params() const { return params_->count(false); }
  std::size_t embedding_params() const { return params_->count(true); }

  std::array<Var, kNumTasks> embed(Graph& g, Rows rows, Side side, Mode mode) const {
    for (const Example* ex : rows) {
      if (ex->domain != domain_)
        throw RoutingError("baseline " + domain_.str() + " received an example of " + ex->domain.str());
    }
    const Tower& t = towers_[static_cast<std::size_t>(side)];
    Var h = t.ffn.forward(g, t.adapter->adapt(g, rows, mode).x);
    std::array<Var, kNumTasks> out;
    for (TaskId task : kTasks)
      out[index(task)] = nk::linear(g, h, g.param(*t.head_w[index(task)]), g.param(*t.head_b[index(task)]));
    return out;
  }

  TaskOutputs forward(Graph& g, Rows rows, Mode mode) const {
    const auto q = embed(g, rows, Side::kQuery, mode);
    const auto i = embed(g, rows, Side::kItem, mode);
    TaskOutputs out;
    for (std::size_t t = 0; t < kNumTasks; ++t) out.logits[t] = nk::row_dot(g, q[t], i[t]);
    out.probs = compose_probs(g, out.logits, false);
    return out;
  }

 private:
  struct Tower {
    std::unique_ptr<Adapter> adapter;
    Ffn ffn;
    std::array<ParamSlot*, kNumTasks> head_w{};
    std::array<ParamSlot*, kNumTasks> head_b{};
  };
  DomainKey domain_;
  ModelConfig cfg_;
  std::unique_ptr<ParamStore> params_;
  std::array<Tower, 2> towers_;
};

struct BaselineSet {
  std::map<DomainKey, std::unique_ptr<BaselineModel>> models;
  std::map<DomainKey, TrainHistory> history;
  std::map<DomainKey, std::size_t> slice_sizes;
  std::vector<std::string> warnings;

  std::size_t non_embedding_params() const {
    std::size_t n = 0;
    for (const auto& [d, m] : models) n += m->non_embedding_params();
    return n;
  }
  std::size_t embedding_params() const {
    std::size_t n = 0;
    for (const auto& [d, m] : models) n += m->embedding_params();
    return n;
  }
};

inline std::vector<Example> domain_slice(const std::vector<Example>& examples, DomainKey d) {
  std::vector<Example> out;
  for (const Example& e : examples)
    if (e.domain == d) out.push_back(e);
  return out;
}

// One baseline per domain, each trained only on its own slice for cfg.steps
// steps. Domains with no examples are skipped with a warning.
inline BaselineSet train_baselines(const FeatureSchema& schema, const ModelConfig& model_cfg,
                                   const std::vector<Example>& examples, const TrainConfig& cfg,
                                   std::uint64_t init_seed) {
  BaselineSet set;
  for (DomainKey d : all_domains()) {
    const std::vector<Example> slice = domain_slice(examples, d);
    set.slice_sizes[d] = slice.size();
    if (slice.empty()) {
      set.warnings.push_back("no training examples for " + d.str() + "; baseline skipped");
      continue;
    }
    auto model = std::make_unique<BaselineModel>(schema, d, model_cfg,
                                                 nk::derive_seed(init_seed, d.index()));
    TrainConfig c = cfg;
    c.seed = nk::derive_seed(cfg.seed, d.index());
    set.history[d] = fit(*model, slice, c);
    set.models[d] = std::move(model);
  }
  return set;
}

}  // namespace mtmd
