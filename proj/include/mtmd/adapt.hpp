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

#include <span>
#include <string>
#include <vector>

#include "mtmd/model_config.hpp"
#include "mtmd/numkernel/ops.hpp"
#include "mtmd/numkernel/params.hpp"
#include "mtmd/schema.hpp"

namespace mtmd {

using nk::Graph;
using nk::Mode;
using nk::ParamSlot;
using nk::ParamStore;
using nk::Var;

using Rows = std::span<const Example* const>;

struct AdaptOutput {
  Var x;                    // concatenation of every reweighted field
  Var shared;               // shared-subset fields, same layout in every domain
  Var high_level;           // high-level categorical fields, before SE
  std::vector<Var> fields;  // reweighted field vectors, declaration order
  Var gates;                // SE gates in (0, 2), B x F; invalid when SE is off
};

// Domain adaptation front-end for one side: embedding lookup, batch norm of
// continuous fields keyed by domain, then SE field reweighting.
class Adapter {
 public:
  Adapter(const FeatureSchema& schema, Side side, const ModelConfig& cfg, ParamStore& params,
          const std::string& prefix)
      : side_(side), per_domain_(cfg.domain_adapt), use_se_(cfg.domain_adapt) {
    for (const FieldSpec* f : schema.fields(side)) fields_.push_back(*f);
    if (fields_.size() < 2) throw ConfigError("adapt: needs at least 2 fields per side");
    const std::size_t nc = schema.count(side, FieldKind::kContinuous);
    for (const FieldSpec& f : fields_) {
      if (!f.categorical()) continue;
      tables_.push_back(&params.add(prefix + ".emb." + f.name, f.cardinality, f.emb_dim,
                                    nk::Init::kNormal, cfg.emb_init_std, true, true));
    }
    const std::size_t groups = per_domain_ ? kNumDomains : 1;
    for (std::size_t d = 0; d < groups; ++d) {
      const std::string key =
          per_domain_ ? std::string(name(DomainKey::from_index(d).surface)) + "." +
                            std::string(name(DomainKey::from_index(d).product))
                      : "global";
      ParamSlot& m = params.add(prefix + ".bn." + key + ".mean", 1, nc, nk::Init::kZeros, 1.0, false);
      ParamSlot& v = params.add(prefix + ".bn." + key + ".var", 1, nc, nk::Init::kOnes, 1.0, false);
      bn_.push_back({&m, &v});
    }
    if (use_se_) {
      const std::size_t f = fields_.size();
      const std::size_t h = std::max<std::size_t>(1, (f + cfg.se_reduction - 1) / cfg.se_reduction);
      se_w1_ = &params.add(prefix + ".se.W1", h, f, nk::Init::kHeUniform);
      se_w2_ = &params.add(prefix + ".se.W2", f, h, nk::Init::kXavierUniform);
    }
  }

  Side side() const { return side_; }
  std::size_t num_fields() const { return fields_.size(); }

  // One vector per field in declaration order: categorical -> embedding row,
  // continuous -> 1-dim value after its domain's batch norm.
  std::vector<Var> embed_fields(Graph& g, Rows rows, Mode mode) const {
    const std::size_t n = rows.size();
    std::size_t nc = 0;
    for (const FieldSpec& f : fields_) nc += f.categorical() ? 0 : 1;

    Var normed;
    if (nc > 0) {
      // Fields a domain does not have are read as their schema default,
      // whatever the record carries.
      nk::Tensor2 raw(n, nc);
      for (std::size_t r = 0; r < n; ++r) {
        const auto& cont = rows[r]->side(side_).continuous;
        for (const FieldSpec& f : fields_) {
          if (f.categorical()) continue;
          raw(r, f.slot) = f.available_in(rows[r]->domain) ? cont[f.slot] : f.default_value;
        }
      }
      Var xc = g.constant(std::move(raw));
      std::vector<std::vector<std::size_t>> groups(bn_.size());
      for (std::size_t r = 0; r < n; ++r)
        groups[per_domain_ ? rows[r]->domain.index() : 0].push_back(r);
      std::vector<Var> parts;
      std::vector<std::vector<std::size_t>> idx;
      for (std::size_t d = 0; d < groups.size(); ++d) {
        if (groups[d].empty()) continue;
        // A train-mode group of one has no batch statistics; it is normalized
        // with the running statistics instead and leaves them untouched.
        const Mode m = (mode == Mode::kTrain && groups[d].size() >= 2) ? Mode::kTrain : Mode::kInfer;
        Var part = nk::gather_rows(g, xc, groups[d]);
        parts.push_back(nk::batch_norm(g, part, bn_[d].mean->value, bn_[d].var->value, m));
        idx.push_back(std::move(groups[d]));
      }
      normed = nk::scatter_rows(g, parts, idx, n);
    }

    std::vector<Var> out;
    out.reserve(fields_.size());
    std::size_t table = 0;
    for (const FieldSpec& f : fields_) {
      if (f.categorical()) {
        std::vector<std::size_t> ids(n);
        for (std::size_t r = 0; r < n; ++r)
          ids[r] = f.available_in(rows[r]->domain) ? rows[r]->side(side_).categorical[f.slot] : 0;
        out.push_back(nk::embedding(g, g.param(*tables_[table++]), ids));
      } else {
        out.push_back(nk::slice_cols(g, normed, f.slot, 1));
      }
    }
    return out;
  }

  // Excitation gates 2 * sigmoid(W2 relu(W1 s)), s_f = mean of field f.
  Var se_gates(Graph& g, const std::vector<Var>& fields) const {
    if (fields.size() < 2) throw ConfigError("se_block: needs at least 2 fields");
    if (!use_se_) throw ConfigError("se_block: SE is disabled for this adapter");
    std::vector<Var> squeezed;
    squeezed.reserve(fields.size());
    for (Var f : fields) squeezed.push_back(nk::row_mean(g, f));
    Var s = nk::concat_cols(g, squeezed);
    Var h = nk::relu(g, nk::linear(g, s, g.param(*se_w1_)));
    return nk::scale(g, nk::sigmoid(g, nk::linear(g, h, g.param(*se_w2_))), 2.0);
  }

  static std::vector<Var> apply_gates(Graph& g, const std::vector<Var>& fields, Var gates) {
    std::vector<Var> out;
    out.reserve(fields.size());
    for (std::size_t f = 0; f < fields.size(); ++f)
      out.push_back(nk::col_scale(g, fields[f], nk::slice_cols(g, gates, f, 1)));
    return out;
  }

  AdaptOutput adapt(Graph& g, Rows rows, Mode mode) const {
    AdaptOutput out;
    out.fields = embed_fields(g, rows, mode);
    // The high-level sub-vector is taken before reweighting: SE gates depend
    // on every field, and the shallow experts must see only these fields.
    std::vector<Var> shared, hl;
    for (std::size_t k = 0; k < fields_.size(); ++k)
      if (fields_[k].high_level) hl.push_back(out.fields[k]);
    if (use_se_) {
      out.gates = se_gates(g, out.fields);
      out.fields = apply_gates(g, out.fields, out.gates);
    }
    for (std::size_t k = 0; k < fields_.size(); ++k)
      if (fields_[k].shared) shared.push_back(out.fields[k]);
    out.x = nk::concat_cols(g, out.fields);
    out.shared = nk::concat_cols(g, shared);
    out.high_level = nk::concat_cols(g, hl);
    return out;
  }

 private:
  struct BnState {
    ParamSlot* mean;
    ParamSlot* var;
  };

  Side side_;
  bool per_domain_;
  bool use_se_;
  std::vector<FieldSpec> fields_;
  std::vector<ParamSlot*> tables_;
  std::vector<BnState> bn_;
  ParamSlot* se_w1_ = nullptr;
  ParamSlot* se_w2_ = nullptr;
};

}  // namespace mtmd
