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

#include "mtmd/adapt.hpp"
#include "mtmd/model_config.hpp"
#include "mtmd/numkernel/ops.hpp"

namespace mtmd {

// Stack of fully connected layers. `norm_act` layers are
// linear -> layer norm -> leaky relu; the others are a bare linear map.
class Ffn {
 public:
  enum class Style {
    kDeep,     // every layer linear -> layer norm -> leaky relu
    kShallow,  // same, except the last layer is a bare linear projection
    kGate,     // linear -> leaky relu, last layer bare linear
  };

  Ffn() = default;
  Ffn(ParamStore& params, const std::string& prefix, std::size_t in_dim,
      const std::vector<std::size_t>& dims, Style style, const ModelConfig& cfg)
      : slope_(cfg.leaky_slope) {
    std::size_t in = in_dim;
    for (std::size_t l = 0; l < dims.size(); ++l) {
      const bool last = l + 1 == dims.size();
      const std::string p = prefix + ".layer" + std::to_string(l);
      Layer layer;
      layer.norm = style != Style::kGate && !(last && style == Style::kShallow);
      layer.act = !(last && style != Style::kDeep);
      nk::Init init = nk::Init::kHeUniform;
      double gain = 1.0;
      if (style == Style::kGate) init = nk::Init::kXavierUniform;
      if (last && style == Style::kShallow) {
        init = nk::Init::kXavierUniform;
        gain = cfg.head_init_gain;
      }
      layer.w = &params.add(p + ".W", dims[l], in, init, gain);
      layer.b = &params.add(p + ".b", 1, dims[l], nk::Init::kZeros);
      if (layer.norm) {
        layer.gamma = &params.add(p + ".gamma", 1, dims[l], nk::Init::kOnes);
        layer.beta = &params.add(p + ".beta", 1, dims[l], nk::Init::kZeros);
      }
      layers_.push_back(layer);
      in = dims[l];
    }
    out_dim_ = in;
  }

  std::size_t out_dim() const { return out_dim_; }

  Var forward(Graph& g, Var x) const {
    for (const Layer& l : layers_) {
      x = nk::linear(g, x, g.param(*l.w), g.param(*l.b));
      if (l.norm) x = nk::layer_norm(g, x, g.param(*l.gamma), g.param(*l.beta));
      if (l.act) x = nk::leaky_relu(g, x, slope_);
    }
    return x;
  }

 private:
  struct Layer {
    ParamSlot* w = nullptr;
    ParamSlot* b = nullptr;
    ParamSlot* gamma = nullptr;
    ParamSlot* beta = nullptr;
    bool norm = false;
    bool act = false;
  };
  std::vector<Layer> layers_;
  std::size_t out_dim_ = 0;
  double slope_ = 0.2;
};

// Low-rank cross network: x_{l+1} = x0 * (U_l (V_l^T x_l) + b_l) + x_l.
class Dcn {
 public:
  Dcn() = default;
  Dcn(ParamStore& params, const std::string& prefix, std::size_t dim, std::size_t rank,
      std::size_t layers) {
    for (std::size_t l = 0; l < layers; ++l) {
      const std::string p = prefix + ".layer" + std::to_string(l);
      layers_.push_back({&params.add(p + ".U", dim, rank, nk::Init::kXavierUniform),
                         &params.add(p + ".V", dim, rank, nk::Init::kXavierUniform),
                         &params.add(p + ".b", 1, dim, nk::Init::kZeros)});
    }
  }

  std::size_t depth() const { return layers_.size(); }

  Var forward(Graph& g, Var x0) const {
    Var x = x0;
    for (const Layer& l : layers_) {
      Var low = nk::matmul(g, x, g.param(*l.v));                  // B x r
      Var cross = nk::linear(g, low, g.param(*l.u), g.param(*l.b));  // B x d
      x = nk::add(g, nk::mul(g, x0, cross), x);
    }
    return x;
  }

 private:
  struct Layer {
    ParamSlot* u;
    ParamSlot* v;
    ParamSlot* b;
  };
  std::vector<Layer> layers_;
};

struct Routed {
  Var mixed;    // B x d
  Var weights;  // B x kNumExperts, rows on the simplex
};

// Softmax gate over expert outputs: w = softmax(gate(x)); sum_e w_e * outs_e.
inline Routed route_and_mix(Graph& g, Var x, const std::array<Var, kNumExperts>& outs,
                            const Ffn& gate) {
  Routed r;
  r.weights = nk::softmax_rows(g, gate.forward(g, x));
  std::vector<Var> terms;
  for (std::size_t e = 0; e < kNumExperts; ++e)
    terms.push_back(nk::col_scale(g, outs[e], nk::slice_cols(g, r.weights, e, 1)));
  r.mixed = nk::add_all(g, terms);
  return r;
}

struct ExpertOutput {
  std::array<Var, kNumTasks> deep;     // emb_deep per task, B x d_task
  std::array<Var, kNumTasks> shallow;  // emb_shallow per task, B x 64
  std::array<Var, kNumTasks> gate_weights;
};

// One Domain Expert: per task a deep and a shallow expert, a gate, a layer
// norm + cross network, and an embedding head; plus one task-shared expert.
// The domain-shared expert belongs to the tower and is passed in evaluated.
class DomainExpert {
 public:
  DomainExpert(ParamStore& params, const std::string& prefix, Side side, std::size_t key,
               std::size_t in_dim, std::size_t hl_dim, const ModelConfig& cfg)
      : side_(side), key_(key), cfg_(cfg) {
    task_shared_ = Ffn(params, prefix + ".task_shared", in_dim, cfg.deep_dims, Ffn::Style::kDeep, cfg);
    const std::size_t d = cfg.mix_dim();
    for (TaskId t : kTasks) {
      const std::string tn(name(t));
      Branch& b = branches_[index(t)];
      b.deep = Ffn(params, prefix + ".deep." + tn, in_dim, cfg.deep_dims, Ffn::Style::kDeep, cfg);
      b.shallow = Ffn(params, prefix + ".shallow." + tn, hl_dim, cfg.shallow_dims,
                      Ffn::Style::kShallow, cfg);
      std::vector<std::size_t> gate_dims = cfg.gate_dims;
      gate_dims.push_back(kNumExperts);
      b.gate = Ffn(params, prefix + ".gate." + tn, in_dim, gate_dims, Ffn::Style::kGate, cfg);
      b.norm_gamma = &params.add(prefix + ".norm." + tn + ".gamma", 1, d, nk::Init::kOnes);
      b.norm_beta = &params.add(prefix + ".norm." + tn + ".beta", 1, d, nk::Init::kZeros);
      if (cfg.dcn) b.dcn = Dcn(params, prefix + ".dcn." + tn, d, cfg.dcn_rank, cfg.dcn_layers);
      b.head_w = &params.add(prefix + ".head." + tn + ".W", cfg.task_dims[index(t)], d,
                             nk::Init::kXavierUniform, cfg.head_init_gain);
      b.head_b = &params.add(prefix + ".head." + tn + ".b", 1, cfg.task_dims[index(t)],
                             nk::Init::kZeros);
    }
  }

  Side side() const { return side_; }
  std::size_t key() const { return key_; }

  // Surface index on the query side, product index on the item side.
  std::size_t key_of(const DomainKey& d) const {
    return side_ == Side::kQuery ? index(d.surface) : index(d.product);
  }

  // x: adapted rows of this expert's domain; domain_shared: the tower's
  // domain-shared expert output for the same rows; x_hl: high-level fields.
  ExpertOutput forward(Graph& g, Rows rows, Var x, Var domain_shared, Var x_hl) const {
    for (const Example* ex : rows) {
      if (key_of(ex->domain) != key_) {
        throw RoutingError("domain expert " + std::to_string(key_) + " on the " +
                           std::string(name(side_)) + " side received an example of domain " +
                           ex->domain.str());
      }
    }
    ExpertOutput out;
    Var shared = task_shared_.forward(g, x);
    for (TaskId t : kTasks) {
      const Branch& b = branches_[index(t)];
      Routed r = route_and_mix(g, x, {b.deep.forward(g, x), shared, domain_shared}, b.gate);
      Var z = r.mixed;
      if (cfg_.pre_norm) z = nk::layer_norm(g, z, g.param(*b.norm_gamma), g.param(*b.norm_beta));
      if (cfg_.dcn) z = b.dcn.forward(g, z);
      if (!cfg_.pre_norm) z = nk::layer_norm(g, z, g.param(*b.norm_gamma), g.param(*b.norm_beta));
      out.deep[index(t)] = nk::linear(g, z, g.param(*b.head_w), g.param(*b.head_b));
      out.shallow[index(t)] = b.shallow.forward(g, x_hl);
      out.gate_weights[index(t)] = r.weights;
    }
    return out;
  }

 private:
  struct Branch {
    Ffn deep, shallow, gate;
    ParamSlot* norm_gamma = nullptr;
    ParamSlot* norm_beta = nullptr;
    Dcn dcn;
    ParamSlot* head_w = nullptr;
    ParamSlot* head_b = nullptr;
  };

  Side side_;
  std::size_t key_;
  ModelConfig cfg_;
  Ffn task_shared_;
  std::array<Branch, kNumTasks> branches_;
};

}  // namespace mtmd
