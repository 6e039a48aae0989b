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
#include <cmath>
#include <cstdint>
#include <vector>

#include "mtmd/numkernel/ops.hpp"
#include "mtmd/numkernel/rng.hpp"
#include "mtmd/schema.hpp"

namespace mtmd {

struct WorldConfig {
  std::uint64_t seed = 1;
  double alpha = 0.6;            // weight of the cross-domain shared component
  std::size_t hidden = 32;       // hidden width of every teacher network
  std::size_t cat_effect_dim = 2;
  double base_scale = 0.6;       // output stddev of each per-domain CTR network
  double shared_scale = 1.0;     // output stddev of the shared CTR network
  double cond_scale = 0.8;       // output stddev of the conditional networks
  friend bool operator==(const WorldConfig&, const WorldConfig&) = default;
};

inline constexpr double kTeacherFloor = 1e-4;

// Synthetic stand-in for the heavyweight ranker. It also owns the per-domain
// feature distributions, so the generator and the teacher agree on what a
// "typical" value is in each domain.
class TeacherOracle {
 public:
  TeacherOracle(const FeatureSchema& schema, WorldConfig cfg) : schema_(schema), cfg_(cfg) {
    nk::Rng rng(nk::derive_seed(cfg.seed, 0x7EAC4E5));
    const auto& fields = schema.fields();
    input_dim_ = 0;
    for (const auto& f : fields) input_dim_ += f.categorical() ? cfg.cat_effect_dim : 1;

    // Domain-specific location/scale of every continuous field.
    for (std::size_t d = 0; d < kNumDomains; ++d) {
      mu_[d].resize(fields.size());
      sigma_[d].resize(fields.size());
      for (std::size_t k = 0; k < fields.size(); ++k) {
        mu_[d][k] = rng.uniform(-3.0, 3.0);
        sigma_[d][k] = std::exp(rng.uniform(std::log(0.3), std::log(4.0)));
      }
    }
    effects_.resize(fields.size());
    for (std::size_t k = 0; k < fields.size(); ++k) {
      if (!fields[k].categorical()) continue;
      effects_[k].resize(fields[k].cardinality * cfg.cat_effect_dim);
      for (double& e : effects_[k]) e = rng.normal();
    }
    for (std::size_t d = 0; d < kNumDomains; ++d) {
      base_[d] = make_net(rng, cfg.base_scale);
      ctr_offset_[d] = rng.uniform(-3.5, -2.0);
      gctr_offset_[d] = -0.8 + rng.uniform(-0.3, 0.3);
      octr_offset_[d] = -1.2 + rng.uniform(-0.3, 0.3);
    }
    shared_ = make_net(rng, cfg.shared_scale);
    gctr_ = make_net(rng, cfg.cond_scale);
    octr_ = make_net(rng, cfg.cond_scale);
  }

  const WorldConfig& config() const { return cfg_; }
  const FeatureSchema& schema() const { return schema_; }

  // Per-domain distribution of continuous field `k` (global declaration index).
  double mean(const DomainKey& d, std::size_t k) const { return mu_[d.index()][k]; }
  double stddev(const DomainKey& d, std::size_t k) const { return sigma_[d.index()][k]; }

  // Standardized continuous values and categorical effect vectors in field
  // declaration order; unavailable fields contribute zeros.
  std::vector<double> teacher_input(const Example& ex) const {
    std::vector<double> u;
    u.reserve(input_dim_);
    const auto& fields = schema_.fields();
    for (std::size_t k = 0; k < fields.size(); ++k) {
      const FieldSpec& f = fields[k];
      const bool on = f.available_in(ex.domain);
      if (f.categorical()) {
        const std::uint32_t v = ex.side(f.side).categorical[f.slot];
        for (std::size_t j = 0; j < cfg_.cat_effect_dim; ++j)
          u.push_back(on ? effects_[k][v * cfg_.cat_effect_dim + j] : 0.0);
      } else {
        const double x = ex.side(f.side).continuous[f.slot];
        u.push_back(on ? (x - mean(ex.domain, k)) / stddev(ex.domain, k) : 0.0);
      }
    }
    return u;
  }

  double ctr_logit(const Example& ex) const {
    const auto u = teacher_input(ex);
    const std::size_t d = ex.domain.index();
    return ctr_offset_[d] + base_[d].eval(u) + cfg_.alpha * shared_.eval(u);
  }

  // p_CTR = squash(base_d(x) + alpha * shared(x));
  // p_GCTR = p_CTR * sigmoid(g_GCTR(x)); p_OCTR likewise, standard ads only.
  TeacherScores score(const Example& ex) const {
    const auto u = teacher_input(ex);
    const std::size_t d = ex.domain.index();
    const double ctr = squash(nk::sigmoid(ctr_offset_[d] + base_[d].eval(u) +
                                          cfg_.alpha * shared_.eval(u)));
    TeacherScores t;
    t[index(TaskId::kCtr)] = ctr;
    t[index(TaskId::kGctr)] =
        std::clamp(ctr * nk::sigmoid(gctr_offset_[d] + gctr_.eval(u)), kTeacherFloor, ctr);
    if (task_applies(TaskId::kOctr, ex.domain.product)) {
      t[index(TaskId::kOctr)] =
          std::clamp(ctr * nk::sigmoid(octr_offset_[d] + octr_.eval(u)), kTeacherFloor, ctr);
    }
    return t;
  }

  static double squash(double p) { return std::clamp(p, kTeacherFloor, 1.0 - kTeacherFloor); }

 private:
  // sum_h v_h * tanh(a_h . u + c_h)
  struct Net {
    std::size_t in = 0;
    std::vector<double> a, c, v;
    double eval(const std::vector<double>& u) const {
      double out = 0.0;
      for (std::size_t h = 0; h < v.size(); ++h) {
        double z = c[h];
        for (std::size_t j = 0; j < in; ++j) z += a[h * in + j] * u[j];
        out += v[h] * std::tanh(z);
      }
      return out;
    }
  };

  Net make_net(nk::Rng& rng, double out_scale) const {
    Net n;
    const std::size_t h = cfg_.hidden;
    n.in = input_dim_;
    n.a.resize(h * input_dim_);
    n.c.resize(h);
    n.v.resize(h);
    const double a_std = 1.5 / std::sqrt(static_cast<double>(input_dim_));
    for (double& x : n.a) x = a_std * rng.normal();
    for (double& x : n.c) x = 0.5 * rng.normal();
    // var(tanh(N(0, 1.5^2))) is about 0.6; scale v so the output has stddev out_scale.
    const double v_std = out_scale / std::sqrt(0.6 * static_cast<double>(h));
    for (double& x : n.v) x = v_std * rng.normal();
    return n;
  }

  FeatureSchema schema_;
  WorldConfig cfg_;
  std::size_t input_dim_ = 0;
  std::array<std::vector<double>, kNumDomains> mu_, sigma_;
  std::vector<std::vector<double>> effects_;
  std::array<Net, kNumDomains> base_;
  std::array<double, kNumDomains> ctr_offset_{}, gctr_offset_{}, octr_offset_{};
  Net shared_, gctr_, octr_;
};

}  // namespace mtmd
