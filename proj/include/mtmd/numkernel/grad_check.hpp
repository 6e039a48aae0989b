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
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "mtmd/numkernel/graph.hpp"
#include "mtmd/numkernel/ops.hpp"
#include "mtmd/numkernel/params.hpp"
#include "mtmd/numkernel/rng.hpp"

namespace mtmd::nk {

// A differentiable unit under test: builds its output from `input` (which may
// be an empty tensor when the block has no tensor input) and from parameters
// registered in the ParamStore handed to grad_check.
using Block = std::function<Var(Graph&, Var input)>;

struct GradCheckOptions {
  double h = 1e-5;
  // 0 checks every coordinate; otherwise a seeded sample of this many
  // coordinates per tensor.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
  bool check_input = true;
  // When > 0, each estimate is compared with the one at h/2; while they
  // disagree (a kink inside the step) h is halved, at most this many times.
  // Never looks at the analytic gradient.
  std::size_t max_halvings = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst;  // "<param id>[index]" or "input[index]"
  std::size_t coords = 0;
};

inline double grad_rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

// Central finite differences against the analytic gradient of
// L = sum(R * block(input)) for a fixed Gaussian R.
inline GradCheckReport grad_check(ParamStore& params, const Block& block, const Tensor2& input,
                                  GradCheckOptions opt = {}) {
  Rng rng(opt.seed);
  params.zero_grad();
  // Non-trainable state (batch norm running stats) moves on every train-mode
  // forward; every evaluation starts from the same snapshot.
  std::vector<std::pair<ParamSlot*, Tensor2>> state;
  for (auto& [id, slot] : params.slots())
    if (!slot.trainable) state.emplace_back(&slot, slot.value);
  auto restore = [&] {
    for (auto& [slot, v] : state) slot->value = v;
  };

  Tensor2 weights;
  Tensor2 input_grad;
  {
    restore();
    Graph g;
    Var in = input.empty() ? g.constant(input) : g.input(input);
    Var out = block(g, in);
    weights = Tensor2(g.value(out).rows(), g.value(out).cols());
    for (double& w : weights.values()) w = rng.normal();
    Var loss = dot_const(g, out, weights);
    g.backward(loss);
    if (!input.empty() && g.has_grad(in)) input_grad = g.grad(in);
  }
  if (input_grad.empty()) input_grad = Tensor2(input.rows(), input.cols());

  Tensor2 probe = input;
  auto eval = [&]() {
    restore();
    Graph g(false);
    Var in = g.constant(probe);
    Var out = block(g, in);
    return g.value(out).mat().cwiseProduct(weights.mat()).sum();
  };

  auto pick = [&](std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (opt.max_coords_per_tensor == 0 || n <= opt.max_coords_per_tensor) return idx;
    for (std::size_t i = 0; i < opt.max_coords_per_tensor; ++i) {
      std::swap(idx[i], idx[i + rng.below(n - i)]);
    }
    idx.resize(opt.max_coords_per_tensor);
    std::sort(idx.begin(), idx.end());
    return idx;
  };

  GradCheckReport report;
  auto record = [&](double ga, double gn, const std::string& where) {
    const double e = grad_rel_error(ga, gn);
    if (report.coords++ == 0 || e > report.max_rel_error) {
      report.max_rel_error = e;
      report.worst = where;
    }
  };

  auto central = [&](double& x, double h) {
    const double saved = x;
    x = saved + h;
    const double fp = eval();
    x = saved - h;
    const double fm = eval();
    x = saved;
    return (fp - fm) / (2.0 * h);
  };
  auto numeric = [&](double& x) {
    double h = opt.h;
    double d = central(x, h);
    for (std::size_t k = 0; k < opt.max_halvings; ++k) {
      const double half = central(x, h / 2.0);
      const bool agree = std::abs(d - half) <= 1e-5 * (std::abs(d) + std::abs(half)) + 1e-11;
      if (agree) break;
      d = half;
      h /= 2.0;
    }
    return d;
  };

  for (auto& [id, slot] : params.slots()) {
    if (!slot.trainable) continue;
    const Tensor2 analytic = slot.grad;
    for (std::size_t i : pick(slot.value.size()))
      record(analytic[i], numeric(slot.value[i]), id + "[" + std::to_string(i) + "]");
  }
  if (opt.check_input && !input.empty()) {
    for (std::size_t i : pick(input.size()))
      record(input_grad[i], numeric(probe[i]), "input[" + std::to_string(i) + "]");
  }
  restore();
  params.zero_grad();
  return report;
}

}  // namespace mtmd::nk
