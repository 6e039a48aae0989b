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
#include <functional>
#include <map>
#include <numeric>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "mtmd/dataset.hpp"
#include "mtmd/numkernel/adam.hpp"
#include "mtmd/towers.hpp"

namespace mtmd {

// Teacher probabilities are clamped to this range before the KL.
inline constexpr double kTeacherClamp = 1e-7;

// KL(Bernoulli(p) || Bernoulli(q)).
inline double bernoulli_kl(double p, double q) {
  double kl = 0.0;
  if (p > 0.0) kl += p * std::log(p / q);
  if (p < 1.0) kl += (1.0 - p) * std::log((1.0 - p) / (1.0 - q));
  return kl;
}

using TaskWeights = std::array<double, kNumTasks>;

enum class Optimizer { kAdam, kSgd };

// kCosine anneals lr to 0 over cfg.steps: lr * (1 + cos(pi * t / steps)) / 2.
enum class LrSchedule { kConstant, kCosine };

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch_size = 256;
  std::size_t steps = 1000;
  std::uint64_t seed = 1;
  TaskWeights task_weights{1.0, 0.5, 0.5};
  Optimizer optimizer = Optimizer::kAdam;
  LrSchedule lr_schedule = LrSchedule::kConstant;
  double downsample = 1.0;           // fraction of the training set kept
  std::size_t checkpoint_every = 0;  // 0 = never

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;

  void validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be >= 0");
    if (batch_size == 0) throw ConfigError("train.batch_size must be > 0");
    for (double w : task_weights)
      if (!(w > 0.0)) throw ConfigError("train.task weights must be > 0");
    for (double w : task_weights)
      if (task_weights[index(TaskId::kCtr)] < w)
        throw ConfigError("train.weight_ctr must be >= every other task weight");
    if (!(downsample > 0.0 && downsample <= 1.0))
      throw ConfigError("train.downsample must be in (0, 1]");
  }
};

// sum_i w_i * KL(p_i || q_i) over a B x 1 column of student probabilities q.
inline Var weighted_kl(Graph& g, Var q, nk::Tensor2 p, nk::Tensor2 w) {
  const nk::Tensor2& Q = g.value(q);
  double total = 0.0;
  for (std::size_t i = 0; i < Q.size(); ++i)
    if (w[i] != 0.0) total += w[i] * bernoulli_kl(p[i], Q[i]);
  return g.emit(nk::Tensor2(1, 1, total), {q},
                [q, p = std::move(p), w = std::move(w)](Graph& g, const nk::Tensor2& dy) {
                  const nk::Tensor2& Q = g.value(q);
                  nk::Tensor2& gq = g.grad(q);
                  for (std::size_t i = 0; i < Q.size(); ++i) {
                    if (w[i] == 0.0) continue;
                    gq[i] += dy[0] * w[i] * ((1.0 - p[i]) / (1.0 - Q[i]) - p[i] / Q[i]);
                  }
                });
}

struct BatchLoss {
  Var total;                        // 1 x 1
  std::array<double, kNumTasks> parts{};  // weighted per-task components
};

// Mean over the batch of sum_t w_t * KL(teacher_t || student_t); tasks that
// do not apply to an example (Shopping OCTR) are skipped.
inline BatchLoss loss_from_probs(Graph& g, const std::array<Var, kNumTasks>& probs, Rows rows,
                                 const TaskWeights& weights) {
  const std::size_t n = rows.size();
  if (n == 0) throw DataError("batch_loss on an empty batch");
  BatchLoss out;
  std::vector<Var> terms;
  for (TaskId t : kTasks) {
    nk::Tensor2 p(n, 1), w(n, 1);
    for (std::size_t r = 0; r < n; ++r) {
      const auto& teacher = rows[r]->teacher[index(t)];
      if (!teacher || !task_applies(t, rows[r]->domain.product)) continue;
      p[r] = std::clamp(*teacher, kTeacherClamp, 1.0 - kTeacherClamp);
      w[r] = weights[index(t)] / static_cast<double>(n);
    }
    Var term = weighted_kl(g, probs[index(t)], std::move(p), std::move(w));
    out.parts[index(t)] = g.value(term)[0];
    terms.push_back(term);
  }
  out.total = nk::add_all(g, terms);
  return out;
}

template <typename Model>
BatchLoss batch_loss(Graph& g, const Model& model, Rows rows, const TaskWeights& weights,
                     Mode mode = Mode::kTrain) {
  const TaskOutputs out = model.forward(g, rows, mode);
  return loss_from_probs(g, out.probs, rows, weights);
}

struct TrainHistory {
  std::vector<double> total;
  std::vector<std::array<double, kNumTasks>> task;
  friend bool operator==(const TrainHistory&, const TrainHistory&) = default;
};

// Plain gradient descent over the touched slots; same laziness as Adam.
class Sgd {
 public:
  explicit Sgd(double lr) : lr_(lr) {}
  void set_lr(double lr) { lr_ = lr; }
  void step(nk::ParamStore& params) {
    for (auto& [id, s] : params.slots()) {
      if (s.trainable && s.touched) s.value.mat() -= lr_ * s.grad.mat();
      if (s.touched) s.grad.set_zero();
      s.touched = false;
    }
  }

 private:
  double lr_;
};

// Seeded subset of `examples` keeping `fraction` of them, in original order.
inline std::vector<Example> downsample(const std::vector<Example>& examples, double fraction,
                                       std::uint64_t seed) {
  if (fraction >= 1.0) return examples;
  nk::Rng rng(nk::derive_seed(seed, 0xD0475A3));
  std::vector<std::size_t> idx(examples.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  idx.resize(static_cast<std::size_t>(std::llround(fraction * static_cast<double>(examples.size()))));
  std::sort(idx.begin(), idx.end());
  std::vector<Example> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(examples[i]);
  return out;
}

// Seeded epoch shuffler. A dataset no larger than one batch is served whole
// and in order every step.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch, std::uint64_t seed)
      : n_(n), batch_(std::min(batch, n)), rng_(nk::derive_seed(seed, 0x5A3B1E)), order_(n) {
    std::iota(order_.begin(), order_.end(), 0);
    pos_ = n_;
  }
  std::vector<std::size_t> next() {
    if (batch_ == n_) return order_;
    std::vector<std::size_t> out;
    out.reserve(batch_);
    while (out.size() < batch_) {
      if (pos_ == n_) {
        for (std::size_t i = n_; i > 1; --i) std::swap(order_[i - 1], order_[rng_.below(i)]);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::size_t n_, batch_;
  nk::Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

using CheckpointHook = std::function<void(std::size_t step)>;

// Mini-batch training of any model exposing forward(g, rows, mode) and params().
template <typename Model>
TrainHistory fit(Model& model, const std::vector<Example>& examples, const TrainConfig& cfg,
                 const CheckpointHook& hook = {}) {
  cfg.validate();
  if (examples.empty()) throw DataError("train: empty dataset");
  const std::vector<Example> kept = downsample(examples, cfg.downsample, cfg.seed);
  if (kept.empty()) throw DataError("train: downsampling left no examples");
  BatchSampler sampler(kept.size(), cfg.batch_size, cfg.seed);
  nk::Adam adam({cfg.lr});
  Sgd sgd(cfg.lr);
  model.params().zero_grad();
  TrainHistory h;
  std::vector<const Example*> rows;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    rows.clear();
    for (std::size_t i : sampler.next()) rows.push_back(&kept[i]);
    {
      Graph g;
      BatchLoss loss = batch_loss(g, model, rows, cfg.task_weights, Mode::kTrain);
      h.total.push_back(g.value(loss.total)[0]);
      h.task.push_back(loss.parts);
      g.backward(loss.total);
    }
    if (cfg.lr_schedule == LrSchedule::kCosine) {
      const double lr = 0.5 * cfg.lr * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) /
                                                       static_cast<double>(cfg.steps)));
      adam.set_lr(lr);
      sgd.set_lr(lr);
    }
    if (cfg.optimizer == Optimizer::kAdam) {
      adam.step(model.params());
    } else {
      sgd.step(model.params());
    }
    if (hook && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) hook(step + 1);
  }
  return h;
}

// Trains against a loaded dataset; its schema must be the model's.
inline TrainHistory train(MtmdModel& model, const Dataset& data, const TrainConfig& cfg,
                          const CheckpointHook& hook = {}) {
  if (data.schema_hash != model.schema().hash()) {
    throw ConfigError("dataset schema hash " + hash_hex(data.schema_hash) +
                      " does not match model schema " + hash_hex(model.schema().hash()));
  }
  return fit(model, data.examples, cfg, hook);
}

}  // namespace mtmd
