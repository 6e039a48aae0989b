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
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mtmd/baseline.hpp"
#include "mtmd/trainer.hpp"

namespace mtmd {

// mean |ln(pred) - ln(teacher)|
inline double log_mae(std::span<const double> preds, std::span<const double> teachers) {
  if (preds.empty()) throw DataError("log_mae: empty input");
  if (preds.size() != teachers.size()) throw DataError("log_mae: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) s += std::abs(std::log(preds[i]) - std::log(teachers[i]));
  return s / static_cast<double>(preds.size());
}

// Positive when `now` has lower LogMAE than `base`.
inline double improvement_pct(double base, double now) {
  if (base == 0.0) throw DataError("improvement_pct: base LogMAE is 0");
  return 100.0 * (base - now) / base;
}

inline constexpr std::size_t kEvalChunk = 256;

struct CellStats {
  double abs_log_sum = 0.0;
  double kl_sum = 0.0;
  std::size_t count = 0;
  double log_mae() const { return count ? abs_log_sum / static_cast<double>(count) : 0.0; }
  double kl() const { return count ? kl_sum / static_cast<double>(count) : 0.0; }
};

struct EvalReport {
  std::array<std::array<CellStats, kNumTasks>, kNumDomains> cells{};

  const CellStats& cell(DomainKey d, TaskId t) const { return cells[d.index()][index(t)]; }
  CellStats& cell(DomainKey d, TaskId t) { return cells[d.index()][index(t)]; }

  CellStats task(TaskId t) const {
    CellStats s;
    for (const auto& row : cells) {
      s.abs_log_sum += row[index(t)].abs_log_sum;
      s.kl_sum += row[index(t)].kl_sum;
      s.count += row[index(t)].count;
    }
    return s;
  }
  // Every (example, applicable task) pair weighted equally.
  CellStats overall() const {
    CellStats s;
    for (TaskId t : kTasks) {
      const CellStats c = task(t);
      s.abs_log_sum += c.abs_log_sum;
      s.kl_sum += c.kl_sum;
      s.count += c.count;
    }
    return s;
  }
  std::size_t total_count() const { return overall().count; }

  void merge(const EvalReport& other) {
    for (std::size_t d = 0; d < kNumDomains; ++d)
      for (std::size_t t = 0; t < kNumTasks; ++t) {
        cells[d][t].abs_log_sum += other.cells[d][t].abs_log_sum;
        cells[d][t].kl_sum += other.cells[d][t].kl_sum;
        cells[d][t].count += other.cells[d][t].count;
      }
  }
};

// Inference-mode probabilities of `model` over `examples`, reduced chunk by
// chunk in a fixed order.
template <typename Model>
EvalReport evaluate(const Model& model, const std::vector<Example>& examples) {
  EvalReport report;
  for (std::size_t start = 0; start < examples.size(); start += kEvalChunk) {
    const std::size_t end = std::min(examples.size(), start + kEvalChunk);
    std::vector<const Example*> rows;
    for (std::size_t i = start; i < end; ++i) rows.push_back(&examples[i]);
    Graph g(false);
    const TaskOutputs out = model.forward(g, rows, Mode::kInfer);
    EvalReport chunk;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (TaskId t : kTasks) {
        const auto& teacher = rows[r]->teacher[index(t)];
        if (!teacher || !task_applies(t, rows[r]->domain.product)) continue;
        const double p = std::clamp(*teacher, kTeacherClamp, 1.0 - kTeacherClamp);
        const double q = g.value(out.probs[index(t)])[r];
        CellStats& c = chunk.cell(rows[r]->domain, t);
        c.abs_log_sum += std::abs(std::log(q) - std::log(p));
        c.kl_sum += bernoulli_kl(p, q);
        c.count += 1;
      }
    }
    report.merge(chunk);
  }
  return report;
}

// Each domain's examples scored by that domain's baseline.
inline EvalReport evaluate_baselines(const BaselineSet& set, const std::vector<Example>& examples) {
  EvalReport report;
  for (const auto& [d, model] : set.models) report.merge(evaluate(*model, domain_slice(examples, d)));
  return report;
}

// 6 x 3 improvement grid; cells where the task does not apply (or either
// side has no examples) are empty.
using CompareGrid = std::array<std::array<std::optional<double>, kNumTasks>, kNumDomains>;

inline CompareGrid compare_reports(const EvalReport& unified, const EvalReport& reference) {
  CompareGrid grid;
  for (DomainKey d : all_domains()) {
    for (TaskId t : kTasks) {
      if (!task_applies(t, d.product)) continue;
      const CellStats& u = unified.cell(d, t);
      const CellStats& r = reference.cell(d, t);
      if (u.count == 0 || r.count == 0) continue;
      grid[d.index()][index(t)] = improvement_pct(r.log_mae(), u.log_mae());
    }
  }
  return grid;
}

inline CompareGrid compare_unified_vs_baselines(const MtmdModel& mtmd, const BaselineSet& baselines,
                                                const std::vector<Example>& eval) {
  return compare_reports(evaluate(mtmd, eval), evaluate_baselines(baselines, eval));
}

inline std::size_t positive_cells(const CompareGrid& grid) {
  std::size_t n = 0;
  for (const auto& row : grid)
    for (const auto& c : row) n += c && *c > 0.0;
  return n;
}

inline std::size_t filled_cells(const CompareGrid& grid) {
  std::size_t n = 0;
  for (const auto& row : grid)
    for (const auto& c : row) n += c.has_value();
  return n;
}

// ---------------------------------------------------------------------------
// Ablations: each variant changes exactly one factor of the full model.

enum class AblationVariant {
  kFull,
  kNoDomainAdapt,
  kNoDcn,
  kPostNorm,
  kDownsample50,
  kEmbDim64,
  kEmbDim48,
  kEmbDim32,
  kUnconstrained,
};

inline constexpr std::array<AblationVariant, 9> kAllVariants = {
    AblationVariant::kFull,     AblationVariant::kNoDomainAdapt, AblationVariant::kNoDcn,
    AblationVariant::kPostNorm, AblationVariant::kDownsample50,  AblationVariant::kEmbDim64,
    AblationVariant::kEmbDim48, AblationVariant::kEmbDim32,      AblationVariant::kUnconstrained};

inline std::string_view name(AblationVariant v) {
  switch (v) {
    case AblationVariant::kFull: return "full";
    case AblationVariant::kNoDomainAdapt: return "no_domain_adapt";
    case AblationVariant::kNoDcn: return "no_dcn";
    case AblationVariant::kPostNorm: return "post_norm";
    case AblationVariant::kDownsample50: return "downsample_50";
    case AblationVariant::kEmbDim64: return "emb_dim_64";
    case AblationVariant::kEmbDim48: return "emb_dim_48";
    case AblationVariant::kEmbDim32: return "emb_dim_32";
    case AblationVariant::kUnconstrained: return "unconstrained";
  }
  return "?";
}

inline std::optional<AblationVariant> parse_variant(std::string_view s) {
  for (AblationVariant v : kAllVariants)
    if (name(v) == s) return v;
  return std::nullopt;
}

// The full model uses uniform 64-dim task embeddings, so emb_dim_64 is the
// full model itself.
inline void apply_variant(AblationVariant v, ModelConfig& m, TrainConfig& t) {
  switch (v) {
    case AblationVariant::kFull: break;
    case AblationVariant::kNoDomainAdapt: m.domain_adapt = false; break;
    case AblationVariant::kNoDcn: m.dcn = false; break;
    case AblationVariant::kPostNorm: m.pre_norm = false; break;
    case AblationVariant::kDownsample50: t.downsample = 0.5; break;
    case AblationVariant::kEmbDim64: m.task_dims = uniform_task_dims(64); break;
    case AblationVariant::kEmbDim48: m.task_dims = uniform_task_dims(48); break;
    case AblationVariant::kEmbDim32: m.task_dims = uniform_task_dims(32); break;
    case AblationVariant::kUnconstrained: m.constrained = false; break;
  }
}

struct AblationRun {
  AblationVariant variant;
  std::uint64_t seed;
  EvalReport report;
  double log_mae = 0.0;    // overall
  double delta_pct = 0.0;  // improvement of full over this variant
};

struct AblationReport {
  std::vector<AblationRun> runs;

  std::vector<const AblationRun*> of(AblationVariant v) const {
    std::vector<const AblationRun*> out;
    for (const auto& r : runs)
      if (r.variant == v) out.push_back(&r);
    return out;
  }
  double median_delta(AblationVariant v) const;
  double median_log_mae(AblationVariant v) const;
  double median_task_log_mae(AblationVariant v, TaskId t) const;
};

inline double median(std::vector<double> v) {
  if (v.empty()) throw DataError("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double AblationReport::median_delta(AblationVariant v) const {
  std::vector<double> d;
  for (const auto* r : of(v)) d.push_back(r->delta_pct);
  return median(d);
}
inline double AblationReport::median_log_mae(AblationVariant v) const {
  std::vector<double> d;
  for (const auto* r : of(v)) d.push_back(r->log_mae);
  return median(d);
}
inline double AblationReport::median_task_log_mae(AblationVariant v, TaskId t) const {
  std::vector<double> d;
  for (const auto* r : of(v)) d.push_back(r->report.task(t).log_mae());
  return median(d);
}

using ProgressHook = std::function<void(const AblationRun&)>;

// Trains the full model and every requested variant for each seed on the same
// data; seeds drive parameter init and batch order.
inline AblationReport run_ablation(std::vector<AblationVariant> variants, const FeatureSchema& schema,
                                   const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                                   const std::vector<Example>& train, const std::vector<Example>& eval,
                                   const std::vector<std::uint64_t>& seeds,
                                   const ProgressHook& progress = {}) {
  if (seeds.empty()) throw ConfigError("ablation: needs at least one seed");
  variants.erase(std::remove(variants.begin(), variants.end(), AblationVariant::kFull), variants.end());
  AblationReport report;
  for (std::uint64_t seed : seeds) {
    auto configs = [&](AblationVariant v) {
      ModelConfig m = model_cfg;
      TrainConfig t = train_cfg;
      t.seed = seed;
      apply_variant(v, m, t);
      return std::pair{m, t};
    };
    auto run = [&](AblationVariant v) {
      auto [m, t] = configs(v);
      MtmdModel model(schema, m, nk::derive_seed(seed, 0x1217));
      fit(model, train, t);
      AblationRun r{v, seed, evaluate(model, eval)};
      r.log_mae = r.report.overall().log_mae();
      return r;
    };
    AblationRun full = run(AblationVariant::kFull);
    if (progress) progress(full);
    report.runs.push_back(full);
    for (AblationVariant v : variants) {
      // A variant that leaves the full configuration unchanged (emb_dim_64
      // with the default dims) is the full run under another name.
      AblationRun r = configs(v) == configs(AblationVariant::kFull) ? full : run(v);
      r.variant = v;
      r.delta_pct = improvement_pct(r.log_mae, full.log_mae);
      if (progress) progress(r);
      report.runs.push_back(std::move(r));
    }
  }
  return report;
}

}  // namespace mtmd
