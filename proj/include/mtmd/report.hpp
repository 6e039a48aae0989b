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
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "mtmd/eval.hpp"

namespace mtmd {

// One machine-readable line: `record=<kind> key=value ...`. Values never
// contain spaces; reals use 17 significant digits.
class Record {
 public:
  explicit Record(std::string kind) : kind_(std::move(kind)) {}

  Record& add(const std::string& key, std::string value) {
    fields_.emplace_back(key, std::move(value));
    return *this;
  }
  Record& add(const std::string& key, std::string_view value) { return add(key, std::string(value)); }
  Record& add(const std::string& key, const char* value) { return add(key, std::string(value)); }
  Record& add(const std::string& key, double value) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    return add(key, std::string(buf));
  }
  Record& add(const std::string& key, std::size_t value) { return add(key, std::to_string(value)); }

  std::string str() const {
    std::string out = "record=" + kind_;
    for (const auto& [k, v] : fields_) out += " " + k + "=" + v;
    return out;
  }

 private:
  std::string kind_;
  std::vector<std::pair<std::string, std::string>> fields_;
};

namespace detail {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline std::string pad(std::string s, std::size_t w) {
  if (s.size() < w) s.insert(0, w - s.size(), ' ');
  return s;
}

inline std::string pad_right(std::string s, std::size_t w) {
  if (s.size() < w) s.append(w - s.size(), ' ');
  return s;
}

}  // namespace detail

inline std::string format_eval_table(const EvalReport& r) {
  using detail::pad;
  std::string out = detail::pad_right("domain", 20);
  for (TaskId t : kTasks) out += pad(std::string(name(t)) + " LogMAE", 13) + pad("n", 7);
  out += "\n";
  for (DomainKey d : all_domains()) {
    out += detail::pad_right(d.str(), 20);
    for (TaskId t : kTasks) {
      const CellStats& c = r.cell(d, t);
      out += c.count ? pad(detail::fmt("%.5f", c.log_mae()), 13) : pad("N/A", 13);
      out += pad(std::to_string(c.count), 7);
    }
    out += "\n";
  }
  out += detail::pad_right("all", 20);
  for (TaskId t : kTasks) {
    const CellStats c = r.task(t);
    out += pad(c.count ? detail::fmt("%.5f", c.log_mae()) : "N/A", 13) + pad(std::to_string(c.count), 7);
  }
  out += "\noverall LogMAE " + detail::fmt("%.5f", r.overall().log_mae()) + "  KL " +
         detail::fmt("%.6f", r.overall().kl()) + "\n";
  return out;
}

inline std::vector<Record> eval_records(const EvalReport& r) {
  std::vector<Record> out;
  for (DomainKey d : all_domains()) {
    for (TaskId t : kTasks) {
      const CellStats& c = r.cell(d, t);
      if (c.count == 0) continue;
      out.push_back(Record("eval_cell")
                        .add("surface", name(d.surface))
                        .add("product", name(d.product))
                        .add("task", name(t))
                        .add("log_mae", c.log_mae())
                        .add("kl", c.kl())
                        .add("count", c.count));
    }
  }
  for (TaskId t : kTasks) {
    const CellStats c = r.task(t);
    out.push_back(Record("eval_task").add("task", name(t)).add("log_mae", c.log_mae()).add("kl", c.kl()).add("count", c.count));
  }
  const CellStats o = r.overall();
  out.push_back(Record("eval_overall").add("log_mae", o.log_mae()).add("kl", o.kl()).add("count", o.count));
  return out;
}

inline std::string format_grid(const CompareGrid& g) {
  using detail::pad;
  std::string out = detail::pad_right("improvement %", 20);
  for (TaskId t : kTasks) out += pad(std::string(name(t)), 10);
  out += "\n";
  for (DomainKey d : all_domains()) {
    out += detail::pad_right(d.str(), 20);
    for (TaskId t : kTasks) {
      const auto& c = g[d.index()][index(t)];
      out += pad(c ? detail::fmt("%+.2f", *c) : "N/A", 10);
    }
    out += "\n";
  }
  out += "positive cells: " + std::to_string(positive_cells(g)) + " / " + std::to_string(filled_cells(g)) + "\n";
  return out;
}

inline std::vector<Record> grid_records(const CompareGrid& g) {
  std::vector<Record> out;
  for (DomainKey d : all_domains()) {
    for (TaskId t : kTasks) {
      const auto& c = g[d.index()][index(t)];
      Record r("compare_cell");
      r.add("surface", name(d.surface)).add("product", name(d.product)).add("task", name(t));
      if (c) r.add("improvement_pct", *c);
      else r.add("improvement_pct", "NA");
      out.push_back(std::move(r));
    }
  }
  out.push_back(Record("compare_summary").add("positive", positive_cells(g)).add("filled", filled_cells(g)));
  return out;
}

inline std::string format_ablation(const AblationReport& r, const std::vector<AblationVariant>& variants) {
  using detail::pad;
  std::string out = detail::pad_right("variant", 18) + pad("median delta %", 16) + pad("median LogMAE", 15) + "  per-seed delta %\n";
  for (AblationVariant v : variants) {
    if (r.of(v).empty()) continue;
    out += detail::pad_right(std::string(name(v)), 18) + pad(detail::fmt("%+.3f", r.median_delta(v)), 16) +
           pad(detail::fmt("%.5f", r.median_log_mae(v)), 15) + " ";
    for (const AblationRun* run : r.of(v)) out += " " + detail::fmt("%+.3f", run->delta_pct);
    out += "\n";
  }
  return out;
}

inline std::vector<Record> ablation_records(const AblationReport& r) {
  std::vector<Record> out;
  for (const AblationRun& run : r.runs) {
    out.push_back(Record("ablation_run")
                      .add("variant", name(run.variant))
                      .add("seed", static_cast<std::size_t>(run.seed))
                      .add("log_mae", run.log_mae)
                      .add("delta_pct", run.delta_pct));
  }
  std::vector<AblationVariant> seen;
  for (const AblationRun& run : r.runs) {
    if (std::find(seen.begin(), seen.end(), run.variant) != seen.end()) continue;
    seen.push_back(run.variant);
    out.push_back(Record("ablation_median")
                      .add("variant", name(run.variant))
                      .add("delta_pct", r.median_delta(run.variant))
                      .add("log_mae", r.median_log_mae(run.variant)));
  }
  return out;
}

}  // namespace mtmd
