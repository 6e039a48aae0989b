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

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mtmd/dataset.hpp"
#include "mtmd/errors.hpp"
#include "mtmd/eval.hpp"
#include "mtmd/model_config.hpp"
#include "mtmd/schema.hpp"
#include "mtmd/teacher.hpp"
#include "mtmd/trainer.hpp"

namespace mtmd {

// ---------------------------------------------------------------------------
// INI-style text: `[section]` headers, `key = value` lines, `#` comments.

struct IniEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

struct IniSection {
  std::string name;
  std::size_t line = 0;
  std::vector<IniEntry> entries;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string config_error_at(std::size_t line, const std::string& msg) {
  return "config line " + std::to_string(line) + ": " + msg;
}

}  // namespace detail

// Lines before the first header land in a section named "" (only allowed
// to hold nothing).
inline std::vector<IniSection> parse_ini(std::string_view text) {
  std::vector<IniSection> out;
  std::size_t lineno = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3)
        throw ConfigError(detail::config_error_at(lineno, "malformed section header"));
      out.push_back({std::string(detail::trim(line.substr(1, line.size() - 2))), lineno, {}});
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(detail::config_error_at(lineno, "expected `key = value`"));
    const std::string key(detail::trim(line.substr(0, eq)));
    if (key.empty()) throw ConfigError(detail::config_error_at(lineno, "empty key"));
    if (out.empty())
      throw ConfigError(detail::config_error_at(lineno, "key '" + key + "' outside any section"));
    for (const IniEntry& e : out.back().entries)
      if (e.key == key)
        throw ConfigError(detail::config_error_at(lineno, "duplicate key '" + key + "'"));
    out.back().entries.push_back({key, std::string(detail::trim(line.substr(eq + 1))), lineno});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Typed configuration of a whole run.

struct DataConfig {
  std::size_t n_train = 50000;
  std::size_t n_eval = 10000;
  DomainMix mix = uniform_mix();
  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct AblateConfig {
  std::vector<AblationVariant> variants{kAllVariants.begin(), kAllVariants.end()};
  std::size_t seeds = 3;
  std::size_t steps = 0;  // 0 = train.steps
  friend bool operator==(const AblateConfig&, const AblateConfig&) = default;
};

struct RunConfig {
  std::uint64_t seed = 1;
  ModelConfig model;
  TrainConfig train;
  WorldConfig world;
  DataConfig data;
  AblateConfig ablate;
  FeatureSchema schema = make_default_schema();

  void validate() const {
    model.validate();
    train.validate();
    schema.validate();
    validate_mix(data.mix);
    if (!(world.alpha >= 0.0 && world.alpha <= 1.0)) throw ConfigError("world.alpha must be in [0, 1]");
    if (world.hidden == 0) throw ConfigError("world.hidden must be > 0");
    if (ablate.seeds == 0) throw ConfigError("ablate.seeds must be >= 1");
  }
};

namespace detail {

class ValueReader {
 public:
  ValueReader(const IniSection& sec, const IniEntry& e) : sec_(sec), e_(e) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError(config_error_at(e_.line, "[" + sec_.name + "] " + e_.key + ": " + what +
                                                   " (got '" + e_.value + "')"));
  }

  template <typename T>
  T number(std::string_view s) const {
    T v{};
    s = trim(s);
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) fail("expected a number");
    return v;
  }
  template <typename T>
  T number() const {
    return number<T>(e_.value);
  }
  std::size_t size() const { return number<std::size_t>(); }
  double real() const { return number<double>(); }
  std::uint64_t u64() const { return number<std::uint64_t>(); }

  bool boolean() const {
    if (e_.value == "true") return true;
    if (e_.value == "false") return false;
    fail("expected true or false");
  }

  std::vector<std::string_view> list() const {
    std::vector<std::string_view> out;
    std::string_view s = e_.value;
    while (true) {
      const auto comma = s.find(',');
      out.push_back(trim(s.substr(0, comma)));
      if (comma == std::string_view::npos) break;
      s = s.substr(comma + 1);
    }
    return out;
  }

  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> out;
    for (auto item : list()) out.push_back(number<std::size_t>(item));
    return out;
  }

  const std::string& value() const { return e_.value; }

 private:
  const IniSection& sec_;
  const IniEntry& e_;
};

inline std::string real_text(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + std::to_string(v[i]);
  return out;
}

inline std::string domains_text(const DomainSet& s) {
  if (s.all()) return "all";
  std::string out;
  for (DomainKey d : all_domains())
    if (s.test(d.index())) out += (out.empty() ? "" : ", ") + d.str();
  return out;
}

inline std::optional<DomainKey> parse_domain(std::string_view s) {
  const auto slash = s.find('/');
  if (slash == std::string_view::npos) return std::nullopt;
  auto sf = parse_surface(s.substr(0, slash));
  auto pr = parse_product(s.substr(slash + 1));
  if (!sf || !pr) return std::nullopt;
  return DomainKey{*sf, *pr};
}

inline std::string_view source_name(ValueSource s) {
  switch (s) {
    case ValueSource::kRandom: return "random";
    case ValueSource::kSurface: return "surface";
    case ValueSource::kProduct: return "product";
  }
  return "random";
}

inline FieldSpec parse_field(const IniSection& sec, const std::string& field_name) {
  FieldSpec f;
  f.name = field_name;
  bool have_side = false, have_kind = false;
  for (const IniEntry& e : sec.entries) {
    ValueReader v(sec, e);
    if (e.key == "side") {
      if (e.value == "query") f.side = Side::kQuery;
      else if (e.value == "item") f.side = Side::kItem;
      else v.fail("expected query or item");
      have_side = true;
    } else if (e.key == "kind") {
      if (e.value == "continuous") f.kind = FieldKind::kContinuous;
      else if (e.value == "categorical") f.kind = FieldKind::kCategorical;
      else v.fail("expected continuous or categorical");
      have_kind = true;
    } else if (e.key == "available") {
      if (e.value == "all") {
        f.available = every_domain();
      } else {
        f.available.reset();
        for (auto item : v.list()) {
          auto d = parse_domain(item);
          if (!d) v.fail("expected `all` or a list of Surface/Product");
          f.available.set(d->index());
        }
      }
    } else if (e.key == "shared") {
      f.shared = v.boolean();
    } else if (e.key == "high_level") {
      f.high_level = v.boolean();
    } else if (e.key == "cardinality") {
      f.cardinality = v.size();
    } else if (e.key == "emb_dim") {
      f.emb_dim = v.size();
    } else if (e.key == "default") {
      f.default_value = v.real();
    } else if (e.key == "source") {
      if (e.value == "random") f.source = ValueSource::kRandom;
      else if (e.value == "surface") f.source = ValueSource::kSurface;
      else if (e.value == "product") f.source = ValueSource::kProduct;
      else v.fail("expected random, surface or product");
    } else {
      throw ConfigError(config_error_at(e.line, "unknown config key '" + e.key + "' in [" + sec.name + "]"));
    }
  }
  if (!have_side || !have_kind)
    throw ConfigError(config_error_at(sec.line, "[" + sec.name + "] needs both side and kind"));
  return f;
}

}  // namespace detail

// Parses a full run configuration. Keys absent from the text keep their
// defaults; unknown sections and keys are errors. Any [field.<name>] section
// replaces the default schema with the listed fields, in order.
inline RunConfig parse_config(std::string_view text) {
  using detail::config_error_at;
  RunConfig c;
  std::optional<FeatureSchema> schema;
  for (const IniSection& sec : parse_ini(text)) {
    auto unknown = [&](const IniEntry& e) {
      throw ConfigError(config_error_at(e.line, "unknown config key '" + e.key + "' in [" + sec.name + "]"));
    };
    if (sec.name.rfind("field.", 0) == 0) {
      if (!schema) schema.emplace();
      FieldSpec f = detail::parse_field(sec, sec.name.substr(6));
      FieldSpec& added = f.categorical()
                             ? schema->add_categorical(f.name, f.side, f.cardinality, f.emb_dim, f.available,
                                                       f.shared, f.high_level, f.source)
                             : schema->add_continuous(f.name, f.side, f.available, f.shared);
      added.high_level = f.high_level;
      added.default_value = f.default_value;
      continue;
    }
    for (const IniEntry& e : sec.entries) {
      detail::ValueReader v(sec, e);
      const std::string& k = e.key;
      if (sec.name == "run") {
        if (k == "seed") c.seed = v.u64();
        else unknown(e);
      } else if (sec.name == "model") {
        ModelConfig& m = c.model;
        if (k == "deep_dims") m.deep_dims = v.sizes();
        else if (k == "shallow_dims") m.shallow_dims = v.sizes();
        else if (k == "gate_dims") m.gate_dims = v.sizes();
        else if (k == "dcn_layers") m.dcn_layers = v.size();
        else if (k == "dcn_rank") m.dcn_rank = v.size();
        else if (k == "task_dims") {
          const auto d = v.sizes();
          if (d.size() == 1) m.task_dims = uniform_task_dims(d[0]);
          else if (d.size() == kNumTasks) m.task_dims = {d[0], d[1], d[2]};
          else v.fail("expected one width or one per task (CTR, GCTR, OCTR)");
        } else if (k == "se_reduction") m.se_reduction = v.size();
        else if (k == "leaky_slope") m.leaky_slope = v.real();
        else if (k == "emb_init_std") m.emb_init_std = v.real();
        else if (k == "head_init_gain") m.head_init_gain = v.real();
        else if (k == "domain_adapt") m.domain_adapt = v.boolean();
        else if (k == "dcn") m.dcn = v.boolean();
        else if (k == "pre_norm") m.pre_norm = v.boolean();
        else if (k == "constrained") m.constrained = v.boolean();
        else unknown(e);
      } else if (sec.name == "train") {
        TrainConfig& t = c.train;
        if (k == "lr") t.lr = v.real();
        else if (k == "batch_size") t.batch_size = v.size();
        else if (k == "steps") t.steps = v.size();
        else if (k == "weight_ctr") t.task_weights[index(TaskId::kCtr)] = v.real();
        else if (k == "weight_gctr") t.task_weights[index(TaskId::kGctr)] = v.real();
        else if (k == "weight_octr") t.task_weights[index(TaskId::kOctr)] = v.real();
        else if (k == "optimizer") {
          if (e.value == "adam") t.optimizer = Optimizer::kAdam;
          else if (e.value == "sgd") t.optimizer = Optimizer::kSgd;
          else v.fail("expected adam or sgd");
        } else if (k == "lr_schedule") {
          if (e.value == "constant") t.lr_schedule = LrSchedule::kConstant;
          else if (e.value == "cosine") t.lr_schedule = LrSchedule::kCosine;
          else v.fail("expected constant or cosine");
        } else if (k == "downsample") t.downsample = v.real();
        else if (k == "checkpoint_every") t.checkpoint_every = v.size();
        else unknown(e);
      } else if (sec.name == "world") {
        WorldConfig& w = c.world;
        if (k == "seed") w.seed = v.u64();
        else if (k == "alpha") w.alpha = v.real();
        else if (k == "hidden") w.hidden = v.size();
        else if (k == "cat_effect_dim") w.cat_effect_dim = v.size();
        else if (k == "base_scale") w.base_scale = v.real();
        else if (k == "shared_scale") w.shared_scale = v.real();
        else if (k == "cond_scale") w.cond_scale = v.real();
        else unknown(e);
      } else if (sec.name == "data") {
        if (k == "n_train") c.data.n_train = v.size();
        else if (k == "n_eval") c.data.n_eval = v.size();
        else if (k == "mix") {
          if (e.value == "uniform") {
            c.data.mix = uniform_mix();
          } else {
            c.data.mix.fill(0.0);
            for (auto item : v.list()) {
              const auto eq = item.find('=');
              auto d = eq == std::string_view::npos ? std::nullopt : detail::parse_domain(detail::trim(item.substr(0, eq)));
              if (!d) v.fail("expected `uniform` or Surface/Product=fraction pairs");
              c.data.mix[d->index()] = v.number<double>(item.substr(eq + 1));
            }
          }
        } else unknown(e);
      } else if (sec.name == "ablate") {
        if (k == "variants") {
          c.ablate.variants.clear();
          for (auto item : v.list()) {
            auto var = parse_variant(item);
            if (!var) v.fail("unknown ablation variant '" + std::string(item) + "'");
            c.ablate.variants.push_back(*var);
          }
        } else if (k == "seeds") c.ablate.seeds = v.size();
        else if (k == "steps") c.ablate.steps = v.size();
        else unknown(e);
      } else {
        throw ConfigError(config_error_at(sec.line, "unknown config section [" + sec.name + "]"));
      }
    }
  }
  if (schema) c.schema = std::move(*schema);
  c.train.seed = c.seed;
  c.validate();
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open config: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

inline std::string schema_to_config(const FeatureSchema& schema) {
  std::string out;
  for (const FieldSpec& f : schema.fields()) {
    out += "[field." + f.name + "]\n";
    out += "side = " + std::string(name(f.side)) + "\n";
    out += std::string("kind = ") + (f.categorical() ? "categorical" : "continuous") + "\n";
    out += "available = " + detail::domains_text(f.available) + "\n";
    out += std::string("shared = ") + (f.shared ? "true" : "false") + "\n";
    if (f.categorical()) {
      out += std::string("high_level = ") + (f.high_level ? "true" : "false") + "\n";
      out += "cardinality = " + std::to_string(f.cardinality) + "\n";
      out += "emb_dim = " + std::to_string(f.emb_dim) + "\n";
      out += "source = " + std::string(detail::source_name(f.source)) + "\n";
    } else {
      out += "default = " + detail::real_text(f.default_value) + "\n";
    }
    out += "\n";
  }
  return out;
}

// Renders every setting; parse_config(config_to_text(c)) reproduces c.
inline std::string config_to_text(const RunConfig& c) {
  using detail::real_text;
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  std::string o;
  o += "[run]\nseed = " + std::to_string(c.seed) + "\n\n";
  const ModelConfig& m = c.model;
  o += "[model]\n";
  o += "deep_dims = " + detail::join_sizes(m.deep_dims) + "\n";
  o += "shallow_dims = " + detail::join_sizes(m.shallow_dims) + "\n";
  o += "gate_dims = " + detail::join_sizes(m.gate_dims) + "\n";
  o += "dcn_layers = " + std::to_string(m.dcn_layers) + "\n";
  o += "dcn_rank = " + std::to_string(m.dcn_rank) + "\n";
  o += "task_dims = " + detail::join_sizes({m.task_dims.begin(), m.task_dims.end()}) + "\n";
  o += "se_reduction = " + std::to_string(m.se_reduction) + "\n";
  o += "leaky_slope = " + real_text(m.leaky_slope) + "\n";
  o += "emb_init_std = " + real_text(m.emb_init_std) + "\n";
  o += "head_init_gain = " + real_text(m.head_init_gain) + "\n";
  o += "domain_adapt = " + b(m.domain_adapt) + "\n";
  o += "dcn = " + b(m.dcn) + "\n";
  o += "pre_norm = " + b(m.pre_norm) + "\n";
  o += "constrained = " + b(m.constrained) + "\n\n";
  const TrainConfig& t = c.train;
  o += "[train]\n";
  o += "lr = " + real_text(t.lr) + "\n";
  o += "batch_size = " + std::to_string(t.batch_size) + "\n";
  o += "steps = " + std::to_string(t.steps) + "\n";
  o += "weight_ctr = " + real_text(t.task_weights[0]) + "\n";
  o += "weight_gctr = " + real_text(t.task_weights[1]) + "\n";
  o += "weight_octr = " + real_text(t.task_weights[2]) + "\n";
  o += std::string("optimizer = ") + (t.optimizer == Optimizer::kAdam ? "adam" : "sgd") + "\n";
  o += std::string("lr_schedule = ") + (t.lr_schedule == LrSchedule::kCosine ? "cosine" : "constant") + "\n";
  o += "downsample = " + real_text(t.downsample) + "\n";
  o += "checkpoint_every = " + std::to_string(t.checkpoint_every) + "\n\n";
  const WorldConfig& w = c.world;
  o += "[world]\n";
  o += "seed = " + std::to_string(w.seed) + "\n";
  o += "alpha = " + real_text(w.alpha) + "\n";
  o += "hidden = " + std::to_string(w.hidden) + "\n";
  o += "cat_effect_dim = " + std::to_string(w.cat_effect_dim) + "\n";
  o += "base_scale = " + real_text(w.base_scale) + "\n";
  o += "shared_scale = " + real_text(w.shared_scale) + "\n";
  o += "cond_scale = " + real_text(w.cond_scale) + "\n\n";
  o += "[data]\n";
  o += "n_train = " + std::to_string(c.data.n_train) + "\n";
  o += "n_eval = " + std::to_string(c.data.n_eval) + "\n";
  o += "mix = ";
  for (DomainKey d : all_domains())
    o += (d.index() ? ", " : "") + d.str() + "=" + real_text(c.data.mix[d.index()]);
  o += "\n\n[ablate]\nvariants = ";
  for (std::size_t i = 0; i < c.ablate.variants.size(); ++i)
    o += (i ? ", " : "") + std::string(name(c.ablate.variants[i]));
  o += "\nseeds = " + std::to_string(c.ablate.seeds) + "\n";
  o += "steps = " + std::to_string(c.ablate.steps) + "\n\n";
  o += schema_to_config(c.schema);
  return o;
}

}  // namespace mtmd
