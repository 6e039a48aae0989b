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
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mtmd/errors.hpp"
#include "mtmd/numkernel/rng.hpp"
#include "mtmd/schema.hpp"
#include "mtmd/teacher.hpp"

namespace mtmd {

using DomainMix = std::array<double, kNumDomains>;

inline DomainMix uniform_mix() {
  DomainMix m;
  m.fill(1.0 / static_cast<double>(kNumDomains));
  return m;
}

inline void validate_mix(const DomainMix& mix) {
  double total = 0.0;
  for (double f : mix) {
    if (!(f >= 0.0)) throw ConfigError("domain mix: fractions must be >= 0");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("domain mix: fractions sum to " + std::to_string(total) + ", expected 1");
  }
}

// Inverse-CDF sampler for P(k) proportional to (k + 1)^-exponent, k in [0, n).
class ZipfSampler {
 public:
  ZipfSampler(std::size_t n, double exponent) : cdf_(n) {
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) cdf_[k] = (acc += std::pow(static_cast<double>(k + 1), -exponent));
    for (double& c : cdf_) c /= acc;
  }
  std::uint32_t sample(nk::Rng& rng) const {
    const double u = rng.uniform();
    std::size_t k = 0;
    while (k + 1 < cdf_.size() && u >= cdf_[k]) ++k;
    return static_cast<std::uint32_t>(k);
  }

 private:
  std::vector<double> cdf_;
};

inline constexpr double kZipfExponent = 1.1;

// n examples drawn from `mix`; continuous features are per-domain shifted
// normals, categoricals Zipf(1.1); unavailable fields keep the schema default.
// A pure function of (oracle world, seed, mix, n).
inline std::vector<Example> generate_examples(const TeacherOracle& oracle, std::uint64_t seed,
                                              std::size_t n, const DomainMix& mix) {
  validate_mix(mix);
  const FeatureSchema& schema = oracle.schema();
  nk::Rng rng(nk::derive_seed(seed, 0xDA7A5E7));
  std::vector<ZipfSampler> zipf;
  for (const auto& f : schema.fields())
    zipf.emplace_back(f.categorical() ? f.cardinality : 1, kZipfExponent);

  std::size_t last = 0;
  for (std::size_t d = 0; d < kNumDomains; ++d)
    if (mix[d] > 0.0) last = d;

  std::vector<Example> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform();
    std::size_t pick = last;
    double cum = 0.0;
    for (std::size_t d = 0; d < kNumDomains; ++d) {
      cum += mix[d];
      if (mix[d] > 0.0 && u < cum) {
        pick = d;
        break;
      }
    }
    Example ex = blank_example(schema, DomainKey::from_index(pick), i);
    const auto& fields = schema.fields();
    for (std::size_t k = 0; k < fields.size(); ++k) {
      const FieldSpec& f = fields[k];
      if (!f.available_in(ex.domain)) continue;
      if (f.categorical()) {
        std::uint32_t v = 0;
        switch (f.source) {
          case ValueSource::kSurface:
            v = static_cast<std::uint32_t>(index(ex.domain.surface));
            break;
          case ValueSource::kProduct:
            v = static_cast<std::uint32_t>(index(ex.domain.product));
            break;
          case ValueSource::kRandom:
            v = zipf[k].sample(rng);
            break;
        }
        ex.side(f.side).categorical[f.slot] = v;
      } else {
        ex.side(f.side).continuous[f.slot] =
            oracle.mean(ex.domain, k) + oracle.stddev(ex.domain, k) * rng.normal();
      }
    }
    ex.teacher = oracle.score(ex);
    out.push_back(std::move(ex));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Text format: header "MTMDDS 1 <schema-hash>", then one tab-separated record
// per line: id, surface, product, every field in declaration order, then the
// teacher scores as task:value pairs. Reals use 17 significant digits.

inline constexpr std::string_view kDatasetMagic = "MTMDDS";
inline constexpr int kDatasetVersion = 1;

struct Dataset {
  std::uint64_t schema_hash = 0;
  std::vector<Example> examples;
};

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline void write_examples(std::ostream& os, const FeatureSchema& schema,
                           const std::vector<Example>& examples) {
  os << kDatasetMagic << ' ' << kDatasetVersion << ' ' << hash_hex(schema.hash()) << '\n';
  std::string line;
  for (const Example& ex : examples) {
    line = std::to_string(ex.id);
    line += '\t';
    line += name(ex.domain.surface);
    line += '\t';
    line += name(ex.domain.product);
    for (const auto& f : schema.fields()) {
      line += '\t';
      const SideValues& sv = ex.side(f.side);
      line += f.categorical() ? std::to_string(sv.categorical[f.slot])
                              : format_real(sv.continuous[f.slot]);
    }
    for (TaskId t : kTasks) {
      if (!ex.teacher[index(t)]) continue;
      line += '\t';
      line += name(t);
      line += ':';
      line += format_real(*ex.teacher[index(t)]);
    }
    line += '\n';
    os << line;
  }
}

inline void write_dataset(const std::string& path, const FeatureSchema& schema,
                          const std::vector<Example>& examples) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  write_examples(os, schema, examples);
  os.flush();
  if (!os) throw IoError("write failed: " + path);
}

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find('\t', start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace detail

inline Dataset read_examples(std::istream& is, const FeatureSchema& schema) {
  Dataset ds;
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(is, line)) throw FormatError("line 1: missing dataset header");
  {
    std::istringstream hs(line);
    std::string magic, version, hash;
    hs >> magic >> version >> hash;
    if (magic != kDatasetMagic) throw FormatError("line 1: bad dataset magic '" + magic + "'");
    if (version != std::to_string(kDatasetVersion))
      throw FormatError("line 1: unknown dataset schema version '" + version + "'");
    auto [ptr, ec] = std::from_chars(hash.data(), hash.data() + hash.size(), ds.schema_hash, 16);
    if (hash.size() != 16 || ec != std::errc() || ptr != hash.data() + hash.size())
      throw FormatError("line 1: bad schema hash '" + hash + "'");
  }
  if (ds.schema_hash != schema.hash()) {
    throw ConfigError("dataset schema hash " + hash_hex(ds.schema_hash) +
                      " does not match model schema " + hash_hex(schema.hash()));
  }
  const std::size_t nfields = schema.fields().size();
  while (std::getline(is, line)) {
    ++lineno;
    const std::string where = "line " + std::to_string(lineno) + ": ";
    if (line.empty()) continue;
    const auto cols = detail::split_tabs(line);
    if (cols.size() < 3 + nfields)
      throw FormatError(where + "expected at least " + std::to_string(3 + nfields) +
                        " fields, got " + std::to_string(cols.size()));
    Example ex;
    if (!detail::parse_number(cols[0], ex.id)) throw FormatError(where + "bad id");
    auto sf = parse_surface(cols[1]);
    auto pr = parse_product(cols[2]);
    if (!sf) throw FormatError(where + "unknown surface '" + std::string(cols[1]) + "'");
    if (!pr) throw FormatError(where + "unknown ad product '" + std::string(cols[2]) + "'");
    ex.domain = {*sf, *pr};
    std::size_t expected = 3 + nfields;
    for (TaskId t : kTasks)
      if (task_applies(t, ex.domain.product)) ++expected;
    if (cols.size() != expected)
      throw FormatError(where + "expected " + std::to_string(expected) + " fields, got " +
                        std::to_string(cols.size()));
    ex = blank_example(schema, ex.domain, ex.id);
    for (std::size_t k = 0; k < nfields; ++k) {
      const FieldSpec& f = schema.fields()[k];
      const auto cell = cols[3 + k];
      if (f.categorical()) {
        std::uint32_t v = 0;
        if (!detail::parse_number(cell, v))
          throw FormatError(where + "bad categorical value for " + f.name);
        if (v >= f.cardinality)
          throw DataError(where + f.name + " value " + std::to_string(v) + " >= cardinality " +
                          std::to_string(f.cardinality));
        ex.side(f.side).categorical[f.slot] = v;
      } else {
        double v = 0.0;
        if (!detail::parse_number(cell, v) || !std::isfinite(v))
          throw FormatError(where + "bad continuous value for " + f.name);
        ex.side(f.side).continuous[f.slot] = v;
      }
    }
    for (std::size_t k = 3 + nfields; k < cols.size(); ++k) {
      const auto cell = cols[k];
      const auto colon = cell.find(':');
      if (colon == std::string_view::npos) throw FormatError(where + "bad teacher pair");
      auto t = parse_task(cell.substr(0, colon));
      double p = 0.0;
      if (!t || !detail::parse_number(cell.substr(colon + 1), p))
        throw FormatError(where + "bad teacher pair '" + std::string(cell) + "'");
      if (!task_applies(*t, ex.domain.product) || ex.teacher[index(*t)])
        throw FormatError(where + "unexpected teacher task " + std::string(name(*t)));
      if (!(p > 0.0 && p < 1.0)) throw DataError(where + "teacher probability out of (0,1)");
      ex.teacher[index(*t)] = p;
    }
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

inline Dataset read_dataset(const std::string& path, const FeatureSchema& schema) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path);
  return read_examples(is, schema);
}

inline std::vector<Example> generate_dataset(const TeacherOracle& oracle, std::uint64_t seed,
                                             std::size_t n, const DomainMix& mix,
                                             const std::string& path) {
  auto examples = generate_examples(oracle, seed, n, mix);
  write_dataset(path, oracle.schema(), examples);
  return examples;
}

}  // namespace mtmd
