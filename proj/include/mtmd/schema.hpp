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
#include <bitset>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mtmd/errors.hpp"

namespace mtmd {

enum class Surface : std::uint8_t { kHomeFeed = 0, kSearch = 1, kRelatedPin = 2 };
enum class AdProduct : std::uint8_t { kStandard = 0, kShopping = 1 };
enum class TaskId : std::uint8_t { kCtr = 0, kGctr = 1, kOctr = 2 };
enum class Side : std::uint8_t { kQuery = 0, kItem = 1 };

inline constexpr std::size_t kNumSurfaces = 3;
inline constexpr std::size_t kNumProducts = 2;
inline constexpr std::size_t kNumTasks = 3;
inline constexpr std::size_t kNumDomains = kNumSurfaces * kNumProducts;

inline constexpr std::array<Surface, kNumSurfaces> kSurfaces = {
    Surface::kHomeFeed, Surface::kSearch, Surface::kRelatedPin};
inline constexpr std::array<AdProduct, kNumProducts> kProducts = {AdProduct::kStandard,
                                                                   AdProduct::kShopping};
inline constexpr std::array<TaskId, kNumTasks> kTasks = {TaskId::kCtr, TaskId::kGctr,
                                                         TaskId::kOctr};

inline std::size_t index(Surface s) { return static_cast<std::size_t>(s); }
inline std::size_t index(AdProduct p) { return static_cast<std::size_t>(p); }
inline std::size_t index(TaskId t) { return static_cast<std::size_t>(t); }

inline std::string_view name(Surface s) {
  static constexpr std::array<std::string_view, kNumSurfaces> n = {"HomeFeed", "Search",
                                                                   "RelatedPin"};
  return n[index(s)];
}
inline std::string_view name(AdProduct p) {
  static constexpr std::array<std::string_view, kNumProducts> n = {"Standard", "Shopping"};
  return n[index(p)];
}
inline std::string_view name(TaskId t) {
  static constexpr std::array<std::string_view, kNumTasks> n = {"CTR", "GCTR", "OCTR"};
  return n[index(t)];
}
inline std::string_view name(Side s) { return s == Side::kQuery ? "query" : "item"; }

inline std::optional<Surface> parse_surface(std::string_view s) {
  for (Surface v : kSurfaces)
    if (name(v) == s) return v;
  return std::nullopt;
}
inline std::optional<AdProduct> parse_product(std::string_view s) {
  for (AdProduct v : kProducts)
    if (name(v) == s) return v;
  return std::nullopt;
}
inline std::optional<TaskId> parse_task(std::string_view s) {
  for (TaskId v : kTasks)
    if (name(v) == s) return v;
  return std::nullopt;
}

// OCTR is undefined for shopping ads.
inline bool task_applies(TaskId t, AdProduct p) {
  return !(t == TaskId::kOctr && p == AdProduct::kShopping);
}

struct DomainKey {
  Surface surface = Surface::kHomeFeed;
  AdProduct product = AdProduct::kStandard;

  std::size_t index() const { return mtmd::index(surface) * kNumProducts + mtmd::index(product); }
  static DomainKey from_index(std::size_t i) {
    return {kSurfaces.at(i / kNumProducts), kProducts.at(i % kNumProducts)};
  }
  std::string str() const { return std::string(name(surface)) + "/" + std::string(name(product)); }
  friend auto operator<=>(const DomainKey&, const DomainKey&) = default;
};

inline std::array<DomainKey, kNumDomains> all_domains() {
  std::array<DomainKey, kNumDomains> out;
  for (std::size_t i = 0; i < kNumDomains; ++i) out[i] = DomainKey::from_index(i);
  return out;
}

using DomainSet = std::bitset<kNumDomains>;

inline DomainSet every_domain() { return DomainSet().set(); }
inline DomainSet domains_with(AdProduct p) {
  DomainSet s;
  for (const DomainKey& d : all_domains())
    if (d.product == p) s.set(d.index());
  return s;
}
inline DomainSet domains_with(Surface sf) {
  DomainSet s;
  for (const DomainKey& d : all_domains())
    if (d.surface == sf) s.set(d.index());
  return s;
}

enum class FieldKind : std::uint8_t { kContinuous, kCategorical };

// Where a generated categorical value comes from: a Zipf draw, or the
// example's own domain key (e.g. a "surface_id" field).
enum class ValueSource : std::uint8_t { kRandom, kSurface, kProduct };

struct FieldSpec {
  std::string name;
  Side side = Side::kQuery;
  FieldKind kind = FieldKind::kContinuous;
  DomainSet available = every_domain();
  bool shared = false;
  bool high_level = false;
  std::size_t cardinality = 0;  // categorical only
  std::size_t emb_dim = 1;      // categorical only
  double default_value = 0.0;   // continuous only; categoricals default to id 0
  ValueSource source = ValueSource::kRandom;
  std::size_t slot = 0;  // index into the side's continuous or categorical values

  bool categorical() const { return kind == FieldKind::kCategorical; }
  std::size_t dim() const { return categorical() ? emb_dim : 1; }
  bool available_in(const DomainKey& d) const { return available.test(d.index()); }
};

// Declarative feature layout. Fields keep their declaration order; each side
// sees its own fields in that order.
class FeatureSchema {
 public:
  FieldSpec& add_continuous(std::string name, Side side, DomainSet available, bool shared) {
    FieldSpec f;
    f.name = std::move(name);
    f.side = side;
    f.kind = FieldKind::kContinuous;
    f.available = available;
    f.shared = shared;
    f.slot = count(side, FieldKind::kContinuous);
    return push(std::move(f));
  }

  FieldSpec& add_categorical(std::string name, Side side, std::size_t cardinality,
                             std::size_t emb_dim, DomainSet available, bool shared,
                             bool high_level, ValueSource source = ValueSource::kRandom) {
    FieldSpec f;
    f.name = std::move(name);
    f.side = side;
    f.kind = FieldKind::kCategorical;
    f.available = available;
    f.shared = shared;
    f.high_level = high_level;
    f.cardinality = cardinality;
    f.emb_dim = emb_dim;
    f.source = source;
    f.slot = count(side, FieldKind::kCategorical);
    return push(std::move(f));
  }

  const std::vector<FieldSpec>& fields() const { return fields_; }

  std::vector<const FieldSpec*> fields(Side side) const {
    std::vector<const FieldSpec*> out;
    for (const auto& f : fields_)
      if (f.side == side) out.push_back(&f);
    return out;
  }

  const FieldSpec& field(const std::string& name) const {
    for (const auto& f : fields_)
      if (f.name == name) return f;
    throw ConfigError("unknown feature field: " + name);
  }

  std::size_t count(Side side, FieldKind kind) const {
    std::size_t n = 0;
    for (const auto& f : fields_)
      if (f.side == side && f.kind == kind) ++n;
    return n;
  }

  // Width of the adapted vector for one side.
  std::size_t adapted_dim(Side side) const {
    std::size_t d = 0;
    for (const auto& f : fields_)
      if (f.side == side) d += f.dim();
    return d;
  }
  std::size_t shared_dim(Side side) const {
    std::size_t d = 0;
    for (const auto& f : fields_)
      if (f.side == side && f.shared) d += f.dim();
    return d;
  }
  std::size_t high_level_dim(Side side) const {
    std::size_t d = 0;
    for (const auto& f : fields_)
      if (f.side == side && f.high_level) d += f.dim();
    return d;
  }

  // Throws ConfigError when a structural invariant is violated.
  void validate() const {
    for (std::size_t i = 0; i < fields_.size(); ++i) {
      const FieldSpec& f = fields_[i];
      if (f.name.empty()) throw ConfigError("schema: empty field name");
      for (std::size_t j = i + 1; j < fields_.size(); ++j)
        if (fields_[j].name == f.name) throw ConfigError("schema: duplicate field " + f.name);
      if (f.shared && !f.available.all())
        throw ConfigError("schema: shared field " + f.name + " must be available in every domain");
      if (f.high_level && !f.categorical())
        throw ConfigError("schema: high-level field " + f.name + " must be categorical");
      if (f.categorical() && (f.cardinality == 0 || f.emb_dim == 0))
        throw ConfigError("schema: categorical field " + f.name + " needs cardinality and dim");
      if (f.available.none())
        throw ConfigError("schema: field " + f.name + " is available in no domain");
    }
    for (Side s : {Side::kQuery, Side::kItem}) {
      if (high_level_dim(s) == 0)
        throw ConfigError("schema: no high-level categorical field on the " +
                          std::string(name(s)) + " side");
      if (shared_dim(s) == 0)
        throw ConfigError("schema: no shared field on the " + std::string(name(s)) + " side");
      if (fields(s).size() < 2)
        throw ConfigError("schema: the " + std::string(name(s)) + " side needs >= 2 fields");
    }
  }

  // Canonical one-line-per-field rendering; the schema hash is taken over it.
  std::string canonical() const {
    auto real = [](double v) {
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", v);
      return std::string(buf);
    };
    std::string out;
    for (const auto& f : fields_) {
      out += f.name + "|" + std::string(name(f.side)) + "|" +
             (f.categorical() ? "cat" : "cont") + "|" + f.available.to_string() + "|" +
             (f.shared ? "1" : "0") + (f.high_level ? "1" : "0") + "|" +
             std::to_string(f.cardinality) + "|" + std::to_string(f.emb_dim) + "|" +
             std::to_string(static_cast<int>(f.source)) + "|" + real(f.default_value) + "\n";
    }
    return out;
  }

  // FNV-1a 64 over canonical().
  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : canonical()) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

 private:
  FieldSpec& push(FieldSpec f) {
    fields_.push_back(std::move(f));
    return fields_.back();
  }

  std::vector<FieldSpec> fields_;
};

struct SideValues {
  std::vector<double> continuous;
  std::vector<std::uint32_t> categorical;
  friend bool operator==(const SideValues&, const SideValues&) = default;
};

using TeacherScores = std::array<std::optional<double>, kNumTasks>;

struct Example {
  std::uint64_t id = 0;
  DomainKey domain;
  SideValues query;
  SideValues item;
  TeacherScores teacher;

  const SideValues& side(Side s) const { return s == Side::kQuery ? query : item; }
  SideValues& side(Side s) { return s == Side::kQuery ? query : item; }
  friend bool operator==(const Example&, const Example&) = default;
};

// An example with every field at its schema default.
inline Example blank_example(const FeatureSchema& schema, DomainKey domain, std::uint64_t id = 0) {
  Example ex;
  ex.id = id;
  ex.domain = domain;
  for (Side s : {Side::kQuery, Side::kItem}) {
    ex.side(s).continuous.assign(schema.count(s, FieldKind::kContinuous), 0.0);
    ex.side(s).categorical.assign(schema.count(s, FieldKind::kCategorical), 0);
  }
  for (const auto& f : schema.fields()) {
    if (!f.categorical()) ex.side(f.side).continuous[f.slot] = f.default_value;
  }
  return ex;
}

// Desk-scale default layout: 12 continuous + 4 categorical fields on the query
// side, 12 continuous + 6 categorical on the item side; per side 8 continuous
// and 2 categorical fields are shared by every domain. Shopping-only and
// search-only fields exercise missing-value handling.
inline FeatureSchema make_default_schema() {
  FeatureSchema s;
  const DomainSet all = every_domain();
  const DomainSet shopping = domains_with(AdProduct::kShopping);
  const DomainSet standard = domains_with(AdProduct::kStandard);
  const DomainSet search = domains_with(Surface::kSearch);
  const DomainSet feeds = domains_with(Surface::kHomeFeed) | domains_with(Surface::kRelatedPin);

  const Side q = Side::kQuery;
  for (const char* n : {"user_ctr_7d", "user_ctr_30d", "user_clicks_7d", "user_impressions_7d",
                        "user_gclick_rate_30d", "user_outbound_rate_30d", "user_sessions_7d",
                        "user_tenure_days"})
    s.add_continuous(n, q, all, true);
  s.add_continuous("search_query_length", q, search, false);
  s.add_continuous("search_query_ctr", q, search, false);
  s.add_continuous("user_purchase_rate_30d", q, shopping, false);
  s.add_continuous("feed_scroll_depth", q, feeds, false);
  s.add_categorical("surface_id", q, kNumSurfaces, 4, all, false, true, ValueSource::kSurface);
  s.add_categorical("request_ad_product", q, kNumProducts, 4, all, false, true,
                    ValueSource::kProduct);
  s.add_categorical("user_country", q, 50, 8, all, true, false);
  s.add_categorical("user_age_bucket", q, 8, 8, all, true, false);

  const Side i = Side::kItem;
  for (const char* n : {"ad_ctr_7d", "ad_ctr_30d", "ad_gctr_30d", "ad_octr_30d",
                        "ad_impressions_7d", "advertiser_spend_7d", "creative_quality",
                        "ad_age_days"})
    s.add_continuous(n, i, all, true);
  s.add_continuous("product_price", i, shopping, false);
  s.add_continuous("product_rating", i, shopping, false);
  s.add_continuous("merchant_review_count", i, shopping, false);
  s.add_continuous("search_keyword_match", i, search, false);
  s.add_categorical("ad_product_type", i, kNumProducts, 4, all, false, true,
                    ValueSource::kProduct);
  s.add_categorical("ad_format", i, 4, 4, all, false, true);
  s.add_categorical("advertiser_id", i, 200, 8, all, true, false);
  s.add_categorical("ad_category", i, 30, 8, all, true, false);
  s.add_categorical("product_brand", i, 100, 8, shopping, false, false);
  s.add_categorical("landing_domain", i, 60, 8, standard, false, false);

  s.validate();
  return s;
}

}  // namespace mtmd
