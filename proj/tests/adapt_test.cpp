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

#include <gtest/gtest.h>

#include <cmath>

#include "mtmd/adapt.hpp"
#include "mtmd/dataset.hpp"
#include "mtmd/numkernel/grad_check.hpp"
#include "mtmd/teacher.hpp"

namespace mtmd {
namespace {

using nk::Tensor2;

std::vector<const Example*> ptrs(const std::vector<Example>& ex) {
  std::vector<const Example*> out;
  for (const auto& e : ex) out.push_back(&e);
  return out;
}

class AdaptTest : public ::testing::Test {
 protected:
  AdaptTest() : schema(make_default_schema()), oracle(schema, WorldConfig{}) {}
  FeatureSchema schema;
  TeacherOracle oracle;
  ModelConfig cfg;
};

TEST_F(AdaptTest, OutputWidthsFixedPerSide) {
  for (bool da : {true, false}) {
    ModelConfig c = cfg;
    c.domain_adapt = da;
    ParamStore ps;
    Adapter q(schema, Side::kQuery, c, ps, "query"), it(schema, Side::kItem, c, ps, "item");
    ps.initialize(1);
    const auto ex = generate_examples(oracle, 1, 64, uniform_mix());
    const auto rows = ptrs(ex);
    Graph g(false);
    auto qa = q.adapt(g, rows, Mode::kTrain);
    auto ia = it.adapt(g, rows, Mode::kTrain);
    EXPECT_EQ(g.value(qa.x).cols(), schema.adapted_dim(Side::kQuery));
    EXPECT_EQ(g.value(ia.x).cols(), schema.adapted_dim(Side::kItem));
    EXPECT_EQ(g.value(qa.x).cols(), 36u);
    EXPECT_EQ(g.value(ia.x).cols(), 52u);
    EXPECT_EQ(g.value(qa.shared).cols(), schema.shared_dim(Side::kQuery));
    EXPECT_EQ(g.value(ia.high_level).cols(), schema.high_level_dim(Side::kItem));
    EXPECT_EQ(g.value(qa.x).rows(), 64u);
    EXPECT_EQ(ps.contains("query.se.W1"), da);
    EXPECT_EQ(ps.contains("query.bn.global.mean"), !da);
    EXPECT_EQ(ps.contains("query.bn.Search.Shopping.mean"), da);
  }
}

TEST_F(AdaptTest, SameRawValueDifferentDomainStats) {
  ParamStore ps;
  Adapter q(schema, Side::kQuery, cfg, ps, "query");
  ps.initialize(1);
  ps.at("query.bn.HomeFeed.Standard.mean").value.fill(1.0);
  ps.at("query.bn.Search.Standard.mean").value.fill(-1.0);
  Example a = blank_example(schema, {Surface::kHomeFeed, AdProduct::kStandard});
  Example b = blank_example(schema, {Surface::kSearch, AdProduct::kStandard});
  a.query.continuous.assign(a.query.continuous.size(), 0.5);
  b.query.continuous = a.query.continuous;
  const std::vector<const Example*> rows = {&a, &b};
  Graph g(false);
  auto f = q.embed_fields(g, rows, Mode::kInfer);
  const std::size_t k = schema.field("user_ctr_7d").slot;
  const Tensor2& v = g.value(f[k]);
  EXPECT_NEAR(v(0, 0), (0.5 - 1.0) / std::sqrt(1.0 + 1e-5), 1e-12);
  EXPECT_NEAR(v(1, 0), (0.5 + 1.0) / std::sqrt(1.0 + 1e-5), 1e-12);
}

TEST_F(AdaptTest, UnavailableFeatureNormalizedDefault) {
  ParamStore ps;
  Adapter q(schema, Side::kQuery, cfg, ps, "query");
  ps.initialize(1);
  ps.at("query.bn.HomeFeed.Shopping.mean").value.fill(0.25);
  ps.at("query.bn.HomeFeed.Shopping.var").value.fill(4.0);
  const DomainKey d{Surface::kHomeFeed, AdProduct::kShopping};
  const auto ex = generate_examples(oracle, 2, 200, uniform_mix());
  std::vector<const Example*> rows;
  for (const auto& e : ex)
    if (e.domain == d) rows.push_back(&e);
  ASSERT_GE(rows.size(), 2u);
  const FieldSpec& sq = schema.field("search_query_length");
  Graph g(false);
  auto f = q.embed_fields(g, rows, Mode::kInfer);
  const auto side_fields = schema.fields(Side::kQuery);
  const std::size_t k =
      std::find(side_fields.begin(), side_fields.end(), &sq) - side_fields.begin();
  ASSERT_FALSE(sq.available_in(d));
  const double expected = (0.0 - 0.25) / std::sqrt(4.0 + 1e-5);
  for (std::size_t r = 0; r < rows.size(); ++r) EXPECT_EQ(g.value(f[k])(r, 0), expected);
}

TEST_F(AdaptTest, ZeroTableGivesZeroEmbedding) {
  ParamStore ps;
  Adapter q(schema, Side::kQuery, cfg, ps, "query");
  ps.initialize(1);
  ps.at("query.emb.user_country").value.set_zero();
  Example a = blank_example(schema, {Surface::kSearch, AdProduct::kStandard});
  const std::vector<const Example*> rows = {&a};
  Graph g(false);
  auto f = q.embed_fields(g, rows, Mode::kInfer);
  std::size_t k = 0;
  for (const FieldSpec* s : schema.fields(Side::kQuery)) {
    if (s->name == "user_country") break;
    ++k;
  }
  const Tensor2& v = g.value(f[k]);
  EXPECT_EQ(v.cols(), 8u);
  for (double x : v.values()) EXPECT_EQ(x, 0.0);
}

TEST_F(AdaptTest, CategoricalOutOfRangeIsDataError) {
  ParamStore ps;
  Adapter q(schema, Side::kQuery, cfg, ps, "query");
  ps.initialize(1);
  Example a = blank_example(schema, {Surface::kSearch, AdProduct::kStandard});
  a.query.categorical[schema.field("user_age_bucket").slot] = 8;
  const std::vector<const Example*> rows = {&a};
  Graph g(false);
  EXPECT_THROW(q.embed_fields(g, rows, Mode::kInfer), DataError);
}

TEST_F(AdaptTest, ZeroSeWeightsAreIdentity) {
  ParamStore ps;
  Adapter q(schema, Side::kQuery, cfg, ps, "query");
  ps.initialize(3);
  ps.at("query.se.W1").value.set_zero();
  ps.at("query.se.W2").value.set_zero();
  const auto ex = generate_examples(oracle, 3, 32, uniform_mix());
  const auto rows = ptrs(ex);
  Graph g(false);
  auto raw = q.embed_fields(g, rows, Mode::kInfer);
  Var gates = q.se_gates(g, raw);
  for (double v : g.value(gates).values()) EXPECT_EQ(v, 1.0);
  auto out = Adapter::apply_gates(g, raw, gates);
  for (std::size_t f = 0; f < raw.size(); ++f) EXPECT_EQ(g.value(out[f]), g.value(raw[f]));
}

TEST_F(AdaptTest, ZeroGateZeroesOnlyThatField) {
  Graph g(false);
  std::vector<Var> fields = {g.constant(Tensor2(2, 3, {1, 2, 3, 4, 5, 6})),
                             g.constant(Tensor2(2, 1, {7, 8})),
                             g.constant(Tensor2(2, 2, {9, 10, 11, 12}))};
  Var gates = g.constant(Tensor2(2, 3, {1, 0, 1, 1, 0, 1}));
  auto out = Adapter::apply_gates(g, fields, gates);
  EXPECT_EQ(g.value(out[0]), g.value(fields[0]));
  EXPECT_EQ(g.value(out[1]), Tensor2(2, 1, 0.0));
  EXPECT_EQ(g.value(out[2]), g.value(fields[2]));
}

// Three fields on the query side, r = 1: gates checked against a direct
// evaluation of a = 2 * sigmoid(W2 relu(W1 s)).
TEST(SeBlock, MatchesDirectFormula) {
  FeatureSchema s;
  s.add_continuous("c0", Side::kQuery, every_domain(), true);
  s.add_continuous("c1", Side::kQuery, every_domain(), true);
  s.add_categorical("k0", Side::kQuery, 5, 4, every_domain(), true, true);
  ModelConfig cfg;
  cfg.se_reduction = 1;
  ParamStore ps;
  Adapter q(s, Side::kQuery, cfg, ps, "q");
  ps.initialize(17);
  const Tensor2& w1 = ps.at("q.se.W1").value;
  const Tensor2& w2 = ps.at("q.se.W2").value;
  ASSERT_EQ(w1.rows(), 3u);
  ASSERT_EQ(w1.cols(), 3u);

  const std::vector<double> f0 = {0.3}, f1 = {-1.7}, f2 = {0.5, -0.25, 2.0, 1.0};
  Graph g(false);
  std::vector<Var> fields = {g.constant(Tensor2(1, 1, f0)), g.constant(Tensor2(1, 1, f1)),
                             g.constant(Tensor2(1, 4, f2))};
  const Tensor2& gates = g.value(q.se_gates(g, fields));

  const double sq[3] = {0.3, -1.7, (0.5 - 0.25 + 2.0 + 1.0) / 4.0};
  double h[3];
  for (int i = 0; i < 3; ++i) {
    double z = 0.0;
    for (int j = 0; j < 3; ++j) z += w1(i, j) * sq[j];
    h[i] = z > 0.0 ? z : 0.0;
  }
  for (int f = 0; f < 3; ++f) {
    double z = 0.0;
    for (int i = 0; i < 3; ++i) z += w2(f, i) * h[i];
    EXPECT_NEAR(gates(0, f), 2.0 / (1.0 + std::exp(-z)), 1e-14);
  }
}

TEST_F(AdaptTest, GatesInOpenInterval) {
  ParamStore ps;
  Adapter it(schema, Side::kItem, cfg, ps, "item");
  ps.initialize(5);
  const auto ex = generate_examples(oracle, 5, 256, uniform_mix());
  const auto rows = ptrs(ex);
  Graph g(false);
  auto a = it.adapt(g, rows, Mode::kTrain);
  for (double v : g.value(a.gates).values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 2.0);
  }
}

TEST_F(AdaptTest, SharedLayoutIdenticalAcrossDomains) {
  ParamStore ps;
  Adapter q(schema, Side::kQuery, cfg, ps, "query");
  ps.initialize(5);
  ps.at("query.se.W1").value.set_zero();
  ps.at("query.se.W2").value.set_zero();
  // identical shared raw values in every domain, neutral BN stats: the shared
  // sub-vector must then be identical too
  std::vector<Example> ex;
  for (DomainKey d : all_domains()) {
    Example e = blank_example(schema, d);
    for (const FieldSpec* f : schema.fields(Side::kQuery)) {
      if (!f->shared) continue;
      if (f->categorical()) {
        e.query.categorical[f->slot] = 3;
      } else {
        e.query.continuous[f->slot] = 0.7 * static_cast<double>(f->slot);
      }
    }
    ex.push_back(e);
  }
  const auto rows = ptrs(ex);
  Graph g(false);
  auto a = q.adapt(g, rows, Mode::kInfer);
  const Tensor2& sv = g.value(a.shared);
  EXPECT_EQ(sv.cols(), 24u);
  for (std::size_t r = 1; r < sv.rows(); ++r)
    for (std::size_t c = 0; c < sv.cols(); ++c) EXPECT_EQ(sv(r, c), sv(0, c));
}

TEST_F(AdaptTest, RunningStatsOnlyMoveForPresentDomains) {
  ParamStore ps;
  Adapter it(schema, Side::kItem, cfg, ps, "item");
  ps.initialize(5);
  const DomainKey d{Surface::kRelatedPin, AdProduct::kShopping};
  DomainMix mix{};
  mix[d.index()] = 1.0;
  const auto ex = generate_examples(oracle, 8, 16, mix);
  const auto rows = ptrs(ex);
  std::map<std::string, Tensor2> before;
  for (const auto& [id, slot] : ps.slots())
    if (id.find(".bn.") != std::string::npos) before[id] = slot.value;
  Graph g(false);
  it.adapt(g, rows, Mode::kTrain);
  for (const auto& [id, value] : before) {
    const bool mine = id.find(".bn.RelatedPin.Shopping.") != std::string::npos;
    EXPECT_EQ(ps.at(id).value == value, !mine) << id;
  }
}

TEST_F(AdaptTest, GradCheckThroughGatesAndFields) {
  ParamStore ps;
  Adapter q(schema, Side::kQuery, cfg, ps, "query");
  ps.initialize(21);
  const auto ex = generate_examples(oracle, 21, 24, uniform_mix());
  const auto rows = ptrs(ex);
  // warm the running stats so infer mode is not the identity
  {
    Graph g(false);
    q.adapt(g, rows, Mode::kTrain);
  }
  for (Mode mode : {Mode::kTrain, Mode::kInfer}) {
    auto rep = nk::grad_check(
        ps, [&](Graph& g, Var) { return q.adapt(g, rows, mode).x; }, Tensor2(),
        {.max_coords_per_tensor = 40, .seed = 3});
    EXPECT_LE(rep.max_rel_error, 1e-4) << rep.worst;
    EXPECT_GT(rep.coords, 100u);
  }
}

}  // namespace
}  // namespace mtmd
