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

#include <algorithm>
#include <cmath>

#include "mtmd/dataset.hpp"
#include "mtmd/embedding_io.hpp"
#include "mtmd/towers.hpp"

namespace mtmd {
namespace {

using nk::Tensor2;

std::vector<const Example*> ptrs(const std::vector<Example>& ex) {
  std::vector<const Example*> out;
  for (const auto& e : ex) out.push_back(&e);
  return out;
}

// One small model shared by the tests that only read it.
class TowersTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    schema_ = new FeatureSchema(make_default_schema());
    oracle_ = new TeacherOracle(*schema_, WorldConfig{});
    ModelConfig cfg;
    cfg.task_dims = constrained_task_dims();
    model_ = new MtmdModel(*schema_, cfg, 7);
  }
  static void TearDownTestSuite() {
    delete model_;
    delete oracle_;
    delete schema_;
  }
  static std::vector<Example> examples(std::uint64_t seed, std::size_t n, const DomainMix& mix = uniform_mix()) {
    return generate_examples(*oracle_, seed, n, mix);
  }
  static FeatureSchema* schema_;
  static TeacherOracle* oracle_;
  static MtmdModel* model_;
};
FeatureSchema* TowersTest::schema_ = nullptr;
TeacherOracle* TowersTest::oracle_ = nullptr;
MtmdModel* TowersTest::model_ = nullptr;

TEST_F(TowersTest, EmbeddingDimsMatchConfigEverywhere) {
  const ModelConfig& cfg = model_->config();
  for (DomainKey d : all_domains()) {
    const Example ex = blank_example(*schema_, d);
    for (Side side : {Side::kQuery, Side::kItem}) {
      const TaskEmbeddings e = model_->embed(ex, side);
      ASSERT_EQ(e.size(), kNumTasks);
      for (TaskId t : kTasks) {
        EXPECT_EQ(e.at(t).deep.size(), cfg.task_dims[index(t)]) << d.str();
        EXPECT_EQ(e.at(t).shallow.size(), 64u);
        EXPECT_EQ(e.at(t).deep.size() + e.at(t).shallow.size(), cfg.task_dims[index(t)] + 64);
      }
    }
  }
  EXPECT_EQ(cfg.task_dims[0], 128u);
  EXPECT_EQ(cfg.task_dims[1], 32u);
  EXPECT_EQ(cfg.task_dims[2], 32u);
}

TEST_F(TowersTest, ShoppingOctrProducedButMasked) {
  const Example shop = blank_example(*schema_, {Surface::kSearch, AdProduct::kShopping});
  const Example std_ = blank_example(*schema_, {Surface::kSearch, AdProduct::kStandard});
  const auto a = model_->embed(shop, Side::kItem);
  const auto b = model_->embed(std_, Side::kItem);
  EXPECT_TRUE(a.at(TaskId::kOctr).masked);
  EXPECT_EQ(a.at(TaskId::kOctr).deep.size(), 32u);
  EXPECT_FALSE(a.at(TaskId::kCtr).masked);
  EXPECT_FALSE(b.at(TaskId::kOctr).masked);
}

TEST_F(TowersTest, SurfaceSelectsExpert) {
  Example a = examples(1, 1)[0];
  a.domain = {Surface::kHomeFeed, AdProduct::kStandard};
  Example b = a;
  b.domain.surface = Surface::kRelatedPin;  // same availability pattern, other expert
  const auto ea = model_->embed(a, Side::kQuery), eb = model_->embed(b, Side::kQuery);
  EXPECT_NE(ea.at(TaskId::kCtr).deep, eb.at(TaskId::kCtr).deep);
}

TEST_F(TowersTest, InactiveExpertsGetNoGradient) {
  for (DomainKey d : all_domains()) {
    DomainMix mix{};
    mix[d.index()] = 1.0;
    const auto ex = examples(2 + d.index(), 8, mix);
    const auto rows = ptrs(ex);
    ParamStore& ps = model_->params();
    ps.zero_grad();
    for (auto& [id, slot] : ps.slots()) slot.touched = false;
    {
      Graph g;
      TaskOutputs out = model_->forward(g, rows, Mode::kInfer);
      std::vector<Var> all;
      for (TaskId t : kTasks) all.push_back(nk::sum(g, out.logits[index(t)]));
      g.backward(nk::add_all(g, all));
    }
    const std::string q_on = "query." + std::string(name(d.surface)) + ".";
    const std::string i_on = "item." + std::string(name(d.product)) + ".";
    for (const auto& [id, slot] : ps.slots()) {
      const bool grad = slot.grad.mat().cwiseAbs().maxCoeff() > 0.0;
      bool expert_slot = false, active = false;
      for (Surface s : kSurfaces) {
        const std::string p = "query." + std::string(name(s)) + ".";
        if (id.rfind(p, 0) == 0) expert_slot = true, active = p == q_on;
      }
      for (AdProduct p : kProducts) {
        const std::string pre = "item." + std::string(name(p)) + ".";
        if (id.rfind(pre, 0) == 0) expert_slot = true, active = pre == i_on;
      }
      if (expert_slot && !active) {
        EXPECT_FALSE(grad) << d.str() << " " << id;
        EXPECT_FALSE(slot.touched) << d.str() << " " << id;
      }
    }
    EXPECT_TRUE(ps.at("query.domain_shared.layer0.W").touched);
    EXPECT_TRUE(ps.at(q_on + "task_shared.layer0.W").touched);
    EXPECT_TRUE(ps.at(i_on + "deep.CTR.layer0.W").touched);
    ps.zero_grad();
  }
}

TEST_F(TowersTest, StandardItemIgnoresShoppingOnlyFields) {
  Example a = examples(3, 1, [] {
    DomainMix m{};
    m[DomainKey{Surface::kSearch, AdProduct::kStandard}.index()] = 1.0;
    return m;
  }())[0];
  Example b = a;
  b.item.continuous[schema_->field("product_price").slot] = 123.0;
  b.item.categorical[schema_->field("product_brand").slot] = 42;
  const auto ea = model_->embed(a, Side::kItem), eb = model_->embed(b, Side::kItem);
  for (TaskId t : kTasks) {
    EXPECT_EQ(ea.at(t).deep, eb.at(t).deep);
    EXPECT_EQ(ea.at(t).shallow, eb.at(t).shallow);
  }
}

TEST_F(TowersTest, ShallowDependsOnlyOnHighLevelFields) {
  auto ex = examples(4, 2, [] {
    DomainMix m{};
    m[DomainKey{Surface::kHomeFeed, AdProduct::kShopping}.index()] = 1.0;
    return m;
  }());
  // copy the high-level categoricals of item 0 onto item 1
  for (const FieldSpec* f : schema_->fields(Side::kItem))
    if (f->high_level) ex[1].item.categorical[f->slot] = ex[0].item.categorical[f->slot];
  const auto e0 = model_->embed(ex[0], Side::kItem), e1 = model_->embed(ex[1], Side::kItem);
  for (TaskId t : kTasks) {
    EXPECT_EQ(e0.at(t).shallow, e1.at(t).shallow);
    EXPECT_NE(e0.at(t).deep, e1.at(t).deep);
  }
}

TEST_F(TowersTest, BatchedForwardMatchesSingleRows) {
  const auto ex = examples(5, 24);
  const auto rows = ptrs(ex);
  Graph g(false);
  TowerOutput q = model_->query_forward(g, rows, Mode::kInfer);
  for (std::size_t r = 0; r < ex.size(); ++r) {
    const auto single = model_->embed(ex[r], Side::kQuery);
    const auto batched = to_task_embeddings(g, q, r, ex[r].domain.product);
    for (TaskId t : kTasks) {
      for (std::size_t c = 0; c < single.at(t).deep.size(); ++c)
        EXPECT_NEAR(single.at(t).deep[c], batched.at(t).deep[c], 1e-12);
    }
  }
}

TEST_F(TowersTest, ForwardLogitsEqualEmbeddingScores) {
  const auto ex = examples(6, 12);
  const auto rows = ptrs(ex);
  Graph g(false);
  TaskOutputs out = model_->forward(g, rows, Mode::kInfer);
  for (std::size_t r = 0; r < ex.size(); ++r) {
    const auto s = score_pair(model_->embed(ex[r], Side::kQuery), model_->embed(ex[r], Side::kItem),
                              true, ex[r].domain.product);
    for (const auto& [t, sc] : s) {
      EXPECT_NEAR(g.value(out.logits[index(t)])[r], sc.logit, 1e-9 * (1 + std::abs(sc.logit)));
      EXPECT_NEAR(g.value(out.probs[index(t)])[r], sc.prob, 1e-12);
    }
    EXPECT_EQ(s.count(TaskId::kOctr), ex[r].domain.product == AdProduct::kStandard ? 1u : 0u);
  }
}

TEST(Score, HandExampleAndZero) {
  TaskEmbedding q{TaskId::kCtr, {1, 1}, {2}, false}, i = q;
  const TaskScore s = score(q, i);
  EXPECT_EQ(s.dot_deep, 2.0);
  EXPECT_EQ(s.dot_shallow, 4.0);
  EXPECT_EQ(s.logit, 6.0);
  TaskEmbedding z{TaskId::kCtr, {0, 0}, {0}, false};
  EXPECT_EQ(score(z, i).logit, 0.0);
  TaskEmbedding bad{TaskId::kCtr, {1, 1, 1}, {2}, false};
  EXPECT_THROW(score(bad, i), ConfigError);
}

TEST(Score, ConcatenationIdentity) {
  nk::Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    TaskEmbedding q, i;
    const std::size_t dd = 1 + rng.below(128), ds = 1 + rng.below(64);
    for (std::size_t k = 0; k < dd; ++k) q.deep.push_back(rng.normal()), i.deep.push_back(rng.normal());
    for (std::size_t k = 0; k < ds; ++k) q.shallow.push_back(rng.normal()), i.shallow.push_back(rng.normal());
    std::vector<double> qc = q.deep, ic = i.deep;
    qc.insert(qc.end(), q.shallow.begin(), q.shallow.end());
    ic.insert(ic.end(), i.shallow.begin(), i.shallow.end());
    double cat = 0.0;
    for (std::size_t k = 0; k < qc.size(); ++k) cat += qc[k] * ic[k];
    const TaskScore s = score(q, i);
    EXPECT_LE(std::abs(cat - s.logit), 1e-9 * std::max(1e-300, std::abs(cat)) + 1e-12);
    EXPECT_EQ(s.logit, s.dot_deep + s.dot_shallow);
  }
}

TEST(PredictProbs, HandExamples) {
  auto p = predict_probs({{TaskId::kCtr, 0.0}, {TaskId::kGctr, 0.0}}, true, AdProduct::kStandard);
  EXPECT_DOUBLE_EQ(p.at(TaskId::kCtr), 0.5);
  EXPECT_DOUBLE_EQ(p.at(TaskId::kGctr), 0.25);

  p = predict_probs({{TaskId::kCtr, -2.0}, {TaskId::kGctr, 2.0}}, false, AdProduct::kStandard);
  EXPECT_GT(p.at(TaskId::kGctr), p.at(TaskId::kCtr));

  p = predict_probs({{TaskId::kCtr, 1.0}, {TaskId::kGctr, 1.0}, {TaskId::kOctr, 1.0}}, true,
                    AdProduct::kShopping);
  EXPECT_EQ(p.count(TaskId::kOctr), 0u);
  EXPECT_EQ(p.size(), 2u);

  EXPECT_THROW(predict_probs({{TaskId::kGctr, 0.0}}, true, AdProduct::kStandard), ConfigError);

  p = predict_probs({{TaskId::kCtr, 1e3}, {TaskId::kGctr, -1e3}}, false, AdProduct::kStandard);
  EXPECT_EQ(p.at(TaskId::kCtr), 1.0 - 1e-7);
  EXPECT_EQ(p.at(TaskId::kGctr), 1e-7);
}

TEST(PredictProbs, ConstrainedNeverExceedsCtr) {
  nk::Rng rng(9);
  for (int trial = 0; trial < 10000; ++trial) {
    std::map<TaskId, double> s;
    for (TaskId t : kTasks) s[t] = 20.0 * rng.normal();
    const auto p = predict_probs(s, true, AdProduct::kStandard);
    EXPECT_LE(p.at(TaskId::kGctr), p.at(TaskId::kCtr));
    EXPECT_LE(p.at(TaskId::kOctr), p.at(TaskId::kCtr));
    for (const auto& [t, v] : p) {
      EXPECT_GE(v, 1e-7);
      EXPECT_LE(v, 1.0 - 1e-7);
    }
  }
}

TEST(PredictProbs, GraphCompositionMatchesScalar) {
  nk::Rng rng(10);
  for (bool constrained : {false, true}) {
    Graph g(false);
    std::array<Var, kNumTasks> logits;
    Tensor2 raw(50, 3);
    for (double& v : raw.values()) v = 4.0 * rng.normal();
    for (std::size_t t = 0; t < kNumTasks; ++t) logits[t] = nk::slice_cols(g, g.constant(raw), t, 1);
    const auto probs = compose_probs(g, logits, constrained);
    for (std::size_t r = 0; r < 50; ++r) {
      const std::array<double, 3> s = {raw(r, 0), raw(r, 1), raw(r, 2)};
      for (TaskId t : kTasks)
        EXPECT_NEAR(g.value(probs[index(t)])[r], task_probability(s, t, constrained), 1e-15);
    }
  }
}

EmbeddingStore random_store(nk::Rng& rng, std::size_t n, bool with_shopping) {
  EmbeddingStore s;
  s.tower = Side::kItem;
  s.tasks = {{TaskId::kCtr, 6, 3}, {TaskId::kGctr, 4, 3}, {TaskId::kOctr, 4, 3}};
  for (std::size_t i = 0; i < n; ++i) {
    TaskEmbeddings e;
    const bool shopping = with_shopping && rng.below(3) == 0;
    for (const TaskLayout& l : s.tasks) {
      TaskEmbedding te;
      te.task = l.task;
      for (std::uint32_t k = 0; k < l.deep_dim; ++k) te.deep.push_back(rng.normal());
      for (std::uint32_t k = 0; k < l.shallow_dim; ++k) te.shallow.push_back(rng.normal());
      te.masked = shopping && l.task == TaskId::kOctr;
      e[l.task] = te;
    }
    s.append(1000 + rng.below(40), e);  // duplicate ids exercise the tie order
  }
  return s;
}

TaskEmbeddings random_query(nk::Rng& rng, const EmbeddingStore& s) {
  TaskEmbeddings q;
  for (const TaskLayout& l : s.tasks) {
    TaskEmbedding te;
    te.task = l.task;
    for (std::uint32_t k = 0; k < l.deep_dim; ++k) te.deep.push_back(rng.normal());
    for (std::uint32_t k = 0; k < l.shallow_dim; ++k) te.shallow.push_back(rng.normal());
    q[l.task] = te;
  }
  return q;
}

TEST(RankTopK, MatchesBruteForceSort) {
  nk::Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const EmbeddingStore store = random_store(rng, 50, true);
    const TaskEmbeddings q = random_query(rng, store);
    for (bool constrained : {false, true}) {
      for (TaskId task : kTasks) {
        std::vector<Ranked> oracle;
        for (std::size_t r = 0; r < store.size(); ++r) {
          const auto e = store.embedding(r, task);
          if (e.masked) continue;
          std::array<double, 3> s{};
          for (TaskId t : kTasks) {
            const auto et = store.embedding(r, t);
            if (!et.masked) s[index(t)] = score(q.at(t), et).logit;
          }
          oracle.push_back({store.ids[r], task_probability(s, task, constrained)});
        }
        std::stable_sort(oracle.begin(), oracle.end(), [](const Ranked& a, const Ranked& b) {
          return a.prob > b.prob || (a.prob == b.prob && a.id < b.id);
        });
        for (std::size_t k : {1u, 5u, 10u, 50u, 80u}) {
          const auto got = rank_top_k(q, store, k, task, constrained);
          ASSERT_EQ(got.size(), std::min(k, oracle.size()));
          for (std::size_t i = 0; i < got.size(); ++i) {
            EXPECT_EQ(got[i].id, oracle[i].id);
            EXPECT_EQ(got[i].prob, oracle[i].prob);
          }
        }
      }
    }
  }
}

TEST(RankTopK, ArgmaxMonotoneAndMasked) {
  nk::Rng rng(12);
  const EmbeddingStore store = random_store(rng, 3, false);
  const TaskEmbeddings q = random_query(rng, store);
  std::size_t best = 0;
  double best_logit = -1e300;
  for (std::size_t r = 0; r < 3; ++r) {
    const double l = score(q.at(TaskId::kCtr), store.embedding(r, TaskId::kCtr)).logit;
    if (l > best_logit) best_logit = l, best = r;
  }
  const auto top = rank_top_k(q, store, 1, TaskId::kCtr, false);
  ASSERT_EQ(top.size(), 1u);
  EXPECT_EQ(top[0].id, store.ids[best]);

  // unconstrained: ranking by probability equals ranking by logit
  const EmbeddingStore big = random_store(rng, 50, false);
  const TaskEmbeddings q2 = random_query(rng, big);
  const auto ranked = rank_top_k(q2, big, 50, TaskId::kGctr, false);
  for (std::size_t i = 1; i < ranked.size(); ++i) EXPECT_GE(ranked[i - 1].prob, ranked[i].prob);

  const EmbeddingStore mixed = random_store(rng, 60, true);
  std::size_t unmasked = 0;
  for (std::size_t r = 0; r < mixed.size(); ++r) unmasked += !mixed.embedding(r, TaskId::kOctr).masked;
  EXPECT_LT(unmasked, 60u);
  EXPECT_EQ(rank_top_k(random_query(rng, mixed), mixed, 100, TaskId::kOctr, true).size(), unmasked);
  EXPECT_EQ(rank_top_k(random_query(rng, mixed), mixed, 100, TaskId::kCtr, true).size(), 60u);
}

TEST_F(TowersTest, RankThroughModelAndStore) {
  const auto items = examples(13, 40);
  const EmbeddingStore store = build_store(*model_, items);
  const Example query = examples(14, 1)[0];
  const auto top = rank_top_k(*model_, query, store, 10, TaskId::kGctr);
  ASSERT_EQ(top.size(), 10u);
  for (std::size_t i = 1; i < top.size(); ++i) EXPECT_GE(top[i - 1].prob, top[i].prob);
}

}  // namespace
}  // namespace mtmd
