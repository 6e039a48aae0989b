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

#include "mtmd/expert.hpp"
#include "mtmd/numkernel/grad_check.hpp"

namespace mtmd {
namespace {

using nk::Tensor2;

Tensor2 gaussian(nk::Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Tensor2 t(r, c);
  for (double& v : t.values()) v = scale * rng.normal();
  return t;
}

void zero_prefix(ParamStore& ps, const std::string& prefix) {
  for (auto& [id, slot] : ps.slots())
    if (id.rfind(prefix, 0) == 0 && id.find(".gamma") == std::string::npos) slot.value.set_zero();
}

TEST(DeepExpert, ShapeZeroAndGradCheck) {
  ModelConfig cfg;
  ParamStore ps;
  Ffn deep(ps, "deep", 36, cfg.deep_dims, Ffn::Style::kDeep, cfg);
  ps.initialize(1);
  EXPECT_EQ(deep.out_dim(), 128u);
  nk::Rng rng(1);
  const Tensor2 x = gaussian(rng, 5, 36);
  {
    Graph g(false);
    EXPECT_EQ(g.value(deep.forward(g, g.constant(x))).cols(), 128u);
  }
  auto rep = nk::grad_check(ps, [&](Graph& g, Var in) { return deep.forward(g, in); }, x,
                            {.max_coords_per_tensor = 30, .seed = 4});
  EXPECT_LE(rep.max_rel_error, 1e-4) << rep.worst;

  zero_prefix(ps, "deep");
  Graph g(false);
  for (double v : g.value(deep.forward(g, g.constant(x))).values()) EXPECT_EQ(v, 0.0);
}

TEST(ShallowExpert, ShapeAndGradCheck) {
  ModelConfig cfg;
  ParamStore ps;
  Ffn shallow(ps, "sh", 8, cfg.shallow_dims, Ffn::Style::kShallow, cfg);
  ps.initialize(2);
  EXPECT_EQ(shallow.out_dim(), 64u);
  nk::Rng rng(2);
  const Tensor2 x = gaussian(rng, 6, 8);
  Graph g(false);
  EXPECT_EQ(g.value(shallow.forward(g, g.constant(x))).cols(), 64u);
  auto rep = nk::grad_check(ps, [&](Graph& g, Var in) { return shallow.forward(g, in); }, x,
                            {.max_coords_per_tensor = 40, .seed = 5});
  EXPECT_LE(rep.max_rel_error, 1e-4) << rep.worst;
}

class RouteTest : public ::testing::Test {
 protected:
  RouteTest() {
    std::vector<std::size_t> dims = cfg.gate_dims;
    dims.push_back(kNumExperts);
    gate = Ffn(ps, "gate", 10, dims, Ffn::Style::kGate, cfg);
    ps.initialize(3);
  }
  ModelConfig cfg;
  ParamStore ps;
  Ffn gate;
  nk::Rng rng{3};
};

TEST_F(RouteTest, ZeroGateIsUniformMean) {
  zero_prefix(ps, "gate");
  const Tensor2 x = gaussian(rng, 4, 10);
  Graph g(false);
  std::array<Var, 3> outs;
  for (auto& o : outs) o = g.constant(gaussian(rng, 4, 128));
  Routed r = route_and_mix(g, g.constant(x), outs, gate);
  for (double w : g.value(r.weights).values()) EXPECT_DOUBLE_EQ(w, 1.0 / 3.0);
  const Tensor2& m = g.value(r.mixed);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double mean = (g.value(outs[0])[i] + g.value(outs[1])[i] + g.value(outs[2])[i]) / 3.0;
    EXPECT_NEAR(m[i], mean, 1e-12);
  }
}

TEST_F(RouteTest, EqualOutputsPassThrough) {
  const Tensor2 v = gaussian(rng, 4, 128);
  Graph g(false);
  Var c = g.constant(v);
  Routed r = route_and_mix(g, g.constant(gaussian(rng, 4, 10, 3.0)), {c, c, c}, gate);
  const Tensor2& m = g.value(r.mixed);
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_NEAR(m[i], v[i], 1e-12);
}

TEST_F(RouteTest, MatchesWeightedSumAndStaysOnSimplex) {
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor2 x = gaussian(rng, 3, 10, 4.0);
    std::array<Tensor2, 3> o = {gaussian(rng, 3, 128), gaussian(rng, 3, 128), gaussian(rng, 3, 128)};
    Graph g(false);
    Routed r = route_and_mix(g, g.constant(x), {g.constant(o[0]), g.constant(o[1]), g.constant(o[2])},
                             gate);
    const Tensor2 logits = g.value(gate.forward(g, g.constant(x)));
    for (std::size_t b = 0; b < 3; ++b) {
      const auto w = nk::softmax(logits.row_vector(b));
      double total = 0.0;
      for (std::size_t e = 0; e < 3; ++e) {
        EXPECT_GE(g.value(r.weights)(b, e), 0.0);
        EXPECT_NEAR(g.value(r.weights)(b, e), w[e], 1e-14);
        total += g.value(r.weights)(b, e);
      }
      EXPECT_NEAR(total, 1.0, 1e-9);
      for (std::size_t c = 0; c < 128; ++c) {
        const double direct = w[0] * o[0](b, c) + w[1] * o[1](b, c) + w[2] * o[2](b, c);
        EXPECT_NEAR(g.value(r.mixed)(b, c), direct, 1e-12);
      }
    }
  }
}

TEST(Dcn, ZeroParamsIsIdentity) {
  ParamStore ps;
  Dcn dcn(ps, "dcn", 128, 32, 2);
  ps.initialize(1);
  zero_prefix(ps, "dcn");
  nk::Rng rng(4);
  const Tensor2 x0 = gaussian(rng, 3, 128);
  Graph g(false);
  EXPECT_EQ(g.value(dcn.forward(g, g.constant(x0))), x0);
}

TEST(Dcn, SingleLayerUnitBiasDoubles) {
  ParamStore ps;
  Dcn dcn(ps, "dcn", 128, 32, 1);
  ps.initialize(1);
  zero_prefix(ps, "dcn");
  ps.at("dcn.layer0.b").value.fill(1.0);
  nk::Rng rng(5);
  const Tensor2 x0 = gaussian(rng, 2, 128);
  Graph g(false);
  const Tensor2& y = g.value(dcn.forward(g, g.constant(x0)));
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], 2.0 * x0[i]);
}

TEST(Dcn, MatchesDirectRecurrence) {
  ParamStore ps;
  Dcn dcn(ps, "dcn", 16, 4, 2);
  ps.initialize(7);
  for (auto& [id, slot] : ps.slots())
    if (id.ends_with(".b")) slot.value.fill(0.3);
  nk::Rng rng(6);
  const Tensor2 x0 = gaussian(rng, 1, 16);
  std::vector<double> x(x0.values().begin(), x0.values().end());
  for (int l = 0; l < 2; ++l) {
    const std::string p = "dcn.layer" + std::to_string(l);
    const Tensor2& u = ps.at(p + ".U").value;
    const Tensor2& v = ps.at(p + ".V").value;
    const Tensor2& b = ps.at(p + ".b").value;
    std::vector<double> low(4, 0.0), next(16);
    for (int k = 0; k < 4; ++k)
      for (int i = 0; i < 16; ++i) low[k] += v(i, k) * x[i];
    for (int i = 0; i < 16; ++i) {
      double c = b[i];
      for (int k = 0; k < 4; ++k) c += u(i, k) * low[k];
      next[i] = x0[i] * c + x[i];
    }
    x = next;
  }
  Graph g(false);
  const Tensor2& y = g.value(dcn.forward(g, g.constant(x0)));
  for (int i = 0; i < 16; ++i) EXPECT_NEAR(y[i], x[i], 1e-12);
}

TEST(Dcn, GradCheckTwoLayers) {
  ParamStore ps;
  Dcn dcn(ps, "dcn", 128, 32, 2);
  ps.initialize(8);
  for (auto& [id, slot] : ps.slots())
    if (id.ends_with(".b")) slot.value.fill(0.1);
  nk::Rng rng(8);
  auto rep = nk::grad_check(ps, [&](Graph& g, Var in) { return dcn.forward(g, in); },
                            gaussian(rng, 4, 128), {.max_coords_per_tensor = 60, .seed = 8});
  EXPECT_LE(rep.max_rel_error, 1e-4) << rep.worst;
}

// A domain expert wired the way a tower wires it, on raw tensor inputs.
struct ExpertRig {
  static constexpr std::size_t kIn = 20, kShared = 12, kHl = 8;
  ExpertRig(const ModelConfig& c, Side side = Side::kItem, std::size_t key = 1)
      : cfg(c),
        shared(ps, "ds", kShared, cfg.deep_dims, Ffn::Style::kDeep, cfg),
        expert(ps, "ex", side, key, kIn, kHl, cfg) {
    ps.initialize(11);
    const DomainKey d{Surface::kSearch, side == Side::kItem ? kProducts[key] : AdProduct::kShopping};
    for (int i = 0; i < 4; ++i) {
      examples.push_back(Example{});
      examples.back().domain = side == Side::kItem ? d : DomainKey{kSurfaces[key], AdProduct::kShopping};
    }
    for (const auto& e : examples) rows.push_back(&e);
  }
  ExpertOutput run(Graph& g, Var x) const {
    Var ds = shared.forward(g, nk::slice_cols(g, x, 0, kShared));
    return expert.forward(g, rows, x, ds, nk::slice_cols(g, x, kIn - kHl, kHl));
  }
  ModelConfig cfg;
  ParamStore ps;
  Ffn shared;
  DomainExpert expert;
  std::vector<Example> examples;
  std::vector<const Example*> rows;
};

TEST(DomainExpert, AllTasksProducedWithConfiguredDims) {
  for (bool constrained : {false, true}) {
    ModelConfig cfg;
    cfg.task_dims = constrained ? constrained_task_dims() : uniform_task_dims(64);
    ExpertRig rig(cfg);  // Shopping expert: OCTR still produced
    nk::Rng rng(1);
    Graph g(false);
    auto out = rig.run(g, g.constant(gaussian(rng, 4, ExpertRig::kIn)));
    for (TaskId t : kTasks) {
      EXPECT_EQ(g.value(out.deep[index(t)]).cols(), cfg.task_dims[index(t)]);
      EXPECT_EQ(g.value(out.shallow[index(t)]).cols(), 64u);
      EXPECT_EQ(g.value(out.deep[index(t)]).rows(), 4u);
    }
    if (constrained) {
      EXPECT_EQ(g.value(out.deep[0]).cols(), 128u);
      EXPECT_EQ(g.value(out.deep[1]).cols(), 32u);
      EXPECT_EQ(g.value(out.deep[2]).cols(), 32u);
    }
  }
}

TEST(DomainExpert, WrongDomainIsRoutingError) {
  ModelConfig cfg;
  ParamStore ps;
  DomainExpert shopping(ps, "ex", Side::kItem, index(AdProduct::kShopping), 4, 2, cfg);
  ps.initialize(1);
  Example e;
  e.domain = {Surface::kHomeFeed, AdProduct::kStandard};
  const std::vector<const Example*> rows = {&e};
  Graph g(false);
  Var x = g.constant(Tensor2(1, 4, 0.5));
  EXPECT_THROW(shopping.forward(g, rows, x, g.constant(Tensor2(1, 128)), g.constant(Tensor2(1, 2))),
               RoutingError);
  Example ok;
  ok.domain = {Surface::kHomeFeed, AdProduct::kShopping};
  const std::vector<const Example*> good = {&ok};
  try {
    shopping.forward(g, good, x, x, x);  // domain-shared input has the wrong width
    FAIL() << "expected a shape error";
  } catch (const RoutingError&) {
    FAIL() << "routed example rejected";
  } catch (const ConfigError&) {
  }
}

TEST(DomainExpert, GateWeightsOnSimplex) {
  ExpertRig rig(ModelConfig{});
  nk::Rng rng(2);
  Graph g(false);
  auto out = rig.run(g, g.constant(gaussian(rng, 4, ExpertRig::kIn, 5.0)));
  for (TaskId t : kTasks) {
    const Tensor2& w = g.value(out.gate_weights[index(t)]);
    for (std::size_t b = 0; b < w.rows(); ++b) {
      double s = 0.0;
      for (std::size_t e = 0; e < 3; ++e) {
        EXPECT_GE(w(b, e), 0.0);
        s += w(b, e);
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(DomainExpert, GradCheckWholeBlock) {
  for (bool pre_norm : {true, false}) {
    ModelConfig cfg;
    cfg.pre_norm = pre_norm;
    ExpertRig rig(cfg);
    nk::Rng rng(3);
    auto rep = nk::grad_check(
        rig.ps,
        [&](Graph& g, Var in) {
          auto out = rig.run(g, in);
          std::vector<Var> all;
          for (TaskId t : kTasks) {
            all.push_back(out.deep[index(t)]);
            all.push_back(out.shallow[index(t)]);
          }
          return nk::concat_cols(g, all);
        },
        gaussian(rng, 4, ExpertRig::kIn), {.max_coords_per_tensor = 12, .seed = 9});
    EXPECT_LE(rep.max_rel_error, 1e-4) << rep.worst << " pre_norm=" << pre_norm;
    EXPECT_GT(rep.coords, 500u);
  }
}

// Backward from a single task's deep embedding: shared experts get gradient,
// other tasks' deep experts do not.
TEST(DomainExpert, GradientPatternsPerTask) {
  ExpertRig rig(ModelConfig{});
  nk::Rng rng(4);
  const Tensor2 x = gaussian(rng, 4, ExpertRig::kIn);
  for (TaskId t : kTasks) {
    rig.ps.zero_grad();
    for (auto& [id, slot] : rig.ps.slots()) slot.touched = false;
    Graph g;
    auto out = rig.run(g, g.constant(x));
    g.backward(nk::dot_const(g, out.deep[index(t)], gaussian(rng, 4, g.value(out.deep[index(t)]).cols())));
    auto nonzero = [&](const std::string& id) { return rig.ps.at(id).grad.mat().cwiseAbs().maxCoeff() > 0.0; };
    EXPECT_TRUE(nonzero("ds.layer0.W"));
    EXPECT_TRUE(nonzero("ex.task_shared.layer0.W"));
    for (TaskId u : kTasks) {
      const std::string un(name(u));
      EXPECT_EQ(nonzero("ex.deep." + un + ".layer0.W"), u == t) << name(t) << " -> " << un;
      EXPECT_EQ(nonzero("ex.head." + un + ".W"), u == t);
      EXPECT_FALSE(nonzero("ex.shallow." + un + ".layer0.W"));
    }
  }
}

TEST(DomainExpert, PostNormDiffersFromPreNorm) {
  ModelConfig pre, post;
  post.pre_norm = false;
  ExpertRig a(pre), b(post);
  nk::Rng rng(5);
  const Tensor2 x = gaussian(rng, 4, ExpertRig::kIn);
  Graph g(false);
  auto oa = a.run(g, g.constant(x));
  auto ob = b.run(g, g.constant(x));
  EXPECT_FALSE(g.value(oa.deep[0]) == g.value(ob.deep[0]));
  EXPECT_EQ(g.value(oa.shallow[0]), g.value(ob.shallow[0]));
}

}  // namespace
}  // namespace mtmd
