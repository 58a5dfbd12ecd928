// Copyright 2026 The dofen Authors.
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"
#include "dofen/error.hpp"
#include "dofen/gradcheck.hpp"
#include "dofen/model.hpp"
#include "dofen/ops.hpp"
#include "reference.hpp"
#include "support.hpp"

using namespace dofen;
using dofen::testing::random_batch;
using dofen::testing::Reference;
using dofen::testing::toy_config;
using dofen::testing::toy_schema;
using Model = DofenModel<double>;
using Tape64 = ad::Tape<double>;

namespace {

std::vector<double> values(const ad::Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void zero_params(Model& m, const std::string& prefix) {
  for (auto& [name, t] : m.parameters()) {
    if (name.rfind(prefix, 0) == 0) std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
  }
}

}  // namespace

TEST_CASE("derived shapes") {
  DofenConfig c;
  const std::pair<std::size_t, DerivedShapes> cases[] = {
      {3, {64, 48, 32}}, {10, {64, 160, 48}}, {124, {64, 1984, 176}}, {419, {64, 6704, 320}}};
  for (const auto& [n_col, want] : cases) CHECK(derive_shapes(c, n_col) == want);
}

TEST_CASE("derived shapes name the violated constraint") {
  auto msg = [](const DofenConfig& c, std::size_t n_col) -> std::string {
    try {
      derive_shapes(c, n_col);
    } catch (const ConfigError& e) {
      return e.what();
    }
    return "";
  };
  DofenConfig c;
  c.n_head = 3;
  CHECK(msg(c, 3).find("N_hidden divisible by N_head") != std::string::npos);
  CHECK(msg(DofenConfig{}, 1).find("N_estimator <= N_rODT") != std::string::npos);
  DofenConfig o;
  o.n_estimator_override = 16;
  CHECK(derive_shapes(o, 1).n_estimator == 16);
}

TEST_CASE("build is deterministic and seed-sensitive") {
  const auto s = toy_schema(2, {4});
  auto a = Model::build(toy_config(3), s);
  auto b = Model::build(toy_config(3), s);
  auto c = Model::build(toy_config(4), s);
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    CHECK(values(a.parameters()[i].second) == values(b.parameters()[i].second));
  }
  CHECK(a.permutation().pi == b.permutation().pi);
  CHECK(a.forest_plan().members == b.forest_plan().members);

  DofenConfig big;
  big.seed = 1;
  auto x = Model::build(big, toy_schema(3, {}));
  big.seed = 2;
  auto y = Model::build(big, toy_schema(3, {}));
  CHECK(x.permutation().pi.size() == 192);
  CHECK(x.permutation().pi != y.permutation().pi);
  CHECK(a.permutation().pi != c.permutation().pi);
}

TEST_CASE("forest plan rows are distinct subsets of the right size") {
  DofenConfig c;
  c.seed = 5;
  auto m = Model::build(c, toy_schema(10, {}));
  const auto& plan = m.forest_plan();
  CHECK(plan.forests() == 100);
  for (std::size_t r = 0; r < plan.forests(); ++r) {
    auto row = plan.row(r);
    CHECK(row.size() == 48);
    std::set<std::uint32_t> uniq(row.begin(), row.end());
    CHECK(uniq.size() == row.size());
    CHECK(*uniq.rbegin() < 160);
  }
}

TEST_CASE("no condition shuffle gives the identity permutation") {
  auto c = toy_config(1);
  c.ablation_no_condition_shuffle = true;
  auto m = Model::build(c, toy_schema(3, {}));
  std::vector<std::uint32_t> id(m.permutation().pi.size());
  std::iota(id.begin(), id.end(), 0u);
  CHECK(m.permutation().pi == id);

  auto b = random_batch(m.schema(), 2, 1);
  Tape64 tape;
  auto M = m.generate_conditions(tape, b);
  auto O = m.construct_rodts(tape, M);
  CHECK(values(O) == values(M));
}

TEST_CASE("generate_conditions: zero parameters, locality and loop oracle") {
  auto m = Model::build(toy_config(2), toy_schema(2, {5}));
  const auto b = random_batch(m.schema(), 2, 3);
  Tape64 tape;
  auto M = m.generate_conditions(tape, b);
  CHECK(M.shape() == ad::Shape{2, 4, 3});

  Reference ref{m};
  std::vector<double> want;
  for (std::size_t i = 0; i < 2; ++i) {
    auto c = ref.conditions(b, i);
    want.insert(want.end(), c.begin(), c.end());
  }
  CHECK(max_abs_diff(values(M), want) < 1e-12);

  auto moved = b;
  moved.numeric[1] += 0.75;  // row 0, feature x1
  auto M2 = m.generate_conditions(tape, moved);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t u = 0; u < 4; ++u)
      for (std::size_t v = 0; v < 3; ++v) {
        const std::size_t k = (i * 4 + u) * 3 + v;
        if (i == 0 && v == 1) {
          CHECK(M2[k] != M[k]);
        } else {
          CHECK(M2[k] == M[k]);
        }
      }

  auto z = m.clone();
  zero_params(z, "delta1");
  for (double v : values(z.generate_conditions(tape, b))) CHECK(v == 0.0);
}

TEST_CASE("generate_conditions rejects out-of-range categorical codes") {
  auto m = Model::build(toy_config(2), toy_schema(2, {5}));
  auto b = random_batch(m.schema(), 2, 3);
  b.categorical[1] = 5;
  Tape64 tape;
  CHECK_THROWS_AS(m.generate_conditions(tape, b), DataError);
}

TEST_CASE("construct_rodts: conservation and index oracle") {
  auto m = Model::build(toy_config(9), toy_schema(3, {}));
  CHECK(m.permutation().is_bijection());
  const auto b = random_batch(m.schema(), 3, 4);
  Tape64 tape;
  auto M = m.generate_conditions(tape, b);
  auto O = m.construct_rodts(tape, M);
  CHECK(O.shape() == ad::Shape{3, 6, 2});
  Reference ref{m};
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<double> mm(M.data().begin() + i * 12, M.data().begin() + (i + 1) * 12);
    std::vector<double> oo(O.data().begin() + i * 12, O.data().begin() + (i + 1) * 12);
    CHECK(oo == ref.rodts(mm));
    std::sort(mm.begin(), mm.end());
    std::sort(oo.begin(), oo.end());
    CHECK(mm == oo);
  }
}

TEST_CASE("compute_rodt_weights: zero parameters, group locality and loop oracle") {
  auto m = Model::build(toy_config(6, 2), toy_schema(3, {}));
  const auto b = random_batch(m.schema(), 2, 5);
  Tape64 tape;
  auto O = m.construct_rodts(tape, m.generate_conditions(tape, b));
  auto w = m.compute_rodt_weights(tape, O, false);
  CHECK(w.shape() == ad::Shape{2, 6, 2});

  Reference ref{m};
  std::vector<double> want;
  for (std::size_t i = 0; i < 2; ++i) {
    auto wi = ref.weights(ref.rodts(ref.conditions(b, i)));
    want.insert(want.end(), wi.begin(), wi.end());
  }
  CHECK(max_abs_diff(values(w), want) < 1e-10);

  auto ov = values(O);
  for (std::size_t k = 0; k < 2; ++k) ov[5 * 2 + k] += 0.3;  // row 0, rODT 5
  auto w2 = m.compute_rodt_weights(tape, ad::Tensor<double>::from(O.shape(), ov), false);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const std::size_t j = (i / 2) % 6, row = i / 12;
    if (row == 0 && j == 5) {
      CHECK(w2[i] != w[i]);
    } else {
      CHECK(w2[i] == w[i]);
    }
  }

  auto z = m.clone();
  zero_params(z, "delta2.linear");
  for (double v : values(z.compute_rodt_weights(tape, O, false))) CHECK(v == 0.0);
}

TEST_CASE("forest pooling with equal weights averages the sampled embeddings") {
  auto m = Model::build(toy_config(7), toy_schema(3, {}));
  auto w = ad::Tensor<double>::zeros({1, 6, 1});
  Tape64 tape;
  auto f = ad::forest_pool(tape, w, m.param("embedding"), m.forest_plan().members, m.forest_plan().offsets);
  const auto e = m.param("embedding").data();
  for (std::size_t r = 0; r < m.forest_plan().forests(); ++r) {
    const auto row = m.forest_plan().row(r);
    for (std::size_t t = 0; t < 8; ++t) {
      double mean = 0;
      for (auto s : row) mean += e[s * 8 + t] / static_cast<double>(row.size());
      CHECK(std::abs(f[r * 8 + t] - mean) < 1e-15);
    }
  }
}

TEST_CASE("forest_forward: mean of per-forest outputs and single-head path") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto m = Model::build(toy_config(seed), toy_schema(2, {3}));
    const auto b = random_batch(m.schema(), 4, seed);
    Tape64 tape;
    auto w = m.compute_rodt_weights(tape, m.construct_rodts(tape, m.generate_conditions(tape, b)), false);
    auto fused = m.forest_forward(tape, w, false);
    auto single = m.forest_forward(tape, w, false, ForestPath::single_head_reference);
    CHECK(values(fused.per_forest) == values(single.per_forest));
    CHECK(values(fused.mean) == values(single.mean));
    const std::size_t R = m.forest_plan().forests();
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t k = 0; k < 2; ++k) {
        double s = 0;
        for (std::size_t r = 0; r < R; ++r) s += fused.per_forest[(i * R + r) * 2 + k];
        CHECK(std::abs(fused.mean[i * 2 + k] - s / R) < 1e-12);
      }
  }
  auto multi = Model::build(toy_config(1, 2), toy_schema(3, {}));
  Tape64 tape;
  auto w = ad::Tensor<double>::zeros({1, 6, 2});
  CHECK_THROWS_AS(multi.forest_forward(tape, w, false, ForestPath::single_head_reference), ConfigError);
}

TEST_CASE("one forest over every rODT equals the no-ensemble ablation") {
  auto a_cfg = toy_config(11);
  a_cfg.n_forest = 1;
  a_cfg.n_estimator_override = 6;
  auto b_cfg = toy_config(11);
  b_cfg.ablation_no_forest_ensemble = true;
  const auto s = toy_schema(3, {});
  auto a = Model::build(a_cfg, s);
  auto b = Model::build(b_cfg, s);
  const auto batch = random_batch(s, 5, 2);
  const auto pa = a.predict(batch), pb = b.predict(batch);
  CHECK(max_abs_diff(pa.scores, pb.scores) < 1e-6);
  CHECK(b.forest_plan().forests() == 1);
  CHECK(b.forest_plan().row(0).size() == 6);
}

TEST_CASE("forward_loss matches the loop reference") {
  for (std::size_t heads : {1u, 2u}) {
    for (auto task : {data::TaskKind::classification, data::TaskKind::regression}) {
      auto m = Model::build(toy_config(21 + heads, heads), toy_schema(2, {4}, task, 3));
      const auto b = random_batch(m.schema(), 4, 8);
      Tape64 tape;
      auto out = m.forward_loss(tape, b, false);
      CHECK(std::abs(out.loss.item() - Reference{m}.loss(b)) < 1e-8);
      CHECK(max_abs_diff(values(out.per_forest), Reference{m}.per_forest(b)) < 1e-10);
    }
  }
}

TEST_CASE("forward_loss: zero regression model and duplicated forests") {
  auto m = Model::build(toy_config(3), toy_schema(3, {}, data::TaskKind::regression));
  zero_params(m, "");
  auto b = random_batch(m.schema(), 4, 1);
  std::fill(b.targets.begin(), b.targets.end(), 0.0);
  Tape64 tape;
  CHECK(m.forward_loss(tape, b, false).loss.item() == 0.0);

  auto base = Model::build(toy_config(4), toy_schema(3, {}));
  const auto batch = random_batch(base.schema(), 4, 2);
  const auto row0 = base.forest_plan().row(0);
  ForestPlan one, three;
  one.add_row(row0);
  for (int k = 0; k < 3; ++k) three.add_row(row0);
  auto single = base.clone(), triple = base.clone();
  single.set_pruned_plan(one, {});
  triple.set_pruned_plan(three, {});
  const double l1 = single.forward_loss(tape, batch, false).loss.item();
  const double l3 = triple.forward_loss(tape, batch, false).loss.item();
  CHECK(std::abs(l3 - 3.0 * l1) < 1e-12);
}

TEST_CASE("predict: deterministic, symmetric logits give one half") {
  auto m = Model::build(toy_config(5), toy_schema(2, {3}));
  const auto b = random_batch(m.schema(), 6, 3);
  const auto p1 = m.predict(b), p2 = m.predict(b);
  CHECK(p1.scores == p2.scores);
  CHECK(p1.labels == p2.labels);
  for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(p1.scores[2 * i] + p1.scores[2 * i + 1] - 1.0) < 1e-12);

  zero_params(m, "delta3.linear.1");
  const auto half = m.predict(b);
  for (double v : half.scores) CHECK(v == 0.5);
  for (auto l : half.labels) CHECK(l == 0);
}

TEST_CASE("probability aggregation averages per-forest softmaxes") {
  auto c = toy_config(8);
  c.aggregation = ForestAggregation::probabilities;
  auto m = Model::build(c, toy_schema(3, {}));
  const auto b = random_batch(m.schema(), 3, 4);
  const auto p = m.predict(b);
  const auto y = Reference{m}.per_forest(b);
  const std::size_t R = m.forest_plan().forests();
  for (std::size_t i = 0; i < 3; ++i) {
    double want0 = 0;
    for (std::size_t r = 0; r < R; ++r) {
      const double a = y[(i * R + r) * 2], bb = y[(i * R + r) * 2 + 1];
      want0 += 1.0 / (1.0 + std::exp(bb - a)) / static_cast<double>(R);
    }
    CHECK(std::abs(p.scores[i * 2] - want0) < 1e-12);
  }
}

TEST_CASE("full model gradients match finite differences") {
  for (std::size_t heads : {1u, 2u}) {
    auto c = toy_config(31, heads);
    c.depth = 3;
    auto m = Model::build(c, toy_schema(2, {3}));
    const auto b = random_batch(m.schema(), 4, 9);
    std::vector<ad::Tensor<double>> params;
    std::vector<std::string> names;
    for (auto& [n, t] : m.parameters()) {
      params.push_back(t);
      names.push_back(n);
    }
    auto r = ad::finite_difference_check<double>(
        [&](Tape64& t) { return m.forward_loss(t, b, true).loss; }, params, 1e-5, names);
    INFO("heads=", heads, " worst=", r.worst_parameter, "[", r.worst_index, "] analytic=", r.analytic,
         " numeric=", r.numeric);
    CHECK(r.max_relative_error < 1e-4);
  }
}

TEST_CASE("resampling and clone independence") {
  auto c = toy_config(12);
  c.n_forest = 4;
  auto m = Model::build(toy_config(12), toy_schema(3, {}));
  auto copy = m.clone();
  copy.param("embedding").mutable_data()[0] += 1.0;
  CHECK(copy.param("embedding")[0] != m.param("embedding")[0]);

  auto r = Model::build(c, toy_schema(3, {}));
  const auto before = r.forest_plan().members;
  r.resample_forests(1);
  const auto one = r.forest_plan().members;
  r.resample_forests(1);
  CHECK(r.forest_plan().members == one);
  r.resample_forests(2);
  CHECK(r.forest_plan().members != one);
  CHECK(before.size() == one.size());
}
