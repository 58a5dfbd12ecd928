// Copyright 2026 The dofen Authors.
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "dofen/error.hpp"
#include "dofen/interpret.hpp"
#include "reference.hpp"
#include "support.hpp"

using namespace dofen;
using dofen::testing::random_batch;
using dofen::testing::Reference;
using dofen::testing::toy_config;
using dofen::testing::toy_schema;
using Model = DofenModel<double>;

namespace {

data::EncodedDataset encoded_from(const data::Batch& b) {
  data::EncodedDataset ds;
  ds.rows = b.rows;
  ds.num_numeric = b.num_numeric;
  ds.num_categorical = b.num_categorical;
  ds.numeric = b.numeric;
  ds.categorical = b.categorical;
  ds.labels = b.labels;
  ds.targets = b.targets;
  return ds;
}

data::Batch row_of(const data::Batch& b, std::size_t r) {
  data::Batch one;
  one.rows = 1;
  one.num_numeric = b.num_numeric;
  one.num_categorical = b.num_categorical;
  one.numeric.assign(b.numeric.begin() + r * b.num_numeric, b.numeric.begin() + (r + 1) * b.num_numeric);
  one.categorical.assign(b.categorical.begin() + r * b.num_categorical,
                         b.categorical.begin() + (r + 1) * b.num_categorical);
  if (!b.labels.empty()) one.labels = {b.labels[r]};
  if (!b.targets.empty()) one.targets = {b.targets[r]};
  return one;
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

TEST_CASE("occurrence matrix: identity permutation gives blocks") {
  const std::size_t n_col = 3, d = 2, n_cond = 4;
  std::vector<std::uint32_t> id(n_cond * n_col);
  std::iota(id.begin(), id.end(), 0u);
  const auto f = occurrence_matrix(PermutationPlan::from_pi(id), n_col, d);
  CHECK(f.n_rodt == 6);
  for (std::size_t j = 0; j < f.n_rodt; ++j) {
    std::vector<std::uint32_t> want(n_col, 0);
    for (std::size_t k = 0; k < d; ++k) ++want[(j * d + k) % n_col];
    for (std::size_t c = 0; c < n_col; ++c) CHECK(f.at(j, c) == want[c]);
  }
}

TEST_CASE("occurrence matrix: row sums and brute-force attribution") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto m = Model::build(toy_config(seed), toy_schema(2, {3}));
    const auto f = occurrence_matrix(m);
    const std::size_t n_col = 3, d = 2;
    std::vector<std::uint32_t> brute(f.n_rodt * n_col, 0);
    const auto& pi = m.permutation().pi;
    for (std::size_t n = 0; n < pi.size(); ++n) {
      for (std::size_t slot = 0; slot < pi.size(); ++slot) {
        if (pi[n] == slot) ++brute[(slot / d) * n_col + n % n_col];
      }
    }
    CHECK(f.counts == brute);
    for (std::size_t j = 0; j < f.n_rodt; ++j) {
      CHECK(f.at(j, 0) + f.at(j, 1) + f.at(j, 2) == d);
    }
  }
}

TEST_CASE("sample importance: uniform weights follow occurrence counts") {
  auto m = Model::build(toy_config(3), toy_schema(3, {}));
  for (auto& [name, t] : m.parameters()) {
    if (name.rfind("delta2.linear", 0) == 0) std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
  }
  const auto t = sample_importance(m, random_batch(m.schema(), 1, 2));
  const auto f = occurrence_matrix(m);
  for (std::size_t c = 0; c < 3; ++c) {
    double total = 0;
    for (std::size_t j = 0; j < f.n_rodt; ++j) total += f.at(j, c);
    CHECK(std::abs(t[c] - total / (f.n_rodt * 2.0)) < 1e-15);
  }
}

TEST_CASE("sample importance: sums to one and matches a double loop") {
  for (std::size_t heads : {1u, 2u}) {
    auto m = Model::build(toy_config(17, heads), toy_schema(2, {4}));
    const auto b = random_batch(m.schema(), 1, 6);
    const auto t = sample_importance(m, b);
    CHECK(std::abs(sum(t) - 1.0) < 1e-6);

    Reference ref{m};
    const auto w = ref.weights(ref.rodts(ref.conditions(b, 0)));
    const std::size_t n = m.shapes().n_rodt, d = 2, n_col = 3;
    std::vector<double> avg(n), p(n);
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t h = 0; h < heads; ++h) avg[j] += w[j * heads + h] / heads;
      mx = std::max(mx, avg[j]);
    }
    double z = 0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(avg[j] - mx);
    for (std::size_t j = 0; j < n; ++j) p[j] = std::exp(avg[j] - mx) / z;
    std::vector<double> want(n_col, 0.0);
    const auto& pi = m.permutation().pi;
    for (std::size_t idx = 0; idx < pi.size(); ++idx) {
      for (std::size_t j = 0; j < n; ++j) {
        if (pi[idx] / d == j) want[idx % n_col] += p[j] / d;
      }
    }
    for (std::size_t c = 0; c < n_col; ++c) CHECK(std::abs(t[c] - want[c]) < 1e-10);
  }
}

TEST_CASE("dataset importance: single and duplicated rows") {
  auto m = Model::build(toy_config(4), toy_schema(2, {3}));
  const auto b = random_batch(m.schema(), 5, 1);
  const auto one = row_of(b, 2);
  const auto single = sample_importance(m, one);
  CHECK(dataset_importance(m, encoded_from(one)) == single);

  auto two = one;
  two.rows = 2;
  two.numeric.insert(two.numeric.end(), one.numeric.begin(), one.numeric.end());
  two.categorical.insert(two.categorical.end(), one.categorical.begin(), one.categorical.end());
  const auto dup = dataset_importance(m, encoded_from(two));
  for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(dup[c] - single[c]) < 1e-15);

  const auto all = dataset_importance(m, encoded_from(b));
  CHECK(std::abs(sum(all) - 1.0) < 1e-6);
  std::vector<double> mean(3, 0.0);
  for (std::size_t r = 0; r < 5; ++r) {
    const auto t = sample_importance(m, row_of(b, r));
    for (std::size_t c = 0; c < 3; ++c) mean[c] += t[c] / 5.0;
  }
  for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(all[c] - mean[c]) < 1e-12);
  CHECK_THROWS_AS(sample_importance(m, b), ShapeError);
}

TEST_CASE("weight profile: degenerate inputs and two-pass oracle") {
  auto m = Model::build(toy_config(8, 2), toy_schema(3, {}));
  const auto b = random_batch(m.schema(), 7, 3);

  auto prof1 = weight_profile(m, encoded_from(row_of(b, 0)));
  for (double s : prof1.std) CHECK(s == 0.0);

  auto constant = b;
  for (std::size_t r = 0; r < 7; ++r)
    for (std::size_t k = 0; k < 3; ++k) constant.numeric[r * 3 + k] = constant.numeric[k];
  for (double s : weight_profile(m, encoded_from(constant)).std) CHECK(s < 1e-15);

  const auto prof = weight_profile(m, encoded_from(b));
  const auto p = rodt_softmax(m, b);
  const std::size_t n = m.shapes().n_rodt;
  REQUIRE(prof.mean.size() == n);
  for (std::size_t j = 0; j < n; ++j) {
    double mean = 0;
    for (std::size_t r = 0; r < 7; ++r) mean += p[r * n + j];
    mean /= 7;
    double var = 0;
    for (std::size_t r = 0; r < 7; ++r) var += (p[r * n + j] - mean) * (p[r * n + j] - mean);
    CHECK(std::abs(prof.mean[j] - mean) < 1e-10);
    CHECK(std::abs(prof.std[j] - std::sqrt(var / 7)) < 1e-10);
  }
}

TEST_CASE("select_pruned: counts, ends and tie order") {
  WeightProfile prof;
  prof.mean = {0.1, 0.4, 0.1, 0.3, 0.1};
  prof.std = {0.2, 0.0, 0.2, 0.5, 0.2};
  CHECK(select_pruned(prof, {}, 0.0, PruneEnd::low_std).empty());
  CHECK(select_pruned(prof, {}, 0.4, PruneEnd::low_std) == std::vector<std::uint32_t>{1, 0});
  CHECK(select_pruned(prof, {}, 0.4, PruneEnd::high_std) == std::vector<std::uint32_t>{3, 0});
  CHECK(select_pruned(prof, {}, 0.6, PruneEnd::low_mean) == std::vector<std::uint32_t>{0, 2, 4});
  CHECK(select_pruned(prof, {}, 0.2, PruneEnd::high_mean) == std::vector<std::uint32_t>{1});
  CHECK(select_pruned(prof, {1}, 0.4, PruneEnd::low_std) == std::vector<std::uint32_t>{0, 2});
  CHECK_THROWS_AS(select_pruned(prof, {}, 1.0, PruneEnd::low_std), ConfigError);
  CHECK_THROWS_AS(parse_prune_end("middle"), ConfigError);
  CHECK(parse_prune_end(to_string(PruneEnd::high_mean)) == PruneEnd::high_mean);
}

TEST_CASE("prune: ratio zero is the identity on predictions") {
  auto m = Model::build(toy_config(5), toy_schema(2, {3}));
  const auto b = random_batch(m.schema(), 6, 2);
  const auto prof = weight_profile(m, encoded_from(b));
  const auto same = prune(m, prof, 0.0, PruneEnd::low_std);
  CHECK(same.predict(b).scores == m.predict(b).scores);
  CHECK(same.forest_plan().members == m.forest_plan().members);
}

TEST_CASE("prune: survivors renormalize and pruned rODTs get zero weight") {
  auto c = toy_config(6);
  c.n_forest = 3;
  auto m = Model::build(c, toy_schema(3, {}));
  const auto b = random_batch(m.schema(), 6, 4);
  const auto prof = weight_profile(m, encoded_from(b));
  const auto cut = prune(m, prof, 0.34, PruneEnd::high_std);
  REQUIRE(cut.pruned().size() == 2);
  for (std::size_t r = 0; r < cut.forest_plan().forests(); ++r) {
    for (auto j : cut.forest_plan().row(r)) {
      CHECK_FALSE(std::binary_search(cut.pruned().begin(), cut.pruned().end(), j));
    }
  }
  const auto p = rodt_softmax(cut, b);
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < 6; ++j) s += p[r * 6 + j];
    CHECK(std::abs(s - 1.0) < 1e-12);
    for (auto j : cut.pruned()) CHECK(p[r * 6 + j] == 0.0);
  }
}

TEST_CASE("prune: a single surviving member reduces to the head of its embedding") {
  auto m = Model::build(toy_config(10), toy_schema(3, {}));
  const std::uint32_t keep = 4;
  ForestPlan plan;
  plan.add_row(std::vector<std::uint32_t>{keep});
  plan.add_row(std::vector<std::uint32_t>{keep});
  std::vector<std::uint32_t> rest;
  for (std::uint32_t j = 0; j < 6; ++j)
    if (j != keep) rest.push_back(j);
  m.set_pruned_plan(plan, rest);

  const auto b = random_batch(m.schema(), 3, 9);
  const auto pred = m.predict(b);
  const auto e = m.param("embedding").data();
  const auto y = Reference{m}.head(std::vector<double>(e.begin() + keep * 8, e.begin() + (keep + 1) * 8));
  const double p0 = 1.0 / (1.0 + std::exp(y[1] - y[0]));
  for (std::size_t r = 0; r < 3; ++r) CHECK(std::abs(pred.scores[r * 2] - p0) < 1e-12);
}

TEST_CASE("prune: emptying a forest is rejected") {
  auto m = Model::build(toy_config(11), toy_schema(3, {}));
  WeightProfile prof;
  prof.mean.assign(6, 0.0);
  prof.std.assign(6, 1.0);
  for (auto j : m.forest_plan().row(0)) prof.std[j] = 0.0;
  const double ratio = (static_cast<double>(m.forest_plan().row(0).size()) + 0.5) / 6.0;
  CHECK_THROWS_AS(prune(m, prof, ratio, PruneEnd::low_std), ConfigError);
}
