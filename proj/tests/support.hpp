// Copyright 2026 The dofen Authors.
// SPDX-License-Identifier: Apache-2.0

// Synthetic tables and toy models shared by the unit and acceptance tests.

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dofen/config.hpp"
#include "dofen/data.hpp"
#include "dofen/model.hpp"
#include "dofen/rng.hpp"

namespace dofen::testing {

inline ModelSchema toy_schema(std::size_t n_numeric, const std::vector<std::size_t>& cardinalities,
                              data::TaskKind task = data::TaskKind::classification, std::size_t out_dim = 2) {
  ModelSchema s;
  for (std::size_t i = 0; i < n_numeric; ++i) s.features.push_back({"x" + std::to_string(i), false, 0});
  for (std::size_t i = 0; i < cardinalities.size(); ++i) {
    s.features.push_back({"c" + std::to_string(i), true, cardinalities[i]});
  }
  s.task = task;
  s.out_dim = task == data::TaskKind::regression ? 1 : out_dim;
  return s;
}

inline DofenConfig toy_config(std::uint64_t seed, std::size_t n_head = 1) {
  DofenConfig c;
  c.depth = 2;
  c.multiplier = 2;
  c.n_head = n_head;
  c.n_forest = 2;
  c.n_hidden = 8;
  c.seed = seed;
  return c;
}

inline data::Batch random_batch(const ModelSchema& s, std::size_t rows, std::uint64_t seed) {
  auto rng = CounterRng::stream(seed, "test-batch");
  data::Batch b;
  b.rows = rows;
  b.num_numeric = s.n_numeric();
  b.num_categorical = s.n_categorical();
  for (std::size_t r = 0; r < rows; ++r) {
    for (const auto& f : s.features) {
      if (!f.categorical) b.numeric.push_back(rng.normal());
    }
    for (const auto& f : s.features) {
      if (f.categorical) b.categorical.push_back(static_cast<std::int32_t>(rng.below(f.cardinality)));
    }
    if (s.task == data::TaskKind::classification) {
      b.labels.push_back(static_cast<std::int32_t>(rng.below(s.out_dim)));
    } else {
      b.targets.push_back(rng.normal());
    }
  }
  return b;
}

inline data::ColumnSchema num_col(const std::string& name, data::ColumnRole role = data::ColumnRole::feature) {
  return {name, data::ColumnKind::numerical, role};
}

inline data::ColumnSchema cat_col(const std::string& name) {
  return {name, data::ColumnKind::categorical, data::ColumnRole::feature};
}

// Two numerical features and one categorical; label = [x1 + x2 + shift(color) > 0].
inline data::TableDataset separable_classification(std::size_t n, std::uint64_t seed) {
  data::TableDataset t;
  t.schema.task = data::TaskKind::classification;
  t.schema.columns = {num_col("x1"), num_col("x2"), cat_col("color"), num_col("label", data::ColumnRole::target)};
  t.rows = n;
  t.numeric.resize(4);
  t.labels.resize(4);
  auto rng = CounterRng::stream(seed, "separable");
  const char* colors[] = {"red", "green", "blue"};
  const double shift[] = {-0.5, 0.0, 0.5};
  for (std::size_t r = 0; r < n; ++r) {
    const double x1 = rng.normal(), x2 = rng.normal();
    const auto c = rng.below(3);
    t.numeric[0].push_back(x1);
    t.numeric[1].push_back(x2);
    t.labels[2].push_back(colors[c]);
    t.labels[3].push_back(x1 + x2 + shift[c] > 0 ? "1" : "0");
  }
  return t;
}

// y = 2 x1 - x2 + noise * eps, plus `extra` pure-noise columns x3, x4, ...
inline data::TableDataset linear_regression(std::size_t n, std::uint64_t seed, double noise = 0.1,
                                            std::size_t extra = 0) {
  data::TableDataset t;
  t.schema.task = data::TaskKind::regression;
  t.schema.columns = {num_col("x1"), num_col("x2")};
  for (std::size_t k = 0; k < extra; ++k) t.schema.columns.push_back(num_col("x" + std::to_string(k + 3)));
  t.schema.columns.push_back(num_col("y", data::ColumnRole::target));
  t.rows = n;
  t.numeric.resize(3 + extra);
  t.labels.resize(3 + extra);
  auto rng = CounterRng::stream(seed, "linear");
  for (std::size_t r = 0; r < n; ++r) {
    const double x1 = rng.normal(), x2 = rng.normal();
    t.numeric[0].push_back(x1);
    t.numeric[1].push_back(x2);
    t.numeric[2 + extra].push_back(2.0 * x1 - x2 + noise * rng.normal());
    for (std::size_t k = 0; k < extra; ++k) t.numeric[2 + k].push_back(rng.normal());
  }
  return t;
}

// Only x0 carries signal: y = sin(2 x0) + x0 + small noise; the rest is noise.
inline data::TableDataset informative_first(std::size_t n, std::size_t n_features, std::uint64_t seed) {
  data::TableDataset t;
  t.schema.task = data::TaskKind::regression;
  for (std::size_t j = 0; j < n_features; ++j) t.schema.columns.push_back(num_col("x" + std::to_string(j)));
  t.schema.columns.push_back(num_col("y", data::ColumnRole::target));
  t.rows = n;
  t.numeric.resize(n_features + 1);
  t.labels.resize(n_features + 1);
  auto rng = CounterRng::stream(seed, "informative");
  for (std::size_t r = 0; r < n; ++r) {
    double x0 = 0.0;
    for (std::size_t j = 0; j < n_features; ++j) {
      const double v = rng.normal();
      if (j == 0) x0 = v;
      t.numeric[j].push_back(v);
    }
    t.numeric[n_features].push_back(std::sin(2.0 * x0) + x0 + 0.05 * rng.normal());
  }
  return t;
}

struct Prepared {
  data::Preprocessor prep;
  data::EncodedDataset train, val, test;
};

inline Prepared prepare(const data::TableDataset& t, data::SplitFractions f, std::uint64_t seed) {
  const auto parts = data::split(t, f, seed);
  const auto train = t.subset(parts.train);
  auto prep = data::Preprocessor::fit(train);
  return {prep, prep.transform(train), prep.transform(t.subset(parts.val)), prep.transform(t.subset(parts.test))};
}

}  // namespace dofen::testing
