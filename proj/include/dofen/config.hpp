// Copyright 2026 The dofen Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"

namespace dofen {

enum class ForestAggregation { logits, probabilities };

struct DofenConfig {
  std::size_t depth = 4;             // d, conditions per rODT
  std::size_t multiplier = 16;       // m, N_cond = m * d
  std::size_t n_head = 1;
  std::size_t n_forest = 100;
  std::size_t n_hidden = 128;
  double dropout_rate = 0.0;
  std::uint64_t seed = 0;
  bool ablation_no_condition_shuffle = false;
  bool ablation_no_forest_ensemble = false;
  // Linear layers in the condition / weighting / prediction sub-networks.
  std::size_t delta1_layers = 1;
  std::size_t delta2_layers = 2;
  std::size_t delta3_layers = 2;
  // 0 keeps the derived forest size.
  std::size_t n_estimator_override = 0;
  // Redraw forest membership at the start of every training epoch.
  bool resample_forests_per_epoch = false;
  ForestAggregation aggregation = ForestAggregation::logits;

  nlohmann::json to_json() const;
  static DofenConfig from_json(const nlohmann::json& j);
};

struct DerivedShapes {
  std::size_t n_cond = 0;
  std::size_t n_rodt = 0;
  std::size_t n_estimator = 0;
  bool operator==(const DerivedShapes&) const = default;
};

// N_cond = m*d, N_rODT = N_col*m, N_estimator = max(2, floor(sqrt(N_col))) * N_cond / d.
// Throws ConfigError naming the violated constraint.
DerivedShapes derive_shapes(const DofenConfig& config, std::size_t n_col);

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  std::size_t batch_size = 256;
  bool adaptive_batch = true;
  std::size_t epochs = 500;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t eval_every = 10;  // 0 disables periodic validation
  std::uint64_t seed = 0;
  bool shuffle = true;
  bool keep_best = false;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

}  // namespace dofen
