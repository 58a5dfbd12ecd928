// Copyright 2026 The dofen Authors.
// SPDX-License-Identifier: Apache-2.0

#include "dofen/config.hpp"

#include <algorithm>
#include <cmath>

#include "dofen/error.hpp"

namespace dofen {
namespace {

template <class V>
void read(const nlohmann::json& j, const char* key, V& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key \"") + key + "\": " + e.what());
  }
}

}  // namespace

nlohmann::json DofenConfig::to_json() const {
  return {{"d", depth},
          {"m", multiplier},
          {"n_head", n_head},
          {"n_forest", n_forest},
          {"n_hidden", n_hidden},
          {"dropout_rate", dropout_rate},
          {"seed", seed},
          {"ablation_no_condition_shuffle", ablation_no_condition_shuffle},
          {"ablation_no_forest_ensemble", ablation_no_forest_ensemble},
          {"delta_layer_counts", {delta1_layers, delta2_layers, delta3_layers}},
          {"n_estimator_override", n_estimator_override},
          {"resample_forests_per_epoch", resample_forests_per_epoch},
          {"aggregation", aggregation == ForestAggregation::logits ? "logits" : "probabilities"}};
}

DofenConfig DofenConfig::from_json(const nlohmann::json& j) {
  DofenConfig c;
  read(j, "d", c.depth);
  read(j, "m", c.multiplier);
  read(j, "n_head", c.n_head);
  read(j, "n_forest", c.n_forest);
  read(j, "n_hidden", c.n_hidden);
  read(j, "dropout_rate", c.dropout_rate);
  read(j, "seed", c.seed);
  read(j, "ablation_no_condition_shuffle", c.ablation_no_condition_shuffle);
  read(j, "ablation_no_forest_ensemble", c.ablation_no_forest_ensemble);
  read(j, "n_estimator_override", c.n_estimator_override);
  read(j, "resample_forests_per_epoch", c.resample_forests_per_epoch);
  if (j.contains("delta_layer_counts")) {
    std::vector<std::size_t> counts;
    read(j, "delta_layer_counts", counts);
    if (counts.size() != 3) throw ConfigError("delta_layer_counts must hold three integers");
    c.delta1_layers = counts[0];
    c.delta2_layers = counts[1];
    c.delta3_layers = counts[2];
  }
  if (j.contains("aggregation")) {
    std::string agg;
    read(j, "aggregation", agg);
    if (agg == "logits") {
      c.aggregation = ForestAggregation::logits;
    } else if (agg == "probabilities") {
      c.aggregation = ForestAggregation::probabilities;
    } else {
      throw ConfigError("aggregation must be \"logits\" or \"probabilities\", got \"" + agg + "\"");
    }
  }
  return c;
}

DerivedShapes derive_shapes(const DofenConfig& c, std::size_t n_col) {
  if (n_col == 0) throw ConfigError("N_col must be >= 1");
  if (c.depth == 0) throw ConfigError("d must be >= 1");
  if (c.multiplier == 0) throw ConfigError("m must be >= 1");
  if (c.n_head == 0) throw ConfigError("N_head must be >= 1");
  if (c.n_forest == 0) throw ConfigError("N_forest must be >= 1");
  if (c.n_hidden == 0) throw ConfigError("N_hidden must be >= 1");
  if (c.delta1_layers == 0 || c.delta2_layers == 0 || c.delta3_layers == 0) {
    throw ConfigError("delta_layer_counts entries must be >= 1");
  }
  if (!(c.dropout_rate >= 0.0 && c.dropout_rate < 1.0)) throw ConfigError("dropout_rate must be in [0, 1)");

  DerivedShapes s;
  s.n_cond = c.multiplier * c.depth;
  if ((s.n_cond * n_col) % c.depth != 0) {
    throw ConfigError("constraint N_cond*N_col divisible by d violated");
  }
  s.n_rodt = s.n_cond * n_col / c.depth;
  const auto root = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n_col))));
  s.n_estimator = std::max<std::size_t>(2, root) * s.n_cond / c.depth;
  if (c.n_estimator_override != 0) s.n_estimator = c.n_estimator_override;
  if (c.n_hidden % c.n_head != 0) {
    throw ConfigError("constraint N_hidden divisible by N_head violated (" + std::to_string(c.n_hidden) + " % " +
                      std::to_string(c.n_head) + " != 0)");
  }
  if (s.n_estimator > s.n_rodt) {
    throw ConfigError("constraint N_estimator <= N_rODT violated (" + std::to_string(s.n_estimator) + " > " +
                      std::to_string(s.n_rodt) + ")");
  }
  return s;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam betas must be in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("adam eps must be > 0");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"learning_rate", learning_rate}, {"weight_decay", weight_decay}, {"batch_size", batch_size},
          {"adaptive_batch", adaptive_batch}, {"epochs", epochs},         {"beta1", beta1},
          {"beta2", beta2},                 {"adam_eps", adam_eps},       {"eval_every", eval_every},
          {"seed", seed},                   {"shuffle", shuffle},         {"keep_best", keep_best}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  read(j, "learning_rate", c.learning_rate);
  read(j, "weight_decay", c.weight_decay);
  read(j, "batch_size", c.batch_size);
  read(j, "adaptive_batch", c.adaptive_batch);
  read(j, "epochs", c.epochs);
  read(j, "beta1", c.beta1);
  read(j, "beta2", c.beta2);
  read(j, "adam_eps", c.adam_eps);
  read(j, "eval_every", c.eval_every);
  read(j, "seed", c.seed);
  read(j, "shuffle", c.shuffle);
  read(j, "keep_best", c.keep_best);
  c.validate();
  return c;
}

}  // namespace dofen
