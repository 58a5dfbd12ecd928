// Copyright 2026 The dofen Authors.
// SPDX-License-Identifier: Apache-2.0

// Deep oblivious forest ensemble.
//
// Forward pass for a batch of B rows with N_col features:
//   1. Condition generation: each feature j is mapped by its own sub-network
//      to N_cond soft conditions, giving M [B, N_cond, N_col].
//   2. rODT construction: a permutation frozen at build time scatters the
//      entries of M into O [B, N_rODT, d]; each row of O is one relaxed
//      oblivious tree of depth d.
//   3. rODT weighting: a per-rODT sub-network (grouped, no sharing across
//      rODTs) maps each row of O to N_head weights, w [B, N_rODT, N_head].
//   4. Forest ensemble: each of N_forest forests owns a frozen subset of
//      N_estimator rODTs. Per head, the members' weights are softmaxed and
//      used to sum the matching slice of their embeddings (rows of E). A
//      shared predictor maps each forest embedding to an output; outputs are
//      averaged, and the training loss is the sum of per-forest losses.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dofen/config.hpp"
#include "dofen/data.hpp"
#include "dofen/rng.hpp"
#include "dofen/tensor.hpp"

namespace dofen {

struct FeatureSpec {
  std::string name;
  bool categorical = false;
  std::size_t cardinality = 0;  // categorical only; includes the unknown code 0
};

struct ModelSchema {
  std::vector<FeatureSpec> features;  // column order of M
  data::TaskKind task = data::TaskKind::classification;
  std::size_t out_dim = 2;

  std::size_t n_col() const { return features.size(); }
  std::size_t n_numeric() const;
  std::size_t n_categorical() const;

  static ModelSchema from_preprocessor(const data::Preprocessor& prep);
  nlohmann::json to_json() const;
  static ModelSchema from_json(const nlohmann::json& j);
};

// pi[n] is the slot of O that receives entry n of row-major M (n = u*N_col + v);
// source[s] is the inverse.
struct PermutationPlan {
  std::vector<std::uint32_t> pi;
  std::vector<std::uint32_t> source;

  static PermutationPlan from_pi(std::vector<std::uint32_t> pi);
  bool is_bijection() const;
};

// Forest membership in compressed rows: forest r owns
// members[offsets[r] .. offsets[r+1]).
struct ForestPlan {
  std::vector<std::uint32_t> members;
  std::vector<std::uint32_t> offsets{0};

  std::size_t forests() const { return offsets.size() - 1; }
  std::span<const std::uint32_t> row(std::size_t r) const {
    return std::span<const std::uint32_t>(members).subspan(offsets[r], offsets[r + 1] - offsets[r]);
  }
  void add_row(std::span<const std::uint32_t> row);
};

enum class ForestPath {
  fused,                  // multi-head pooling kernel; any N_head
  single_head_reference,  // per-forest gather/softmax/matmul; N_head == 1 only
};

template <class T>
struct ForestOutput {
  ad::Tensor<T> mean;        // [B, out_dim]
  ad::Tensor<T> per_forest;  // [B, N_forest, out_dim]
};

template <class T>
struct LossOutput {
  ad::Tensor<T> mean;
  ad::Tensor<T> per_forest;
  ad::Tensor<T> loss;  // scalar
};

// Scores for one batch: class probabilities [B, C] (classification) or
// standardized values [B] (regression).
struct Prediction {
  data::TaskKind task = data::TaskKind::classification;
  std::size_t rows = 0;
  std::size_t num_classes = 0;
  std::vector<double> scores;
  std::vector<std::int32_t> labels;  // argmax, lowest index on ties
};

template <class T>
class DofenModel {
 public:
  using Tensor = ad::Tensor<T>;
  using Tape = ad::Tape<T>;

  DofenModel() = default;

  // Every random draw derives from config.seed on independent named streams.
  static DofenModel build(const DofenConfig& config, const ModelSchema& schema);

  const DofenConfig& config() const { return config_; }
  const ModelSchema& schema() const { return schema_; }
  const DerivedShapes& shapes() const { return shapes_; }
  const PermutationPlan& permutation() const { return perm_; }
  const ForestPlan& forest_plan() const { return plan_; }
  const std::vector<std::uint32_t>& pruned() const { return pruned_; }

  std::vector<std::pair<std::string, Tensor>>& parameters() { return params_; }
  const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }
  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;
  std::size_t parameter_count() const;

  // Deep copy; the result shares no storage with this model.
  DofenModel clone() const;

  Tensor generate_conditions(Tape& tape, const data::Batch& batch) const;
  Tensor construct_rodts(Tape& tape, const Tensor& conditions) const;
  Tensor compute_rodt_weights(Tape& tape, const Tensor& rodts, bool training) const;
  ForestOutput<T> forest_forward(Tape& tape, const Tensor& weights, bool training,
                                 ForestPath path = ForestPath::fused) const;
  // Shared predictor applied to forest embeddings [B, R, N_hidden] -> [B, R, out].
  Tensor predict_head(Tape& tape, const Tensor& forest_embeddings, bool training) const;
  LossOutput<T> forward_loss(Tape& tape, const data::Batch& batch, bool training,
                             ForestPath path = ForestPath::fused) const;

  Prediction predict(const data::Batch& batch, ForestPath path = ForestPath::fused) const;

  // Fresh forest membership drawn for a training epoch.
  void resample_forests(std::uint64_t epoch);
  // Replaces the plan and records the removed rODTs (used by pruning).
  void set_pruned_plan(ForestPlan plan, std::vector<std::uint32_t> pruned);

  // Reassembles a model from stored pieces (checkpoint loading).
  static DofenModel assemble(const DofenConfig& config, const ModelSchema& schema,
                             std::vector<std::pair<std::string, Tensor>> params, PermutationPlan perm,
                             ForestPlan plan, std::vector<std::uint32_t> pruned);

 private:
  DofenConfig config_;
  ModelSchema schema_;
  DerivedShapes shapes_;
  std::vector<std::pair<std::string, Tensor>> params_;
  PermutationPlan perm_;
  ForestPlan plan_;
  std::vector<std::uint32_t> pruned_;  // sorted
  std::vector<std::uint32_t> m_gather_;  // internal column layout -> M layout
  mutable CounterRng dropout_rng_;

  void init_layout();
  ForestPlan draw_plan(CounterRng rng) const;
};

// Frozen permutation for a config; identity when condition shuffling is ablated.
PermutationPlan draw_permutation(const DofenConfig& config, std::size_t n_cond, std::size_t n_col);

extern template class DofenModel<float>;
extern template class DofenModel<double>;

}  // namespace dofen
