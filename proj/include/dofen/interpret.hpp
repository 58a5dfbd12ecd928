// Copyright 2026 The dofen Authors.
// SPDX-License-Identifier: Apache-2.0

// Feature importance and weight-profile pruning of rODTs. All analyses run
// the model in inference mode.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dofen/data.hpp"
#include "dofen/model.hpp"

namespace dofen {

// counts[j * n_col + c]: slots of rODT j whose condition comes from column c.
struct OccurrenceMatrix {
  std::size_t n_rodt = 0;
  std::size_t n_col = 0;
  std::vector<std::uint32_t> counts;

  std::uint32_t at(std::size_t j, std::size_t c) const { return counts[j * n_col + c]; }
};

OccurrenceMatrix occurrence_matrix(const PermutationPlan& perm, std::size_t n_col, std::size_t depth);

template <class T>
OccurrenceMatrix occurrence_matrix(const DofenModel<T>& model) {
  return occurrence_matrix(model.permutation(), model.schema().n_col(), model.config().depth);
}

// Softmax over all active rODTs of the head-averaged raw weights, one row of
// N_rODT entries per sample; pruned rODTs get 0.
template <class T>
std::vector<double> rodt_softmax(const DofenModel<T>& model, const data::Batch& batch);

// t = F^T p / d for one probability row p.
std::vector<double> importance_from_weights(const OccurrenceMatrix& f, std::span<const double> p,
                                            std::size_t depth);

template <class T>
std::vector<double> sample_importance(const DofenModel<T>& model, const data::Batch& single_row);

// Mean of per-sample importances over the dataset.
template <class T>
std::vector<double> dataset_importance(const DofenModel<T>& model, const data::EncodedDataset& ds);

struct WeightProfile {
  std::vector<double> mean;
  std::vector<double> std;  // population standard deviation
};

template <class T>
WeightProfile weight_profile(const DofenModel<T>& model, const data::EncodedDataset& ds);

enum class PruneEnd { low_std, high_std, low_mean, high_mean };

PruneEnd parse_prune_end(const std::string& text);
const char* to_string(PruneEnd end);

// rODT indices removed by prune(), in selection order. Already pruned rODTs
// are never selected; ties break by ascending index.
std::vector<std::uint32_t> select_pruned(const WeightProfile& profile, const std::vector<std::uint32_t>& already,
                                         double ratio, PruneEnd end);

// Removes floor(ratio * N_rODT) rODTs from the chosen end of the profile.
// Throws ConfigError if ratio is outside [0, 1) or a forest would lose every member.
template <class T>
DofenModel<T> prune(const DofenModel<T>& model, const WeightProfile& profile, double ratio, PruneEnd end);

}  // namespace dofen
