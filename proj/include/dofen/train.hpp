// Copyright 2026 The dofen Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dofen/config.hpp"
#include "dofen/data.hpp"
#include "dofen/model.hpp"

namespace dofen {

// Task metric. Regression with a constant target has no R²; it is reported as
// constant_target with no value.
struct MetricResult {
  std::string name;  // "accuracy" or "r2"
  std::optional<double> value;
  bool constant_target = false;

  nlohmann::json to_json() const;
};

MetricResult accuracy_metric(std::span<const std::int32_t> predicted, std::span<const std::int32_t> truth);
MetricResult r2_metric(std::span<const double> predicted, std::span<const double> truth);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;  // row-weighted mean of batch losses
  std::size_t batches = 0;
  std::size_t batch_size = 0;
  std::optional<MetricResult> val_metric;

  nlohmann::json to_json() const;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::uint64_t steps = 0;
  double wall_seconds = 0.0;
  std::optional<MetricResult> final_val_metric;
  std::optional<std::size_t> best_epoch;  // set when keep_best restored a snapshot
};

// Predictions for a whole dataset. values holds de-standardized regression
// outputs; scores holds class probabilities (classification) or standardized
// outputs (regression).
struct DatasetPrediction {
  Prediction raw;
  std::vector<double> values;
};

template <class T>
DatasetPrediction predict_dataset(const DofenModel<T>& model, const data::Preprocessor& prep,
                                  const data::EncodedDataset& ds, std::size_t chunk = 256);

template <class T>
MetricResult evaluate(const DofenModel<T>& model, const data::Preprocessor& prep, const data::EncodedDataset& ds);

struct TrainOptions {
  const data::EncodedDataset* validation = nullptr;
  // Stop after this many optimizer steps; negative means no limit.
  std::int64_t max_steps = -1;
  std::function<void(const EpochRecord&)> on_epoch;
};

// Epochs of shuffled mini-batches: forward_loss, backward, AdamW step.
// Throws NumericError naming the epoch and batch on a non-finite loss or gradient.
template <class T>
TrainReport train(DofenModel<T>& model, const data::Preprocessor& prep, const data::EncodedDataset& train_set,
                  const TrainConfig& config, const TrainOptions& options = {});

extern template DatasetPrediction predict_dataset<float>(const DofenModel<float>&, const data::Preprocessor&,
                                                         const data::EncodedDataset&, std::size_t);
extern template DatasetPrediction predict_dataset<double>(const DofenModel<double>&, const data::Preprocessor&,
                                                          const data::EncodedDataset&, std::size_t);

}  // namespace dofen
