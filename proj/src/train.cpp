// Copyright 2026 The dofen Authors.
// SPDX-License-Identifier: Apache-2.0

#include "dofen/train.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "dofen/error.hpp"
#include "dofen/optim.hpp"

namespace dofen {

nlohmann::json MetricResult::to_json() const {
  nlohmann::json j = {{"name", name}};
  if (constant_target) {
    j["outcome"] = "constant-target";
    j["value"] = nullptr;
  } else {
    j["value"] = value.value_or(0.0);
  }
  return j;
}

MetricResult accuracy_metric(std::span<const std::int32_t> predicted, std::span<const std::int32_t> truth) {
  if (predicted.size() != truth.size()) throw ShapeError("accuracy: prediction and label counts differ");
  if (truth.empty()) throw DataError("accuracy: empty dataset");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) correct += predicted[i] == truth[i];
  return {"accuracy", static_cast<double>(correct) / static_cast<double>(truth.size()), false};
}

MetricResult r2_metric(std::span<const double> predicted, std::span<const double> truth) {
  if (predicted.size() != truth.size()) throw ShapeError("r2: prediction and target counts differ");
  if (truth.empty()) throw DataError("r2: empty dataset");
  const double mean = std::accumulate(truth.begin(), truth.end(), 0.0) / static_cast<double>(truth.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ss_res += (truth[i] - predicted[i]) * (truth[i] - predicted[i]);
    ss_tot += (truth[i] - mean) * (truth[i] - mean);
  }
  if (ss_tot == 0.0) return {"r2", std::nullopt, true};
  return {"r2", 1.0 - ss_res / ss_tot, false};
}

nlohmann::json EpochRecord::to_json() const {
  nlohmann::json j = {{"epoch", epoch}, {"train_loss", train_loss}, {"batches", batches}, {"batch_size", batch_size}};
  if (val_metric) j["val_metric"] = val_metric->to_json();
  return j;
}

template <class T>
DatasetPrediction predict_dataset(const DofenModel<T>& model, const data::Preprocessor& prep,
                                  const data::EncodedDataset& ds, std::size_t chunk) {
  DatasetPrediction out;
  out.raw.task = model.schema().task;
  out.raw.num_classes = model.schema().task == data::TaskKind::classification ? model.schema().out_dim : 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.rows; start += chunk) {
    const std::size_t end = std::min(ds.rows, start + chunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto p = model.predict(data::gather_batch(ds, idx));
    out.raw.scores.insert(out.raw.scores.end(), p.scores.begin(), p.scores.end());
    out.raw.labels.insert(out.raw.labels.end(), p.labels.begin(), p.labels.end());
  }
  out.raw.rows = ds.rows;
  if (out.raw.task == data::TaskKind::regression) {
    out.values.reserve(ds.rows);
    for (double z : out.raw.scores) out.values.push_back(prep.destandardize_target(z));
  }
  return out;
}

template <class T>
MetricResult evaluate(const DofenModel<T>& model, const data::Preprocessor& prep, const data::EncodedDataset& ds) {
  if (ds.rows == 0) throw DataError("cannot evaluate on an empty dataset");
  if (!ds.has_target) throw DataError("cannot evaluate without a target column");
  const auto pred = predict_dataset(model, prep, ds);
  if (model.schema().task == data::TaskKind::classification) return accuracy_metric(pred.raw.labels, ds.labels);
  std::vector<double> truth;
  truth.reserve(ds.rows);
  for (double z : ds.targets) truth.push_back(prep.destandardize_target(z));
  return r2_metric(pred.values, truth);
}

namespace {

bool better(const MetricResult& a, const std::optional<MetricResult>& best) {
  if (!a.value) return false;
  return !best || !best->value || *a.value > *best->value;
}

}  // namespace

template <class T>
TrainReport train(DofenModel<T>& model, const data::Preprocessor& prep, const data::EncodedDataset& train_set,
                  const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  if (train_set.rows == 0) throw DataError("training split is empty");
  if (!train_set.has_target) throw DataError("training data has no target column");
  const auto started = std::chrono::steady_clock::now();

  const std::size_t bs = config.adaptive_batch ? data::adaptive_batch_size(config.batch_size, train_set.rows)
                                               : std::min(config.batch_size, train_set.rows);
  AdamW<T> opt({config.learning_rate, config.beta1, config.beta2, config.adam_eps, config.weight_decay},
               model.parameters());
  TrainReport report;
  std::optional<MetricResult> best;
  std::optional<DofenModel<T>> best_model;
  bool stop = options.max_steps == 0;

  for (std::size_t epoch = 1; epoch <= config.epochs && !stop; ++epoch) {
    if (model.config().resample_forests_per_epoch) model.resample_forests(epoch);
    data::BatchIterator it(train_set, bs, config.shuffle, config.seed, epoch);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.batch_size = bs;
    double loss_sum = 0.0;
    std::size_t rows = 0;
    while (auto batch = it.next()) {
      ad::Tape<T> tape;
      auto out = model.forward_loss(tape, *batch, true);
      const double loss = out.loss.item();
      const std::string where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(rec.batches + 1);
      if (!std::isfinite(loss)) throw NumericError("non-finite loss at " + where);
      opt.zero_grad();
      tape.backward(out.loss);
      try {
        opt.step();
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at " + where);
      }
      loss_sum += loss * static_cast<double>(batch->rows);
      rows += batch->rows;
      ++rec.batches;
      ++report.steps;
      if (options.max_steps > 0 && report.steps >= static_cast<std::uint64_t>(options.max_steps)) {
        stop = true;
        break;
      }
    }
    rec.train_loss = loss_sum / static_cast<double>(rows);
    const bool last = epoch == config.epochs || stop;
    if (options.validation && options.validation->rows > 0 &&
        ((config.eval_every > 0 && epoch % config.eval_every == 0) || last)) {
      rec.val_metric = evaluate(model, prep, *options.validation);
      if (config.keep_best && better(*rec.val_metric, best)) {
        best = rec.val_metric;
        best_model = model.clone();
        report.best_epoch = epoch;
      }
      if (last) report.final_val_metric = rec.val_metric;
    }
    report.epochs.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
  }

  if (config.keep_best && best_model) {
    model = std::move(*best_model);
    report.final_val_metric = best;
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

#define DOFEN_INSTANTIATE_TRAIN(T)                                                                           \
  template DatasetPrediction predict_dataset<T>(const DofenModel<T>&, const data::Preprocessor&,              \
                                                const data::EncodedDataset&, std::size_t);                    \
  template MetricResult evaluate<T>(const DofenModel<T>&, const data::Preprocessor&,                          \
                                    const data::EncodedDataset&);                                             \
  template TrainReport train<T>(DofenModel<T>&, const data::Preprocessor&, const data::EncodedDataset&,       \
                                const TrainConfig&, const TrainOptions&);

DOFEN_INSTANTIATE_TRAIN(float)
DOFEN_INSTANTIATE_TRAIN(double)

}  // namespace dofen
