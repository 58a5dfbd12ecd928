// Copyright 2026 The dofen Authors.
// SPDX-License-Identifier: Apache-2.0

// Tabular data: CSV loading, preprocessing, splitting and batching.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace dofen::data {

enum class ColumnKind { numerical, categorical };
enum class ColumnRole { feature, target };
enum class TaskKind { classification, regression };

struct ColumnSchema {
  std::string name;
  ColumnKind kind = ColumnKind::numerical;
  ColumnRole role = ColumnRole::feature;
};

struct TableSchema {
  std::vector<ColumnSchema> columns;
  TaskKind task = TaskKind::classification;

  // Throws ConfigError unless there is exactly one target and >= 1 feature.
  void validate() const;
  std::size_t target_index() const;
  std::vector<std::size_t> feature_indices() const;
  std::size_t feature_count() const;
};

// Column-typed raw table. Numerical cells are parsed doubles; categorical
// cells (and classification targets) keep their text.
struct TableDataset {
  TableSchema schema;
  std::size_t rows = 0;
  std::vector<std::vector<double>> numeric;      // indexed by schema column; empty if not numeric
  std::vector<std::vector<std::string>> labels;  // indexed by schema column; empty if not text
  bool has_target = true;

  TableDataset subset(const std::vector<std::size_t>& row_indices) const;
};

struct CsvOptions {
  // Accept files without the target column (prediction inputs).
  bool target_optional = false;
};

TableDataset load_csv(const std::string& path, const TableSchema& schema, const CsvOptions& options = {});
TableDataset parse_csv(const std::string& text, const TableSchema& schema, const CsvOptions& options = {},
                       const std::string& source = "<memory>");
// RFC-4180 style record splitting (double-quote escaping).
std::vector<std::vector<std::string>> split_csv_records(const std::string& text);

// Model-ready form. Features follow schema order: numerical values are
// z-scored, categorical values are dense codes with 0 reserved for unknown.
struct EncodedDataset {
  std::size_t rows = 0;
  std::size_t num_numeric = 0;
  std::size_t num_categorical = 0;
  std::vector<double> numeric;             // rows x num_numeric
  std::vector<std::int32_t> categorical;   // rows x num_categorical
  std::vector<std::int32_t> labels;        // classification
  std::vector<double> targets;             // regression, standardized
  bool has_target = true;
};

struct Batch {
  std::size_t rows = 0;
  std::size_t num_numeric = 0;
  std::size_t num_categorical = 0;
  std::vector<double> numeric;
  std::vector<std::int32_t> categorical;
  std::vector<std::int32_t> labels;
  std::vector<double> targets;
  bool has_target = true;
};

struct NumericStats {
  double mean = 0.0;
  double std = 1.0;
};

class Preprocessor {
 public:
  static Preprocessor fit(const TableDataset& train);

  EncodedDataset transform(const TableDataset& table) const;
  // Inverse of the numerical feature transform, rows x num_numeric.
  std::vector<double> inverse_numeric(const std::vector<double>& encoded) const;

  double destandardize_target(double z) const { return z * target_.std + target_.mean; }
  double standardize_target(double y) const { return (y - target_.mean) / target_.std; }

  TaskKind task() const { return schema_.task; }
  const TableSchema& schema() const { return schema_; }
  std::size_t num_classes() const { return classes_.size(); }
  const std::vector<std::string>& classes() const { return classes_; }
  // Cardinality of each categorical feature including the unknown code 0.
  std::vector<std::size_t> categorical_cardinalities() const;
  const std::vector<NumericStats>& numeric_stats() const { return numeric_stats_; }
  const std::vector<std::vector<std::string>>& vocabularies() const { return vocabularies_; }
  NumericStats target_stats() const { return target_; }

  // Count of categorical cells that mapped to the unknown code during the last transform().
  std::size_t last_unknown_count() const { return last_unknown_; }

  nlohmann::json to_json() const;
  static Preprocessor from_json(const nlohmann::json& j);

 private:
  TableSchema schema_;
  std::vector<NumericStats> numeric_stats_;              // per numerical feature, schema order
  std::vector<std::vector<std::string>> vocabularies_;   // per categorical feature; code = index + 1
  std::vector<std::map<std::string, std::int32_t>> lookup_;
  std::vector<std::string> classes_;
  std::map<std::string, std::int32_t> class_lookup_;
  NumericStats target_;
  mutable std::size_t last_unknown_ = 0;

  void rebuild_lookups();
};

struct SplitResult {
  std::vector<std::size_t> train, val, test;
  bool stratified = false;
  std::vector<std::string> warnings;
};

struct SplitFractions {
  double train = 0.7, val = 0.15, test = 0.15;
};

SplitResult split(const TableDataset& dataset, const SplitFractions& fractions, std::uint64_t seed);

// Effective batch size: the configured size, shrunk to 2^floor(log2(N/10))
// when N < 2560 (never below 1).
std::size_t adaptive_batch_size(std::size_t requested, std::size_t rows);

// Row order of one epoch; a pure function of (seed, epoch) when shuffling.
std::vector<std::size_t> epoch_order(std::size_t rows, bool shuffle, std::uint64_t seed, std::uint64_t epoch);

Batch gather_batch(const EncodedDataset& ds, std::span<const std::size_t> rows);

// Yields consecutive batches of an epoch order; the last one may be short.
class BatchIterator {
 public:
  BatchIterator(const EncodedDataset& ds, std::size_t batch_size, bool shuffle, std::uint64_t seed,
                std::uint64_t epoch);
  std::optional<Batch> next();
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  const EncodedDataset* ds_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

Batch full_batch(const EncodedDataset& ds);

nlohmann::json schema_to_json(const TableSchema& schema);
TableSchema schema_from_json(const nlohmann::json& j);
const char* to_string(TaskKind task);

}  // namespace dofen::data
