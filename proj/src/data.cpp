// Copyright 2026 The dofen Authors.
// SPDX-License-Identifier: Apache-2.0

#include "dofen/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "dofen/error.hpp"
#include "dofen/rng.hpp"

namespace dofen::data {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

std::optional<double> parse_number(std::string_view text) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  if (text.empty()) return std::nullopt;
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(value)) {
    return std::nullopt;
  }
  return value;
}

bool is_text_column(const ColumnSchema& c, TaskKind task) {
  if (c.role == ColumnRole::target) return task == TaskKind::classification;
  return c.kind == ColumnKind::categorical;
}

// Sorts labels numerically when they all parse as numbers, lexicographically otherwise.
void sort_labels(std::vector<std::string>& labels) {
  const bool numeric = std::all_of(labels.begin(), labels.end(),
                                   [](const std::string& s) { return parse_number(s).has_value(); });
  if (numeric) {
    std::stable_sort(labels.begin(), labels.end(), [](const std::string& a, const std::string& b) {
      return *parse_number(a) < *parse_number(b);
    });
  } else {
    std::sort(labels.begin(), labels.end());
  }
}

}  // namespace

const char* to_string(TaskKind task) {
  return task == TaskKind::classification ? "classification" : "regression";
}

void TableSchema::validate() const {
  std::size_t targets = 0, features = 0;
  std::set<std::string> names;
  for (const auto& c : columns) {
    if (c.name.empty()) throw ConfigError("schema: column with empty name");
    if (!names.insert(c.name).second) throw ConfigError("schema: duplicate column \"" + c.name + "\"");
    (c.role == ColumnRole::target ? targets : features)++;
  }
  if (targets != 1) {
    throw ConfigError("schema: expected exactly one target column, found " + std::to_string(targets));
  }
  if (features == 0) throw ConfigError("schema: at least one feature column is required");
}

std::size_t TableSchema::target_index() const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i].role == ColumnRole::target) return i;
  throw ConfigError("schema: no target column");
}

std::vector<std::size_t> TableSchema::feature_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i].role == ColumnRole::feature) out.push_back(i);
  return out;
}

std::size_t TableSchema::feature_count() const { return feature_indices().size(); }

TableDataset TableDataset::subset(const std::vector<std::size_t>& row_indices) const {
  TableDataset out;
  out.schema = schema;
  out.rows = row_indices.size();
  out.has_target = has_target;
  out.numeric.resize(numeric.size());
  out.labels.resize(labels.size());
  for (std::size_t c = 0; c < numeric.size(); ++c) {
    if (numeric[c].empty()) continue;
    out.numeric[c].reserve(row_indices.size());
    for (auto r : row_indices) out.numeric[c].push_back(numeric[c].at(r));
  }
  for (std::size_t c = 0; c < labels.size(); ++c) {
    if (labels[c].empty()) continue;
    out.labels[c].reserve(row_indices.size());
    for (auto r : row_indices) out.labels[c].push_back(labels[c].at(r));
  }
  return out;
}

std::vector<std::vector<std::string>> split_csv_records(const std::string& text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> fields;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  auto end_field = [&] {
    fields.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    // A blank line yields one empty field; skip it.
    if (!(fields.size() == 1 && fields[0].empty())) records.push_back(std::move(fields));
    fields.clear();
  };
  std::size_t i = 0;
  if (text.size() >= 3 && text.compare(0, 3, "\xEF\xBB\xBF") == 0) i = 3;
  for (; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"' && !field_started) {
      in_quotes = true;
      field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\n') {
      end_record();
    } else if (c == '\r') {
      if (i + 1 < text.size() && text[i + 1] == '\n') continue;
      end_record();
    } else {
      field.push_back(c);
      field_started = true;
    }
  }
  if (in_quotes) throw DataError("CSV: unterminated quoted field");
  if (!field.empty() || !fields.empty()) end_record();
  return records;
}

TableDataset parse_csv(const std::string& text, const TableSchema& schema, const CsvOptions& options,
                       const std::string& source) {
  schema.validate();
  const auto records = split_csv_records(text);
  if (records.empty()) throw DataError(source + ": file is empty");
  const auto& header = records.front();

  TableDataset ds;
  ds.schema = schema;
  ds.rows = records.size() - 1;
  ds.numeric.resize(schema.columns.size());
  ds.labels.resize(schema.columns.size());

  std::vector<std::optional<std::size_t>> position(schema.columns.size());
  for (std::size_t c = 0; c < schema.columns.size(); ++c) {
    const auto& col = schema.columns[c];
    const auto it = std::find_if(header.begin(), header.end(),
                                 [&](const std::string& h) { return trim(h) == col.name; });
    if (it == header.end()) {
      if (col.role == ColumnRole::target && options.target_optional) {
        ds.has_target = false;
        continue;
      }
      throw DataError(source + ": missing column \"" + col.name + "\"");
    }
    position[c] = static_cast<std::size_t>(it - header.begin());
  }

  for (std::size_t c = 0; c < schema.columns.size(); ++c) {
    if (!position[c]) continue;
    const auto& col = schema.columns[c];
    const bool text_col = is_text_column(col, schema.task);
    auto& nums = ds.numeric[c];
    auto& texts = ds.labels[c];
    (text_col ? texts.reserve(ds.rows) : nums.reserve(ds.rows));
    for (std::size_t r = 0; r < ds.rows; ++r) {
      const auto& rec = records[r + 1];
      auto where = [&] {
        return source + ": row " + std::to_string(r + 1) + ", column \"" + col.name + "\"";
      };
      if (rec.size() != header.size()) {
        throw DataError(source + ": row " + std::to_string(r + 1) + " has " + std::to_string(rec.size()) +
                        " fields, header has " + std::to_string(header.size()));
      }
      const std::string_view cell = trim(rec[*position[c]]);
      if (cell.empty()) throw DataError(where() + ": missing value");
      if (text_col) {
        texts.emplace_back(cell);
      } else {
        const auto v = parse_number(cell);
        if (!v) throw DataError(where() + ": cannot parse \"" + std::string(cell) + "\" as a number");
        nums.push_back(*v);
      }
    }
  }
  return ds;
}

TableDataset load_csv(const std::string& path, const TableSchema& schema, const CsvOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open CSV file \"" + path + "\"");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), schema, options, path);
}

Preprocessor Preprocessor::fit(const TableDataset& train) {
  if (train.rows == 0) throw DataError("preprocessor: training split is empty");
  if (!train.has_target) throw DataError("preprocessor: training data has no target column");
  Preprocessor p;
  p.schema_ = train.schema;
  for (auto c : train.schema.feature_indices()) {
    const auto& col = train.schema.columns[c];
    if (col.kind == ColumnKind::numerical) {
      const auto& v = train.numeric[c];
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      double var = 0.0;
      for (double x : v) var += (x - mean) * (x - mean);
      var /= static_cast<double>(v.size());
      p.numeric_stats_.push_back({mean, std::sqrt(var)});
    } else {
      std::set<std::string> uniq(train.labels[c].begin(), train.labels[c].end());
      std::vector<std::string> vocab(uniq.begin(), uniq.end());
      sort_labels(vocab);
      p.vocabularies_.push_back(std::move(vocab));
    }
  }
  const auto t = train.schema.target_index();
  if (train.schema.task == TaskKind::classification) {
    std::set<std::string> uniq(train.labels[t].begin(), train.labels[t].end());
    p.classes_.assign(uniq.begin(), uniq.end());
    sort_labels(p.classes_);
  } else {
    const auto& v = train.numeric[t];
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.size());
    const double sd = std::sqrt(var);
    p.target_ = {mean, sd > 0.0 ? sd : 1.0};
  }
  p.rebuild_lookups();
  return p;
}

void Preprocessor::rebuild_lookups() {
  lookup_.clear();
  for (const auto& vocab : vocabularies_) {
    std::map<std::string, std::int32_t> m;
    for (std::size_t i = 0; i < vocab.size(); ++i) m.emplace(vocab[i], static_cast<std::int32_t>(i + 1));
    lookup_.push_back(std::move(m));
  }
  class_lookup_.clear();
  for (std::size_t i = 0; i < classes_.size(); ++i) class_lookup_.emplace(classes_[i], static_cast<std::int32_t>(i));
}

std::vector<std::size_t> Preprocessor::categorical_cardinalities() const {
  std::vector<std::size_t> out;
  for (const auto& v : vocabularies_) out.push_back(v.size() + 1);
  return out;
}

EncodedDataset Preprocessor::transform(const TableDataset& table) const {
  if (table.schema.columns.size() != schema_.columns.size()) {
    throw DataError("transform: table schema does not match the fitted schema");
  }
  for (std::size_t c = 0; c < schema_.columns.size(); ++c) {
    const auto& a = schema_.columns[c];
    const auto& b = table.schema.columns[c];
    if (a.name != b.name || a.kind != b.kind || a.role != b.role) {
      throw DataError("transform: column \"" + b.name + "\" does not match fitted column \"" + a.name + "\"");
    }
  }
  EncodedDataset out;
  out.rows = table.rows;
  out.num_numeric = numeric_stats_.size();
  out.num_categorical = vocabularies_.size();
  out.has_target = table.has_target;
  out.numeric.assign(out.rows * out.num_numeric, 0.0);
  out.categorical.assign(out.rows * out.num_categorical, 0);
  last_unknown_ = 0;
  std::size_t ni = 0, ci = 0;
  for (auto c : schema_.feature_indices()) {
    if (schema_.columns[c].kind == ColumnKind::numerical) {
      const auto s = numeric_stats_[ni];
      for (std::size_t r = 0; r < out.rows; ++r) {
        const double x = table.numeric[c][r];
        out.numeric[r * out.num_numeric + ni] = s.std > 0.0 ? (x - s.mean) / s.std : 0.0;
      }
      ++ni;
    } else {
      const auto& m = lookup_[ci];
      for (std::size_t r = 0; r < out.rows; ++r) {
        const auto it = m.find(table.labels[c][r]);
        std::int32_t code = 0;
        if (it != m.end()) {
          code = it->second;
        } else {
          ++last_unknown_;
        }
        out.categorical[r * out.num_categorical + ci] = code;
      }
      ++ci;
    }
  }
  if (table.has_target) {
    const auto t = schema_.target_index();
    if (schema_.task == TaskKind::classification) {
      out.labels.reserve(out.rows);
      for (std::size_t r = 0; r < out.rows; ++r) {
        const auto& label = table.labels[t][r];
        const auto it = class_lookup_.find(label);
        if (it == class_lookup_.end()) {
          throw DataError("row " + std::to_string(r + 1) + ": class label \"" + label +
                          "\" was not seen in the training split");
        }
        out.labels.push_back(it->second);
      }
    } else {
      out.targets.reserve(out.rows);
      for (std::size_t r = 0; r < out.rows; ++r) out.targets.push_back(standardize_target(table.numeric[t][r]));
    }
  }
  return out;
}

std::vector<double> Preprocessor::inverse_numeric(const std::vector<double>& encoded) const {
  const std::size_t k = numeric_stats_.size();
  std::vector<double> out(encoded.size());
  for (std::size_t i = 0; i < encoded.size(); ++i) {
    const auto s = numeric_stats_[i % k];
    out[i] = encoded[i] * s.std + s.mean;
  }
  return out;
}

nlohmann::json Preprocessor::to_json() const {
  nlohmann::json j;
  j["numeric"] = nlohmann::json::array();
  for (const auto& s : numeric_stats_) j["numeric"].push_back({{"mean", s.mean}, {"std", s.std}});
  j["vocabularies"] = vocabularies_;
  j["classes"] = classes_;
  j["target"] = {{"mean", target_.mean}, {"std", target_.std}};
  j["schema"] = schema_to_json(schema_);
  return j;
}

Preprocessor Preprocessor::from_json(const nlohmann::json& j) {
  Preprocessor p;
  p.schema_ = schema_from_json(j.at("schema"));
  for (const auto& s : j.at("numeric")) p.numeric_stats_.push_back({s.at("mean").get<double>(), s.at("std").get<double>()});
  p.vocabularies_ = j.at("vocabularies").get<std::vector<std::vector<std::string>>>();
  p.classes_ = j.at("classes").get<std::vector<std::string>>();
  p.target_ = {j.at("target").at("mean").get<double>(), j.at("target").at("std").get<double>()};
  p.rebuild_lookups();
  return p;
}

SplitResult split(const TableDataset& dataset, const SplitFractions& f, std::uint64_t seed) {
  if (f.train <= 0.0 || f.val < 0.0 || f.test < 0.0) {
    throw ConfigError("split: fractions must be non-negative with a positive train fraction");
  }
  if (f.train + f.val + f.test > 1.0 + 1e-12) {
    throw ConfigError("split: fractions sum to " + std::to_string(f.train + f.val + f.test) + " > 1");
  }
  const std::size_t n = dataset.rows;
  auto count = [n](double frac) { return static_cast<std::size_t>(std::floor(frac * static_cast<double>(n) + 1e-9)); };
  const std::size_t n_train = count(f.train), n_val = count(f.val), n_test = count(f.test);

  auto rng = CounterRng::stream(seed, "split");
  SplitResult result;
  std::vector<std::size_t> order;

  bool stratify = false;
  std::map<std::string, std::vector<std::size_t>> by_class;
  if (dataset.schema.task == TaskKind::classification && dataset.has_target) {
    const auto& labels = dataset.labels[dataset.schema.target_index()];
    for (std::size_t r = 0; r < n; ++r) by_class[labels[r]].push_back(r);
    stratify = std::all_of(by_class.begin(), by_class.end(), [](const auto& kv) { return kv.second.size() >= 3; });
    if (!stratify) result.warnings.push_back("split: a class has fewer than 3 rows; falling back to an unstratified split");
  }

  if (stratify) {
    // Spread each class evenly over [0, 1) and merge; every prefix of the
    // merged order then holds each class in proportion (within one row).
    struct Keyed {
      double key;
      std::uint64_t tie;
      std::size_t row;
    };
    std::vector<Keyed> keyed;
    keyed.reserve(n);
    for (auto& [label, rows] : by_class) {
      rng.shuffle(rows);
      const double offset = rng.uniform();
      const auto tie = rng.next_u64();
      for (std::size_t i = 0; i < rows.size(); ++i) {
        keyed.push_back({(static_cast<double>(i) + offset) / static_cast<double>(rows.size()), tie, rows[i]});
      }
    }
    std::sort(keyed.begin(), keyed.end(), [](const Keyed& a, const Keyed& b) {
      return a.key != b.key ? a.key < b.key : a.tie < b.tie;
    });
    for (const auto& k : keyed) order.push_back(k.row);
    result.stratified = true;
  } else {
    order.resize(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
  }

  // Contiguous windows of the merged order are class-balanced as well.
  result.train.assign(order.begin(), order.begin() + n_train);
  result.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  result.test.assign(order.begin() + n_train + n_val, order.begin() + n_train + n_val + n_test);
  return result;
}

std::size_t adaptive_batch_size(std::size_t requested, std::size_t rows) {
  if (requested == 0) throw ConfigError("batch_size must be >= 1");
  if (rows >= 2560) return requested;
  const double tenth = static_cast<double>(rows) / 10.0;
  if (tenth < 2.0) return 1;
  const auto shrunk = std::size_t{1} << static_cast<unsigned>(std::floor(std::log2(tenth)));
  return std::min(requested, shrunk);
}

std::vector<std::size_t> epoch_order(std::size_t rows, bool shuffle, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(rows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    auto rng = CounterRng::stream(seed, "batches").split(epoch);
    rng.shuffle(order);
  }
  return order;
}

Batch gather_batch(const EncodedDataset& ds, std::span<const std::size_t> rows) {
  Batch b;
  b.rows = rows.size();
  b.num_numeric = ds.num_numeric;
  b.num_categorical = ds.num_categorical;
  b.has_target = ds.has_target;
  b.numeric.reserve(rows.size() * ds.num_numeric);
  b.categorical.reserve(rows.size() * ds.num_categorical);
  for (auto r : rows) {
    for (std::size_t j = 0; j < ds.num_numeric; ++j) b.numeric.push_back(ds.numeric[r * ds.num_numeric + j]);
    for (std::size_t j = 0; j < ds.num_categorical; ++j) b.categorical.push_back(ds.categorical[r * ds.num_categorical + j]);
    if (ds.has_target) {
      if (!ds.labels.empty()) b.labels.push_back(ds.labels[r]);
      if (!ds.targets.empty()) b.targets.push_back(ds.targets[r]);
    }
  }
  return b;
}

Batch full_batch(const EncodedDataset& ds) {
  std::vector<std::size_t> rows(ds.rows);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return gather_batch(ds, rows);
}

BatchIterator::BatchIterator(const EncodedDataset& ds, std::size_t batch_size, bool shuffle, std::uint64_t seed,
                             std::uint64_t epoch)
    : ds_(&ds), batch_size_(batch_size), order_(epoch_order(ds.rows, shuffle, seed, epoch)) {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
}

std::optional<Batch> BatchIterator::next() {
  if (pos_ >= order_.size()) return std::nullopt;
  const std::size_t len = std::min(batch_size_, order_.size() - pos_);
  auto b = gather_batch(*ds_, std::span<const std::size_t>(order_).subspan(pos_, len));
  pos_ += len;
  return b;
}

nlohmann::json schema_to_json(const TableSchema& schema) {
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& c : schema.columns) {
    cols.push_back({{"name", c.name},
                    {"kind", c.kind == ColumnKind::numerical ? "numerical" : "categorical"},
                    {"role", c.role == ColumnRole::feature ? "feature" : "target"}});
  }
  return {{"task", to_string(schema.task)}, {"columns", cols}};
}

TableSchema schema_from_json(const nlohmann::json& j) {
  TableSchema s;
  const auto task = j.at("task").get<std::string>();
  if (task == "classification") {
    s.task = TaskKind::classification;
  } else if (task == "regression") {
    s.task = TaskKind::regression;
  } else {
    throw ConfigError("schema: unknown task \"" + task + "\"");
  }
  for (const auto& c : j.at("columns")) {
    ColumnSchema col;
    col.name = c.at("name").get<std::string>();
    const auto kind = c.value("kind", std::string("numerical"));
    if (kind == "numerical") {
      col.kind = ColumnKind::numerical;
    } else if (kind == "categorical") {
      col.kind = ColumnKind::categorical;
    } else {
      throw ConfigError("schema: column \"" + col.name + "\" has unknown kind \"" + kind + "\"");
    }
    const auto role = c.value("role", std::string("feature"));
    if (role == "feature") {
      col.role = ColumnRole::feature;
    } else if (role == "target") {
      col.role = ColumnRole::target;
    } else {
      throw ConfigError("schema: column \"" + col.name + "\" has unknown role \"" + role + "\"");
    }
    s.columns.push_back(std::move(col));
  }
  s.validate();
  return s;
}

}  // namespace dofen::data
