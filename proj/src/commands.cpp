// Copyright 2026 The dofen Authors.
// SPDX-License-Identifier: Apache-2.0

#include "dofen/commands.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dofen/checkpoint.hpp"
#include "dofen/error.hpp"
#include "dofen/interpret.hpp"
#include "dofen/model.hpp"
#include "dofen/train.hpp"

namespace dofen {
namespace fs = std::filesystem;
namespace {

std::string resolve(const std::string& base_dir, const std::string& path) {
  if (path.empty() || fs::path(path).is_absolute()) return path;
  return (fs::path(base_dir) / path).lexically_normal().string();
}

void write_text(const std::string& path, const std::string& text) { write_file_bytes(path, text); }

void warn_unknown(std::size_t count, std::ostream& err) {
  if (count > 0) err << "warning: " << count << " categorical value(s) unseen in training mapped to unknown\n";
}

void warn_unknown(const data::Preprocessor& prep, std::ostream& err) { warn_unknown(prep.last_unknown_count(), err); }

std::string importance_csv(const data::TableSchema& schema, const std::vector<double>& t) {
  std::ostringstream s;
  s << "feature,importance\n";
  const auto idx = schema.feature_indices();
  for (std::size_t c = 0; c < t.size(); ++c) s << schema.columns[idx[c]].name << ',' << format_double(t[c]) << '\n';
  return s.str();
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void RunConfig::validate() const {
  schema.validate();
  derive_shapes(model, schema.feature_count());
  train.validate();
  if (csv.empty()) throw ConfigError("data.csv is required");
  if (output_dir.empty()) throw ConfigError("output directory is required");
  if (split.train <= 0.0 || split.val < 0.0 || split.test < 0.0 || split.train + split.val + split.test > 1.0 + 1e-12) {
    throw ConfigError("data.split fractions must be non-negative, with train > 0 and a sum <= 1");
  }
}

void RunConfig::override_seeds(std::uint64_t seed) {
  split_seed = seed;
  model.seed = seed;
  train.seed = seed;
}

RunConfig RunConfig::from_json(const nlohmann::json& j, const std::string& base_dir) {
  RunConfig c;
  try {
    const auto& d = j.at("data");
    c.csv = resolve(base_dir, d.at("csv").get<std::string>());
    c.schema = data::schema_from_json(d);
    if (d.contains("split")) {
      const auto& s = d.at("split");
      c.split.train = s.value("train", c.split.train);
      c.split.val = s.value("val", c.split.val);
      c.split.test = s.value("test", c.split.test);
    }
    c.split_seed = d.value("seed", std::uint64_t{0});
    if (j.contains("model")) c.model = DofenConfig::from_json(j.at("model"));
    if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
    const auto& o = j.at("output");
    c.output_dir = resolve(base_dir, o.is_string() ? o.get<std::string>() : o.at("dir").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return from_json(j, fs::path(path).parent_path().string());
}

template <class T>
int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed_override, std::ostream&,
              std::ostream& err) {
  auto rc = RunConfig::load(config_path);
  if (seed_override) {
    rc.override_seeds(*seed_override);
    rc.validate();
  }
  const auto table = data::load_csv(rc.csv, rc.schema);
  const auto parts = data::split(table, rc.split, rc.split_seed);
  for (const auto& w : parts.warnings) err << "warning: " << w << '\n';
  const auto train_table = table.subset(parts.train);
  const auto prep = data::Preprocessor::fit(train_table);
  const auto train_set = prep.transform(train_table);
  const auto val_set = prep.transform(table.subset(parts.val));
  std::size_t unknown = prep.last_unknown_count();
  const auto test_set = prep.transform(table.subset(parts.test));
  unknown += prep.last_unknown_count();
  warn_unknown(unknown, err);

  auto model = DofenModel<T>::build(rc.model, ModelSchema::from_preprocessor(prep));
  fs::create_directories(rc.output_dir);
  const auto dir = fs::path(rc.output_dir);
  std::ofstream log(dir / "train_log.jsonl", std::ios::trunc);
  if (!log) throw DataError("cannot write " + (dir / "train_log.jsonl").string());

  TrainOptions opts;
  opts.validation = val_set.rows > 0 ? &val_set : nullptr;
  opts.on_epoch = [&](const EpochRecord& r) { log << r.to_json().dump() << '\n'; };
  const auto report = train(model, prep, train_set, rc.train, opts);
  log.close();

  const auto bytes = serialize_checkpoint(model, prep);
  write_file_bytes((dir / "model.dofen").string(), bytes);

  nlohmann::json metrics = {{"task", data::to_string(prep.task())},
                            {"epochs", report.epochs.size()},
                            {"steps", report.steps},
                            {"batch_size", report.epochs.empty() ? 0 : report.epochs.front().batch_size},
                            {"wall_seconds", report.wall_seconds},
                            {"final_train_loss", report.epochs.empty() ? 0.0 : report.epochs.back().train_loss},
                            {"checkpoint_checksum", checksum_hex(bytes)},
                            {"split", {{"train", parts.train.size()},
                                       {"val", parts.val.size()},
                                       {"test", parts.test.size()},
                                       {"stratified", parts.stratified}}}};
  metrics["train_metric"] = evaluate(model, prep, train_set).to_json();
  if (val_set.rows > 0) metrics["val_metric"] = evaluate(model, prep, val_set).to_json();
  if (test_set.rows > 0) metrics["test_metric"] = evaluate(model, prep, test_set).to_json();
  if (report.best_epoch) metrics["best_epoch"] = *report.best_epoch;
  write_text((dir / "metrics.json").string(), metrics.dump(2) + "\n");
  write_text((dir / "importance.csv").string(),
             importance_csv(prep.schema(), dataset_importance(model, train_set)));
  return 0;
}

template <class T>
int cmd_evaluate(const std::string& checkpoint, const std::string& csv, const std::string& out_json,
                 std::ostream& out, std::ostream& err) {
  const auto ck = load_checkpoint<T>(checkpoint);
  const auto table = data::load_csv(csv, ck.preprocessor.schema());
  const auto ds = ck.preprocessor.transform(table);
  warn_unknown(ck.preprocessor, err);
  const auto metric = evaluate(ck.model, ck.preprocessor, ds);
  auto j = metric.to_json();
  j["rows"] = ds.rows;
  out << j.dump() << '\n';
  if (!out_json.empty()) write_text(out_json, j.dump(2) + "\n");
  if (metric.constant_target) {
    err << "error: data: target is constant; R^2 is undefined (constant-target)\n";
    return kExitConstantTarget;
  }
  return 0;
}

template <class T>
int cmd_predict(const std::string& checkpoint, const std::string& csv, const std::string& out_path, std::ostream&,
                std::ostream& err) {
  if (out_path.empty()) throw ConfigError("predict needs --out");
  const auto ck = load_checkpoint<T>(checkpoint);
  const auto table = data::load_csv(csv, ck.preprocessor.schema(), {.target_optional = true});
  const auto ds = ck.preprocessor.transform(table);
  warn_unknown(ck.preprocessor, err);
  const auto pred = predict_dataset(ck.model, ck.preprocessor, ds);

  std::ostringstream s;
  if (ck.model.schema().task == data::TaskKind::classification) {
    const auto& classes = ck.preprocessor.classes();
    s << "prediction";
    for (const auto& c : classes) s << ",prob_" << c;
    s << '\n';
    const std::size_t k = classes.size();
    for (std::size_t i = 0; i < pred.raw.rows; ++i) {
      s << classes[pred.raw.labels[i]];
      for (std::size_t c = 0; c < k; ++c) s << ',' << format_double(pred.raw.scores[i * k + c]);
      s << '\n';
    }
  } else {
    s << "prediction\n";
    for (double v : pred.values) s << format_double(v) << '\n';
  }
  write_text(out_path, s.str());
  return 0;
}

template <class T>
int cmd_importance(const std::string& checkpoint, const std::string& csv, const std::string& out_path,
                   std::ostream& out, std::ostream& err) {
  const auto ck = load_checkpoint<T>(checkpoint);
  const auto table = data::load_csv(csv, ck.preprocessor.schema(), {.target_optional = true});
  const auto ds = ck.preprocessor.transform(table);
  warn_unknown(ck.preprocessor, err);
  const auto text = importance_csv(ck.preprocessor.schema(), dataset_importance(ck.model, ds));
  if (out_path.empty()) {
    out << text;
  } else {
    write_text(out_path, text);
  }
  return 0;
}

template <class T>
int cmd_prune(const std::string& checkpoint, const std::string& csv, double ratio, const std::string& end,
              const std::string& out_path, std::ostream&, std::ostream& err) {
  if (out_path.empty()) throw ConfigError("prune needs --out");
  const auto which = parse_prune_end(end);
  if (!(ratio >= 0.0 && ratio < 1.0)) throw ConfigError("prune ratio must be in [0, 1), got " + format_double(ratio));
  const auto ck = load_checkpoint<T>(checkpoint);
  const auto table = data::load_csv(csv, ck.preprocessor.schema(), {.target_optional = true});
  const auto ds = ck.preprocessor.transform(table);
  warn_unknown(ck.preprocessor, err);
  const auto profile = weight_profile(ck.model, ds);
  const auto pruned = prune(ck.model, profile, ratio, which);
  save_checkpoint(out_path, pruned, ck.preprocessor);
  return 0;
}

template <class T>
int cmd_inspect(const std::string& checkpoint, std::ostream& out, std::ostream&) {
  const auto bytes = read_file_bytes(checkpoint);
  const auto ck = deserialize_checkpoint<T>(bytes, checkpoint);
  const auto& m = ck.model;
  const auto& sh = m.shapes();
  out << "format_version=" << kCheckpointVersion << '\n';
  out << "checksum=" << checksum_hex(bytes) << '\n';
  out << "task=" << data::to_string(m.schema().task) << '\n';
  out << "N_col=" << m.schema().n_col() << '\n';
  out << "N_cond=" << sh.n_cond << '\n';
  out << "N_rODT=" << sh.n_rodt << '\n';
  out << "N_estimator=" << sh.n_estimator << '\n';
  out << "N_forest=" << m.forest_plan().forests() << '\n';
  out << "pruned=" << m.pruned().size() << '\n';
  out << "config=" << m.config().to_json().dump() << '\n';
  for (const auto& [name, t] : m.parameters()) {
    out << "param " << name << ' ' << ad::shape_str(t.shape()) << ' ' << t.size() << '\n';
  }
  out << "parameters_total=" << m.parameter_count() << '\n';
  return 0;
}

#define DOFEN_INSTANTIATE_COMMANDS(T)                                                                         \
  template int cmd_train<T>(const std::string&, std::optional<std::uint64_t>, std::ostream&, std::ostream&);  \
  template int cmd_evaluate<T>(const std::string&, const std::string&, const std::string&, std::ostream&,     \
                               std::ostream&);                                                                \
  template int cmd_predict<T>(const std::string&, const std::string&, const std::string&, std::ostream&,      \
                              std::ostream&);                                                                 \
  template int cmd_importance<T>(const std::string&, const std::string&, const std::string&, std::ostream&,   \
                                 std::ostream&);                                                              \
  template int cmd_prune<T>(const std::string&, const std::string&, double, const std::string&,               \
                            const std::string&, std::ostream&, std::ostream&);                                \
  template int cmd_inspect<T>(const std::string&, std::ostream&, std::ostream&);

DOFEN_INSTANTIATE_COMMANDS(float)
DOFEN_INSTANTIATE_COMMANDS(double)

}  // namespace dofen
