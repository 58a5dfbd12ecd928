// Copyright 2026 The dofen Authors.
// SPDX-License-Identifier: Apache-2.0

// Command implementations behind the dofen CLI. Each returns a process exit
// code and throws dofen::Error on failure.

#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>

#include "dofen/config.hpp"
#include "dofen/data.hpp"

namespace dofen {

// Config file layout:
//   {
//     "data":   {"csv": "train.csv", "task": "classification",
//                "columns": [{"name": "x", "kind": "numerical", "role": "feature"}, ...],
//                "split": {"train": 0.7, "val": 0.15, "test": 0.15}, "seed": 0},
//     "model":  {DofenConfig keys},
//     "train":  {TrainConfig keys},
//     "output": "runs/example"
//   }
// Relative paths resolve against the config file's directory.
struct RunConfig {
  std::string csv;
  data::TableSchema schema;
  data::SplitFractions split;
  std::uint64_t split_seed = 0;
  DofenConfig model;
  TrainConfig train;
  std::string output_dir;

  // Checks every model and training constraint before any work starts.
  void validate() const;
  // Sets the split, model and training seeds.
  void override_seeds(std::uint64_t seed);

  static RunConfig from_json(const nlohmann::json& j, const std::string& base_dir = ".");
  static RunConfig load(const std::string& path);
};

inline constexpr int kExitConstantTarget = 3;

template <class T>
int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed_override, std::ostream& out,
              std::ostream& err);

template <class T>
int cmd_evaluate(const std::string& checkpoint, const std::string& csv, const std::string& out_json,
                 std::ostream& out, std::ostream& err);

template <class T>
int cmd_predict(const std::string& checkpoint, const std::string& csv, const std::string& out_path,
                std::ostream& out, std::ostream& err);

template <class T>
int cmd_importance(const std::string& checkpoint, const std::string& csv, const std::string& out_path,
                   std::ostream& out, std::ostream& err);

template <class T>
int cmd_prune(const std::string& checkpoint, const std::string& csv, double ratio, const std::string& end,
              const std::string& out_path, std::ostream& out, std::ostream& err);

template <class T>
int cmd_inspect(const std::string& checkpoint, std::ostream& out, std::ostream& err);

// Shortest round-trip decimal form.
std::string format_double(double v);

}  // namespace dofen
