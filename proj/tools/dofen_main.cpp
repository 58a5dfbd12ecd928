// Copyright 2026 The dofen Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "dofen/commands.hpp"
#include "dofen/error.hpp"

namespace {

struct Args {
  std::string config, checkpoint, data, out, end = "low_std";
  double ratio = 0.0;
  std::optional<std::uint64_t> seed_override;
};

template <class T>
int dispatch(const std::string& verb, const Args& a) {
  using namespace dofen;
  if (verb == "train") return cmd_train<T>(a.config, a.seed_override, std::cout, std::cerr);
  if (verb == "evaluate") return cmd_evaluate<T>(a.checkpoint, a.data, a.out, std::cout, std::cerr);
  if (verb == "predict") return cmd_predict<T>(a.checkpoint, a.data, a.out, std::cout, std::cerr);
  if (verb == "importance") return cmd_importance<T>(a.checkpoint, a.data, a.out, std::cout, std::cerr);
  if (verb == "prune") return cmd_prune<T>(a.checkpoint, a.data, a.ratio, a.end, a.out, std::cout, std::cerr);
  return cmd_inspect<T>(a.checkpoint, std::cout, std::cerr);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dofen: deep oblivious forest ensembles for tabular data"};
  app.require_subcommand(1);
  Args a;

  auto* train = app.add_subcommand("train", "train a model from a run config");
  train->add_option("--config", a.config, "run config JSON")->required();
  train->add_option("--seed-override", a.seed_override, "replace the split, model and training seeds");

  auto* evaluate = app.add_subcommand("evaluate", "print the task metric of a checkpoint on a CSV");
  evaluate->add_option("--checkpoint", a.checkpoint)->required();
  evaluate->add_option("--data", a.data, "CSV with the target column")->required();
  evaluate->add_option("--out", a.out, "also write the metric as JSON");

  auto* predict = app.add_subcommand("predict", "write per-row predictions");
  predict->add_option("--checkpoint", a.checkpoint)->required();
  predict->add_option("--data", a.data)->required();
  predict->add_option("--out", a.out, "predictions CSV")->required();

  auto* importance = app.add_subcommand("importance", "dataset feature importance");
  importance->add_option("--checkpoint", a.checkpoint)->required();
  importance->add_option("--data", a.data)->required();
  importance->add_option("--out", a.out, "importance CSV (stdout if omitted)");

  auto* prune = app.add_subcommand("prune", "remove rODTs ranked by their weight profile");
  prune->add_option("--checkpoint", a.checkpoint)->required();
  prune->add_option("--data", a.data, "CSV used to profile the rODT weights")->required();
  prune->add_option("--ratio", a.ratio, "fraction of rODTs to remove, in [0, 1)")->required();
  prune->add_option("--end", a.end, "low_std | high_std | low_mean | high_mean");
  prune->add_option("--out", a.out, "pruned checkpoint")->required();

  auto* inspect = app.add_subcommand("inspect", "print config, shapes, parameter counts and checksum");
  inspect->add_option("--checkpoint", a.checkpoint)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << '\n';
    return 2;
  }

  try {
    const std::string verb = app.get_subcommands().front()->get_name();
    const char* env = std::getenv("DOFEN_PRECISION");
    const std::string precision = env ? env : "f32";
    if (precision == "f32") return dispatch<float>(verb, a);
    if (precision == "f64") return dispatch<double>(verb, a);
    throw dofen::ConfigError("DOFEN_PRECISION must be f32 or f64, got \"" + precision + "\"");
  } catch (const dofen::Error& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << '\n';
  }
  return 1;
}
