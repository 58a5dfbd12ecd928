// Copyright 2026 The dofen Authors.
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <sstream>
#include <string>

#include "dofen/checkpoint.hpp"
#include "dofen/commands.hpp"
#include "dofen/error.hpp"
#include "dofen/interpret.hpp"
#include "dofen/train.hpp"

namespace py = pybind11;
using namespace dofen;

namespace {

py::object to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json from_py(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

data::EncodedDataset encode(const Checkpoint<double>& ck, const std::string& csv) {
  const auto table = data::load_csv(csv, ck.preprocessor.schema(), {.target_optional = true});
  return ck.preprocessor.transform(table);
}

class PyCheckpoint {
 public:
  explicit PyCheckpoint(Checkpoint<double> ck) : ck_(std::move(ck)) {}

  static PyCheckpoint load(const std::string& path) { return PyCheckpoint(load_checkpoint<double>(path)); }

  void save(const std::string& path) const { save_checkpoint(path, ck_.model, ck_.preprocessor); }

  std::string checksum() const { return checksum_hex(serialize_checkpoint(ck_.model, ck_.preprocessor)); }

  std::string task() const { return data::to_string(ck_.model.schema().task); }

  std::vector<std::string> features() const {
    std::vector<std::string> names;
    for (const auto& f : ck_.model.schema().features) names.push_back(f.name);
    return names;
  }

  std::vector<std::string> classes() const { return ck_.preprocessor.classes(); }

  py::dict shapes() const {
    const auto& s = ck_.model.shapes();
    py::dict d;
    d["N_col"] = ck_.model.schema().n_col();
    d["N_cond"] = s.n_cond;
    d["N_rODT"] = s.n_rodt;
    d["N_estimator"] = s.n_estimator;
    d["N_forest"] = ck_.model.forest_plan().forests();
    d["pruned"] = ck_.model.pruned().size();
    d["parameters"] = ck_.model.parameter_count();
    return d;
  }

  py::object config() const { return to_py(ck_.model.config().to_json()); }

  py::dict predict(const std::string& csv) const {
    const auto ds = encode(ck_, csv);
    const auto pred = predict_dataset(ck_.model, ck_.preprocessor, ds);
    py::dict out;
    if (ck_.model.schema().task == data::TaskKind::classification) {
      const auto& classes = ck_.preprocessor.classes();
      const std::size_t k = classes.size();
      py::array_t<double> probs({pred.raw.rows, k});
      auto p = probs.mutable_unchecked<2>();
      py::list labels;
      for (std::size_t i = 0; i < pred.raw.rows; ++i) {
        labels.append(classes[pred.raw.labels[i]]);
        for (std::size_t c = 0; c < k; ++c) p(i, c) = pred.raw.scores[i * k + c];
      }
      out["labels"] = labels;
      out["probabilities"] = probs;
    } else {
      out["values"] = py::array_t<double>(pred.values.size(), pred.values.data());
    }
    return out;
  }

  py::object evaluate(const std::string& csv) const {
    const auto ds = encode(ck_, csv);
    auto j = dofen::evaluate(ck_.model, ck_.preprocessor, ds).to_json();
    j["rows"] = ds.rows;
    return to_py(j);
  }

  py::dict importance(const std::string& csv) const {
    const auto t = dataset_importance(ck_.model, encode(ck_, csv));
    py::dict out;
    const auto names = features();
    for (std::size_t c = 0; c < t.size(); ++c) out[py::str(names[c])] = t[c];
    return out;
  }

  PyCheckpoint prune(const std::string& csv, double ratio, const std::string& end) const {
    const auto which = parse_prune_end(end);
    const auto profile = weight_profile(ck_.model, encode(ck_, csv));
    return PyCheckpoint({dofen::prune(ck_.model, profile, ratio, which), ck_.preprocessor});
  }

 private:
  Checkpoint<double> ck_;
};

py::object train_run(const std::string& config_path, std::optional<std::uint64_t> seed, const std::string& precision) {
  std::ostringstream out, err;
  if (precision == "f64") {
    cmd_train<double>(config_path, seed, out, err);
  } else if (precision == "f32") {
    cmd_train<float>(config_path, seed, out, err);
  } else {
    throw ConfigError("precision must be f32 or f64, got \"" + precision + "\"");
  }
  auto rc = RunConfig::load(config_path);
  if (seed) rc.override_seeds(*seed);
  const auto metrics = nlohmann::json::parse(read_file_bytes(rc.output_dir + "/metrics.json"));
  py::dict result;
  result["output_dir"] = rc.output_dir;
  result["metrics"] = to_py(metrics);
  result["warnings"] = err.str();
  return result;
}

py::dict shapes_for(std::size_t n_col, const py::object& config) {
  const auto c = config.is_none() ? DofenConfig{} : DofenConfig::from_json(from_py(config));
  const auto s = derive_shapes(c, n_col);
  py::dict d;
  d["N_cond"] = s.n_cond;
  d["N_rODT"] = s.n_rodt;
  d["N_estimator"] = s.n_estimator;
  return d;
}

}  // namespace

PYBIND11_MODULE(_dofen, m) {
  m.doc() = "DOFEN tabular engine: train, evaluate, predict, explain and prune.";

  static py::exception<Error> base(m, "DofenError", PyExc_RuntimeError);
  static py::exception<ShapeError> shape(m, "ShapeError", base.ptr());
  static py::exception<DataError> data_err(m, "DataError", base.ptr());
  static py::exception<ConfigError> config(m, "ConfigError", base.ptr());
  static py::exception<NumericError> numeric(m, "NumericError", base.ptr());
  static py::exception<FormatError> format(m, "FormatError", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ShapeError& e) {
      PyErr_SetString(shape.ptr(), e.what());
    } catch (const DataError& e) {
      PyErr_SetString(data_err.ptr(), e.what());
    } catch (const ConfigError& e) {
      PyErr_SetString(config.ptr(), e.what());
    } catch (const NumericError& e) {
      PyErr_SetString(numeric.ptr(), e.what());
    } catch (const FormatError& e) {
      PyErr_SetString(format.ptr(), e.what());
    } catch (const Error& e) {
      PyErr_SetString(base.ptr(), e.what());
    }
  });

  m.def("derive_shapes", &shapes_for, py::arg("n_col"), py::arg("config") = py::none(),
        "N_cond, N_rODT and N_estimator for a column count and model config dict.");
  m.def("train", &train_run, py::arg("config_path"), py::arg("seed") = py::none(), py::arg("precision") = "f32",
        "Run a training config; writes the run directory and returns its metrics.");

  py::class_<PyCheckpoint>(m, "Checkpoint")
      .def_static("load", &PyCheckpoint::load, py::arg("path"))
      .def("save", &PyCheckpoint::save, py::arg("path"))
      .def_property_readonly("checksum", &PyCheckpoint::checksum)
      .def_property_readonly("task", &PyCheckpoint::task)
      .def_property_readonly("features", &PyCheckpoint::features)
      .def_property_readonly("classes", &PyCheckpoint::classes)
      .def_property_readonly("shapes", &PyCheckpoint::shapes)
      .def_property_readonly("config", &PyCheckpoint::config)
      .def("predict", &PyCheckpoint::predict, py::arg("csv"))
      .def("evaluate", &PyCheckpoint::evaluate, py::arg("csv"))
      .def("importance", &PyCheckpoint::importance, py::arg("csv"))
      .def("prune", &PyCheckpoint::prune, py::arg("csv"), py::arg("ratio"), py::arg("end") = "low_std");
}
