#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "wwf/error.hpp"
#include "wwf/evaluation.hpp"
#include "wwf/experiment.hpp"
#include "wwf/synth.hpp"
#include "wwf/windowing.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

json parse(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw wwf::ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Wastewater-informed county case forecasting";

  auto base = py::register_exception<wwf::Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<wwf::ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<wwf::DataError>(m, "DataError", base.ptr());
  py::register_exception<wwf::ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<wwf::DivergenceError>(m, "DivergenceError", base.ptr());

  py::class_<wwf::Metrics>(m, "Metrics")
      .def_readonly("mae", &wwf::Metrics::mae)
      .def_readonly("smape", &wwf::Metrics::smape)
      .def_readonly("cv", &wwf::Metrics::cv)
      .def_readonly("count", &wwf::Metrics::count)
      .def("__repr__", [](const wwf::Metrics& x) { return "Metrics(" + x.to_json().dump() + ")"; });

  m.def(
      "compute_metrics",
      [](const std::vector<double>& actual, const std::vector<double>& forecast) {
        return wwf::compute_metrics(actual, forecast);
      },
      py::arg("actual"), py::arg("forecast"), "MAE, SMAPE and CV (None when the mean actual is 0).");

  m.def("window_count", &wwf::window_count, py::arg("length"), py::arg("lookback"), py::arg("horizon"),
        py::arg("stride") = 1);

  m.def(
      "split_chronological",
      [](std::size_t length, std::size_t lookback, std::size_t horizon, const std::string& county) {
        const auto s = wwf::split_chronological(length, {}, lookback, horizon, county);
        return py::make_tuple(s.train_end, s.val_end, s.length);
      },
      py::arg("length"), py::arg("lookback") = 30, py::arg("horizon") = 10, py::arg("county") = "",
      "Returns (train_end, val_end, length).");

  m.def(
      "config_hash", [](const std::string& config) { return wwf::ExperimentConfig::from_json(parse(config)).hash(); },
      py::arg("config_json"));

  m.def(
      "run",
      [](const std::string& subcommand, const std::string& config, const std::filesystem::path& out_dir) {
        const auto cfg = wwf::ExperimentConfig::from_json(parse(config));
        py::gil_scoped_release release;
        return wwf::run_subcommand(subcommand, cfg, out_dir);
      },
      py::arg("subcommand"), py::arg("config_json"), py::arg("out_dir"),
      "Runs one pipeline subcommand (synth, preprocess, train, backtest, ablate, explain, plot).");
}
