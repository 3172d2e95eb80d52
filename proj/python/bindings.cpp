#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>
#include <optional>
#include <string>

#include "avmfg/cost_model.hpp"
#include "avmfg/discretization.hpp"
#include "avmfg/errors.hpp"
#include "avmfg/experiments.hpp"
#include "avmfg/lwr.hpp"
#include "avmfg/micro_game.hpp"
#include "avmfg/solver.hpp"

namespace py = pybind11;
using namespace avmfg;

namespace {

ExperimentConfig to_config(const std::map<std::string, py::object>& settings) {
  ExperimentConfig c;
  for (const auto& [key, value] : settings) {
    std::string text;
    if (py::isinstance<py::bool_>(value)) {
      text = value.cast<bool>() ? "true" : "false";
    } else if (py::isinstance<py::list>(value) || py::isinstance<py::tuple>(value)) {
      for (const auto& item : value) {
        if (!text.empty()) text += ',';
        text += py::str(item).cast<std::string>();
      }
    } else {
      text = py::str(value).cast<std::string>();
    }
    c.set(key, text);
  }
  return c;
}

// (Nt + 1) x Nx array, time-major like the field storage.
py::array_t<double> to_array(const ScalarField& f) {
  const SpaceTimeGrid& g = f.grid();
  py::array_t<double> out({g.num_steps + 1, g.num_cells});
  std::copy(f.values().begin(), f.values().end(), out.mutable_data());
  return out;
}

py::dict report_dict(const SolveReport& r) {
  py::list levels;
  for (const auto& l : r.levels) {
    py::dict d;
    d["nx"] = l.nx;
    d["nt"] = l.nt;
    d["newton_iterations"] = l.newton_iterations;
    d["gmres_iterations"] = l.gmres_iterations;
    d["final_residual"] = l.final_residual;
    d["seconds"] = l.seconds;
    levels.append(d);
  }
  py::dict out;
  out["levels"] = levels;
  out["notes"] = r.notes;
  out["final_residual"] = r.final_residual();
  return out;
}

py::dict solution_dict(const SolutionTriple& s) {
  py::dict d;
  d["density"] = to_array(s.density);
  d["speed"] = to_array(s.speed);
  d["value"] = to_array(s.value);
  d["dx"] = s.density.grid().dx();
  d["dt"] = s.density.grid().dt();
  return d;
}

}  // namespace

PYBIND11_MODULE(_avmfg, m) {
  m.doc() = "Mean field game velocity control on a ring road";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<NonConvergenceError>(m, "NonConvergenceError", base.ptr());
  py::register_exception<DomainError>(m, "DomainError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<ConstraintError>(m, "ConstraintError", base.ptr());
  py::register_exception<LinearSolverError>(m, "LinearSolverError", base.ptr());

  py::class_<CostModel>(m, "CostModel")
      .def(py::init([](const std::string& key, double u_max, double rho_jam) {
             return CostModel::from_key(key, u_max, rho_jam);
           }),
           py::arg("key"), py::arg("u_max") = 1.0, py::arg("rho_jam") = 1.0)
      .def_property_readonly("key", [](const CostModel& c) { return std::string(c.key()); })
      .def_property_readonly("u_max", &CostModel::u_max)
      .def_property_readonly("rho_jam", &CostModel::rho_jam)
      .def("running_cost", &CostModel::running_cost, py::arg("u"), py::arg("rho"))
      .def("hamiltonian", &CostModel::hamiltonian, py::arg("p"), py::arg("rho"))
      .def("optimal_speed", &CostModel::optimal_speed, py::arg("p"), py::arg("rho"))
      .def("equilibrium_speed", &CostModel::equilibrium_speed, py::arg("rho"));

  m.def("default_config", [] { return ExperimentConfig{}.entries(); },
        "Every config key with its default value.");

  m.def("lf_step",
        [](const std::vector<double>& rho, const std::vector<double>& u, double length,
           double dt) {
          const int nx = static_cast<int>(rho.size());
          const SpaceTimeGrid g = SpaceTimeGrid::make(length, dt, nx, 1);
          return lf_step(rho, u, g);
        },
        py::arg("density"), py::arg("speed"), py::arg("length"), py::arg("dt"),
        "One Lax-Friedrichs step on a ring of the given length.");

  m.def("solve",
        [](const std::map<std::string, py::object>& settings) {
          const ExperimentConfig c = to_config(settings);
          std::optional<MfeRun> run;
          {
            py::gil_scoped_release release;
            run.emplace(run_mfe(c));
          }
          py::dict d = solution_dict(run->result.solution);
          d["report"] = report_dict(run->result.report);
          d["theorem1_residual"] =
              run->theorem1_residual ? py::cast(*run->theorem1_residual) : py::none();
          return d;
        },
        py::arg("settings") = std::map<std::string, py::object>{},
        "Solve the configured MFG; settings are config keys such as 'model'.");

  m.def("theorem1_residual",
        [](const std::map<std::string, py::object>& settings) {
          ExperimentConfig c = to_config(settings);
          c.set("model", "lwr");
          const ProblemSpec spec = make_problem(c);
          const LwrRun lwr =
              solve_lwr(spec.grid, spec.cost.tracked_speed(), spec.initial_cells);
          return verify_theorem1(lwr, spec);
        },
        py::arg("settings") = std::map<std::string, py::object>{});

  m.def("fundamental_diagram",
        [](const std::map<std::string, py::object>& settings) {
          const ExperimentConfig c = to_config(settings);
          FundamentalDiagram fd;
          {
            py::gil_scoped_release release;
            fd = fundamental_diagram(c);
          }
          return py::make_tuple(py::array(py::cast(fd.rho)), py::array(py::cast(fd.flow)));
        },
        py::arg("settings") = std::map<std::string, py::object>{});

  m.def("dg_validate",
        [](const std::map<std::string, py::object>& settings) {
          const ExperimentConfig c = to_config(settings);
          DgValidation v;
          {
            py::gil_scoped_release release;
            v = dg_validate(c);
          }
          py::list cases;
          for (const auto& k : v.cases) {
            py::dict d;
            d["model"] = k.model;
            d["N"] = k.cars;
            d["nx"] = k.grid.num_cells;
            d["nt"] = k.grid.num_steps;
            d["max_ra"] = k.accuracy.max_ra;
            d["mean_ra"] = k.accuracy.mean_ra;
            d["epsilon"] = k.accuracy.epsilon;
            d["cost_constructed"] = k.accuracy.cost_constructed;
            d["cost_best_response"] = k.accuracy.cost_best_response;
            cases.append(d);
          }
          return cases;
        },
        py::arg("settings") = std::map<std::string, py::object>{});

  m.attr("__version__") = version_string();
}
