#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>

#include "avmfg/errors.hpp"
#include "avmfg/experiments.hpp"

using namespace avmfg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("avmfg_unit_" + name);
  fs::remove_all(p);
  return p;
}

std::string first_line(const fs::path& file) {
  std::ifstream in(file);
  std::string line;
  std::getline(in, line);
  return line;
}

std::string error_of(const ExperimentConfig& c, const std::string& experiment) {
  try {
    c.validate(experiment);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

ExperimentConfig small_solve(const std::string& model) {
  ExperimentConfig c;
  c.set("model", model);
  c.set("grid.nx", "20");
  c.set("grid.nt", "80");
  c.set("solver.coarsest_nx", "10");
  return c;
}

}  // namespace

TEST_SUITE("experiments") {

TEST_CASE("defaults describe the ring-road setup") {
  const ExperimentConfig c;
  CHECK(c.get("model") == "lwr");
  CHECK(c.get_double("grid.length") == 1.0);
  CHECK(c.get_double("grid.horizon") == 3.0);
  CHECK(c.get_int("grid.nx") == 120);
  CHECK(c.get_int("grid.nt") == 480);
  CHECK(c.get_double("density.rho_a") == 0.05);
  CHECK(c.get_double("density.rho_b") == 0.95);
  CHECK(c.get_double("density.gamma") == 0.1);
  CHECK(c.get_int_list("micro.n") == std::vector<int>{21, 41, 61, 81, 101});
  for (const char* e : {"solve", "fd", "converge", "myopic", "dg-validate"}) {
    CHECK(error_of(c, e).empty());
  }
}

TEST_CASE("config text and overrides") {
  ExperimentConfig c;
  std::istringstream in(
      "# comment line\n"
      "model = nonseparable   # trailing comment\n"
      "\n"
      "grid.nx=60\n"
      "myopic.horizons = 0.5, 0.25\n");
  c.load(in);
  CHECK(c.get("model") == "nonseparable");
  CHECK(c.get_int("grid.nx") == 60);
  CHECK(c.get_double_list("myopic.horizons") == std::vector<double>{0.5, 0.25});
  c.apply_override("solver.line_search=false");
  CHECK_FALSE(c.get_bool("solver.line_search"));

  std::istringstream bad("model nonseparable\n");
  CHECK_THROWS_WITH_AS(c.load(bad), doctest::Contains("line 1"), ConfigError);
  CHECK_THROWS_WITH_AS(c.apply_override("grid.ny=3"), doctest::Contains("grid.ny"), ConfigError);
  CHECK_THROWS_AS(c.apply_override("grid.nx"), ConfigError);
  CHECK_THROWS_AS(c.load_file("/nonexistent/avmfg.cfg"), ConfigError);

  c.set("grid.nx", "12x");
  CHECK_THROWS_WITH_AS(c.get_int("grid.nx"), doctest::Contains("grid.nx"), ConfigError);
  c.set("grid.nx", "1.5");
  CHECK_THROWS_AS(c.get_int("grid.nx"), ConfigError);
  c.set("solver.line_search", "maybe");
  CHECK_THROWS_AS(c.get_bool("solver.line_search"), ConfigError);
}

TEST_CASE("validation names the failing key") {
  auto fails = [](const std::string& key, const std::string& value,
                  const std::string& experiment) {
    ExperimentConfig c;
    c.set(key, value);
    return error_of(c, experiment);
  };
  CHECK(fails("grid.nt", "100", "solve").find("grid") != std::string::npos);
  CHECK(fails("grid.nt", "100", "solve").find("CFL") != std::string::npos);
  CHECK(fails("model", "greenshields", "solve").find("model") != std::string::npos);
  CHECK(fails("density.gamma", "0", "solve").find("density.gamma") != std::string::npos);
  CHECK(fails("hjb.stencil", "central", "solve").find("hjb.stencil") != std::string::npos);
  CHECK(fails("solver.coarsest_nx", "7", "solve").find("solver.coarsest_nx") != std::string::npos);
  CHECK(fails("solver.gmres_restart", "0", "solve").find("solver") != std::string::npos);
  CHECK(fails("cost.u_max", "-1", "solve").find("cost.u_max") != std::string::npos);
  CHECK(fails("converge.nx", "30,45", "converge").find("converge.nx") != std::string::npos);
  CHECK(fails("myopic.horizons", "0.001", "myopic").find("myopic.horizons") != std::string::npos);
  CHECK(fails("model", "separable", "myopic").find("model") != std::string::npos);
  CHECK(fails("micro.nt", "2", "dg-validate").find("micro.nt") != std::string::npos);
  CHECK(fails("micro.models", "lwr,foo", "dg-validate").find("micro.models") != std::string::npos);
  CHECK(fails("micro.placement", "grid", "dg-validate").find("micro.placement") != std::string::npos);
  CHECK(fails("micro.n", "0", "dg-validate").find("micro.n") != std::string::npos);
  CHECK(fails("micro.seed", "-4", "dg-validate").find("micro.seed") != std::string::npos);
  CHECK(fails("fd.nx", "0", "fd").find("fd.nx") != std::string::npos);
  CHECK_FALSE(error_of(ExperimentConfig{}, "plot").empty());
}

TEST_CASE("bump density") {
  const auto rho = bump_density(0.05, 0.95, 0.1, 1.0);
  CHECK(rho(0.5) == doctest::Approx(0.95));
  CHECK(rho(0.6) == doctest::Approx(0.05 + 0.9 * std::exp(-0.5)));
  CHECK(rho(0.0) == doctest::Approx(0.05).epsilon(1e-5));
  CHECK(rho(0.3) == doctest::Approx(rho(0.7)));
}

TEST_CASE("problem and solver config assembly") {
  ExperimentConfig c;
  c.set("model", "separable");
  c.set("hjb.stencil", "printed");
  c.set("solver.linear", "direct");
  c.set("solver.preconditioner", "false");
  const ProblemSpec spec = make_problem(c);
  CHECK(spec.cost.kind() == CostKind::kSeparable);
  CHECK(spec.stencil == HjbStencil::kPrinted);
  CHECK(spec.grid == SpaceTimeGrid::make(1, 3, 120, 480));
  CHECK(spec.terminal_cost_is_zero());
  const SolverConfig s = make_solver_config(c);
  CHECK(s.linear_solver == LinearSolver::kDirect);
  CHECK_FALSE(s.use_preconditioner);
  CHECK(s.newton_tolerance == 1e-9);
  CHECK(s.gmres_restart == 60);
  CHECK(s.min_damping == 1.0 / 1024.0);
}

TEST_CASE("coarsest reachable level") {
  CHECK(reachable_coarsest(SpaceTimeGrid::make(1, 3, 120, 480), 15) == 15);
  CHECK(reachable_coarsest(SpaceTimeGrid::make(1, 1, 84, 16), 15) == 21);
  CHECK(reachable_coarsest(SpaceTimeGrid::make(1, 1, 404, 16), 15) == 101);
  CHECK(reachable_coarsest(SpaceTimeGrid::make(1, 1, 20, 5), 4) == 20);
}

TEST_CASE("solve writes fields, report and status") {
  const fs::path out = scratch("solve");
  const MfeRun run = run_mfe(small_solve("lwr"), out);
  REQUIRE(run.theorem1_residual.has_value());
  CHECK(*run.theorem1_residual <= 1e-12);
  CHECK(run.result.report.final_residual() <= 1e-9);
  for (const char* f : {"density.csv", "speed.csv", "value.csv"}) {
    CHECK(first_line(out / f) == "t,x,value");
  }
  CHECK(first_line(out / "report.csv") == "level,newton_iters,gmres_iters,final_residual,seconds");
  CHECK(first_line(out / "status.txt") == "converged");
  CHECK_FALSE(run_mfe(small_solve("separable")).theorem1_residual.has_value());
}

TEST_CASE("nonconvergence leaves partial output") {
  const fs::path out = scratch("partial");
  ExperimentConfig c = small_solve("nonseparable");
  c.set("solver.max_newton", "1");
  CHECK_THROWS_AS(run_mfe(c, out), NonConvergenceError);
  CHECK(first_line(out / "status.txt").rfind("nonconverged", 0) == 0);
  CHECK(fs::exists(out / "partial_density.csv"));
  CHECK(fs::exists(out / "report.csv"));
}

TEST_CASE("fundamental diagram sampling") {
  const fs::path out = scratch("fd");
  ExperimentConfig c = small_solve("lwr");
  c.set("fd.nx", "6");
  c.set("fd.nt", "4");
  const auto fd = fundamental_diagram(c, out);
  REQUIRE(fd.rho.size() == 6 * 5);
  for (std::size_t i = 0; i < fd.rho.size(); ++i) {
    CHECK(std::abs(fd.flow[i] - fd.rho[i] * (1 - fd.rho[i])) <= 1e-6);
  }
  CHECK(first_line(out / "fundamental_diagram.csv") == "rho,q");

  // Default sampling density.
  const MfeRun run = run_mfe(small_solve("lwr"));
  CHECK(sample_fundamental_diagram(run.result.solution, 24, 96).rho.size() == 24 * 97);
  CHECK_THROWS_AS(sample_fundamental_diagram(run.result.solution, 0, 3), ConfigError);
}

TEST_CASE("convergence study on uniform data is exact") {
  ExperimentConfig c;
  c.set("model", "separable");
  c.set("density.rho_a", "0.4");
  c.set("density.rho_b", "0.4");
  c.set("converge.nx", "8,16,32");
  const fs::path out = scratch("converge");
  const auto study = convergence_study(c, out);
  CHECK(study.nx == std::vector<int>{8, 16, 32});
  for (double e : study.error) CHECK(e <= 1e-10);
  CHECK(first_line(out / "convergence.csv") == "nx,error");
  CHECK(first_line(out / "convergence_fit.csv") == "model,slope");
}

TEST_CASE("convergence study errors shrink on the bump") {
  ExperimentConfig c;
  c.set("model", "lwr");
  c.set("converge.nx", "16,32,64");
  const auto study = convergence_study(c);
  REQUIRE(study.error.size() == 3);
  CHECK(study.error[2] < study.error[0]);
  CHECK(study.slope > 0.0);
}

TEST_CASE("myopic limit") {
  ExperimentConfig c;
  c.set("model", "nonseparable");
  c.set("grid.nx", "20");
  c.set("grid.nt", "60");
  c.set("solver.coarsest_nx", "10");
  c.set("myopic.horizons", "0.05,0.2");
  const fs::path out = scratch("myopic");
  const auto m = myopic_limit(c, out);
  REQUIRE(m.horizon.size() == 2);
  // One step: V^1 = V_T = 0, so the first speed is exactly U(rho_0).
  CHECK(m.max_deviation[0] <= 1e-12);
  CHECK(m.max_deviation[1] > m.max_deviation[0]);
  CHECK(first_line(out / "myopic.csv") == "horizon,max_deviation");
}

TEST_CASE("dg validation on a small sweep") {
  ExperimentConfig c;
  c.set("micro.n", "1,5");
  c.set("micro.models", "separable");
  const fs::path out = scratch("dg");
  const auto dg = dg_validate(c, out);
  REQUIRE(dg.cases.size() == 2);
  CHECK(dg.cases[0].cars == 1);
  CHECK(dg.cases[1].grid.num_cells == 20);
  CHECK(dg.cases[1].grid.length == 5.0);
  for (const auto& k : dg.cases) {
    for (std::size_t i = 0; i < k.accuracy.epsilon.size(); ++i) {
      CHECK(k.accuracy.epsilon[i] >= -1e-6 * std::abs(k.accuracy.cost_constructed[i]));
    }
  }
  CHECK(first_line(out / "summary.csv") == "N,model,max_ra,mean_ra");
  CHECK(fs::exists(out / "accuracy_separable_N5.csv"));
}

TEST_CASE("manifest") {
  const fs::path out = scratch("manifest");
  ExperimentConfig c;
  c.set("micro.seed", "7");
  write_manifest(out, "solve", c, R"({"status":"ok"})");
  std::ifstream in(out / "manifest.json");
  const auto m = nlohmann::json::parse(in);
  CHECK(m["command"] == "solve");
  CHECK(m["version"] == version_string());
  CHECK(m["config"]["grid.nx"] == "120");
  CHECK(m["seeds"]["micro.seed"] == "7");
  CHECK(m["run"]["status"] == "ok");
  CHECK(m["libraries"].contains("eigen"));
}

}
