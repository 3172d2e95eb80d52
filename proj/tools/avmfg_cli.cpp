#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <string>
#include <vector>

#include "avmfg/errors.hpp"
#include "avmfg/experiments.hpp"

namespace fs = std::filesystem;
using avmfg::ExperimentConfig;
using json = nlohmann::ordered_json;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfigError = 2, kNonConvergence = 3 };

struct Options {
  std::string config_path;
  std::string model;
  std::string out_dir;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Options& opt) {
  cmd->add_option("--config", opt.config_path, "config file with key = value lines");
  cmd->add_option("--model", opt.model, "lwr, separable or nonseparable");
  cmd->add_option("--out", opt.out_dir, "output directory");
  cmd->add_option("--set", opt.overrides, "override key=value (repeatable)");
}

json report_json(const avmfg::SolveReport& r) {
  json levels = json::array();
  for (const auto& l : r.levels) {
    levels.push_back({{"nx", l.nx},
                      {"nt", l.nt},
                      {"newton_iterations", l.newton_iterations},
                      {"gmres_iterations", l.gmres_iterations},
                      {"final_residual", l.final_residual},
                      {"seconds", l.seconds}});
  }
  return {{"levels", levels}, {"notes", r.notes}};
}

json run(const std::string& command, const ExperimentConfig& config,
         const fs::path& out) {
  json extra;
  if (command == "solve") {
    const avmfg::MfeRun r = avmfg::run_mfe(config, out);
    extra["report"] = report_json(r.result.report);
    std::cout << "final residual: " << r.result.report.final_residual() << "\n";
    if (r.theorem1_residual) {
      std::cout << "theorem1 residual: " << *r.theorem1_residual << "\n";
      extra["theorem1_residual"] = *r.theorem1_residual;
    }
  } else if (command == "fd") {
    const avmfg::FundamentalDiagram fd = avmfg::fundamental_diagram(config, out);
    std::cout << "samples: " << fd.rho.size() << "\n";
    extra["samples"] = fd.rho.size();
  } else if (command == "converge") {
    const avmfg::ConvergenceStudy s = avmfg::convergence_study(config, out);
    for (std::size_t k = 0; k < s.nx.size(); ++k) {
      std::cout << "nx " << s.nx[k] << " error " << s.error[k] << "\n";
    }
    std::cout << "slope: " << s.slope << "\n";
    extra["nx"] = s.nx;
    extra["error"] = s.error;
    extra["slope"] = s.slope;
    extra["report"] = report_json(s.report);
  } else if (command == "myopic") {
    const avmfg::MyopicLimit m = avmfg::myopic_limit(config, out);
    for (std::size_t k = 0; k < m.horizon.size(); ++k) {
      std::cout << "T " << m.horizon[k] << " max deviation " << m.max_deviation[k]
                << "\n";
    }
    extra["horizon"] = m.horizon;
    extra["max_deviation"] = m.max_deviation;
  } else if (command == "dg-validate") {
    const avmfg::DgValidation v = avmfg::dg_validate(config, out);
    v.write_summary(std::cout);
    json grids = json::array();
    for (const auto& c : v.cases) {
      grids.push_back({{"model", c.model},
                       {"N", c.cars},
                       {"length", c.grid.length},
                       {"horizon", c.grid.horizon},
                       {"nx", c.grid.num_cells},
                       {"nt", c.grid.num_steps},
                       {"max_ra", c.accuracy.max_ra},
                       {"mean_ra", c.accuracy.mean_ra}});
    }
    extra["cases"] = grids;
  }
  return extra;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mean field game velocity control on a ring road"};
  app.require_subcommand(1);
  Options opt;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"solve", "solve the MFG with multigrid continuation"},
      {"fd", "sample the fundamental diagram of an MFE"},
      {"converge", "grid convergence study"},
      {"myopic", "small-horizon limit of the equilibrium speed"},
      {"dg-validate", "epsilon-Nash accuracy of MFE-constructed controls"},
  };
  for (const auto& [name, help] : commands) add_common(app.add_subcommand(name, help), opt);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  ExperimentConfig config;
  const fs::path out = opt.out_dir.empty() ? fs::path("out") / command
                                           : fs::path(opt.out_dir);
  int code = kOk;
  json extra;
  try {
    if (!opt.config_path.empty()) config.load_file(opt.config_path);
    for (const auto& o : opt.overrides) config.apply_override(o);
    if (!opt.model.empty()) {
      config.set(command == "dg-validate" ? "micro.models" : "model", opt.model);
    }
    config.validate(command);
    extra = run(command, config, out);
    extra["status"] = "ok";
  } catch (const avmfg::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const avmfg::NonConvergenceError& e) {
    std::cerr << "nonconvergence: " << e.what() << "\n";
    extra["status"] = "nonconverged";
    extra["error"] = e.what();
    extra["report"] = report_json(e.report());
    code = kNonConvergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    extra["status"] = "failed";
    extra["error"] = e.what();
    code = kFailure;
  }
  try {
    avmfg::write_manifest(out, command, config, extra.dump());
  } catch (const std::exception& e) {
    std::cerr << "could not write manifest: " << e.what() << "\n";
    if (code == kOk) code = kFailure;
  }
  return code;
}
