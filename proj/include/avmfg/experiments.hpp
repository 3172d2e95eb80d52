#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "avmfg/discretization.hpp"
#include "avmfg/micro_game.hpp"
#include "avmfg/solver.hpp"

namespace avmfg {

// Flat "dotted.key = value" settings. Every key has a default; unknown keys
// are rejected. See README for the full list.
class ExperimentConfig {
 public:
  ExperimentConfig();

  // Lines "key = value"; '#' starts a comment. Throws ConfigError naming
  // the line or key.
  void load(std::istream& in);
  void load_file(const std::filesystem::path& path);
  // "key=value". Throws ConfigError.
  void apply_override(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  int get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;

  const std::map<std::string, std::string>& entries() const { return values_; }

  // Parses every key the given experiment reads and checks the module
  // preconditions. Throws ConfigError naming the first failing key.
  void validate(const std::string& experiment) const;

 private:
  std::map<std::string, std::string> values_;
};

// rho_0(x) = rho_a + (rho_b - rho_a) exp(-(x - L/2)^2 / (2 gamma^2))
ScalarFunction bump_density(double rho_a, double rho_b, double gamma,
                            double length);

CostModel make_cost(const ExperimentConfig& config, const std::string& key);
ProblemSpec make_problem(const ExperimentConfig& config);
SolverConfig make_solver_config(const ExperimentConfig& config);

// Smallest Nx reachable from grid by halving both Nx and Nt that is still
// >= preferred (or grid.num_cells itself when nothing can be halved).
int reachable_coarsest(const SpaceTimeGrid& grid, int preferred);

struct MfeRun {
  ProblemSpec spec;
  SolveResult result;
  // ||F||_inf of the LWR triple, for the tracking model with V_T = 0.
  std::optional<double> theorem1_residual;
};

// Solves the configured problem with multigrid continuation. With an output
// directory, writes density.csv, speed.csv, value.csv and report.csv. On
// nonconvergence it writes the best iterate as partial_*.csv plus
// status.txt before rethrowing.
MfeRun run_mfe(const ExperimentConfig& config,
               const std::filesystem::path& out_dir = {});

struct FundamentalDiagram {
  std::vector<double> rho;
  std::vector<double> flow;
};

// n_x equally spaced cell centers by n_t + 1 snapshots of an MFE solution.
FundamentalDiagram sample_fundamental_diagram(const SolutionTriple& solution,
                                              int n_x, int n_t);
FundamentalDiagram fundamental_diagram(const ExperimentConfig& config,
                                       const std::filesystem::path& out_dir = {});

struct ConvergenceStudy {
  std::vector<int> nx;
  std::vector<double> error;
  double slope = 0.0;  // -d log(error) / d log(Nx), least squares
  SolveReport report;
};

// Error(Nx) = ||rho - I rho_{Nx/2}||_1 + ||u - I u_{Nx/2}||_1 with I the
// bilinear interpolation, from one multigrid run whose levels cover every
// Nx and Nx/2.
ConvergenceStudy convergence_study(const ExperimentConfig& config,
                                   const std::filesystem::path& out_dir = {});

struct MyopicLimit {
  std::vector<double> horizon;
  std::vector<double> max_deviation;
};

// max_j |u^(T)(x_j, 0) - U(rho_0,j)| for each horizon, Nt scaled with T.
MyopicLimit myopic_limit(const ExperimentConfig& config,
                         const std::filesystem::path& out_dir = {});

struct DgCase {
  std::string model;
  int cars = 0;
  SpaceTimeGrid grid;
  AccuracyReport accuracy;
};

struct DgValidation {
  std::vector<DgCase> cases;
  // Header "N,model,max_ra,mean_ra".
  void write_summary(std::ostream& out) const;
};

// Algorithm: place cars, smooth their density into rho_0, solve the MFE,
// construct controls, compute best responses and accuracy. One case per
// model and car count.
DgValidation dg_validate(const ExperimentConfig& config,
                         const std::filesystem::path& out_dir = {});

// manifest.json with the command, the full config, library versions, seeds
// and `extra`.
void write_manifest(const std::filesystem::path& out_dir,
                    const std::string& command,
                    const ExperimentConfig& config,
                    const std::string& extra_json = "{}");

std::string version_string();

}  // namespace avmfg
