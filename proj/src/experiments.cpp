#include "avmfg/experiments.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <boost/version.hpp>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "avmfg/errors.hpp"
#include "avmfg/lwr.hpp"

namespace avmfg {

namespace fs = std::filesystem;

namespace {

const std::map<std::string, std::string>& defaults() {
  static const std::map<std::string, std::string> table = {
      {"model", "lwr"},
      {"grid.length", "1"},
      {"grid.horizon", "3"},
      {"grid.nx", "120"},
      {"grid.nt", "480"},
      {"density.rho_a", "0.05"},
      {"density.rho_b", "0.95"},
      {"density.gamma", "0.1"},
      {"cost.u_max", "1"},
      {"cost.rho_jam", "1"},
      {"hjb.stencil", "upwind"},
      {"solver.newton_tol", "1e-9"},
      {"solver.max_newton", "50"},
      {"solver.gmres_tol", "1e-8"},
      {"solver.gmres_restart", "60"},
      {"solver.gmres_max", "2000"},
      {"solver.coarsest_nx", "15"},
      {"solver.line_search", "true"},
      {"solver.min_damping", "0.0009765625"},
      {"solver.preconditioner", "true"},
      {"solver.linear", "gmres"},
      {"fd.nx", "24"},
      {"fd.nt", "96"},
      {"converge.nx", "30,60,120"},
      {"converge.ratio", "4"},
      {"myopic.horizons", "0.5,0.25,0.125,0.0625"},
      {"micro.n", "21,41,61,81,101"},
      {"micro.models", "separable,nonseparable"},
      {"micro.horizon", "1"},
      {"micro.rho_a", "0.2"},
      {"micro.rho_b", "0.8"},
      {"micro.gamma_over_length", "0.15"},
      {"micro.sigma_over_length", "0.05"},
      {"micro.cells_per_car", "4"},
      {"micro.nt", "16"},
      {"micro.placement", "quantile"},
      {"micro.seed", "0"},
      {"micro.normalization", "cars_per_length"},
      {"micro.self", "include"},
      {"micro.polish", "true"},
      {"micro.max_refine", "8"},
      {"output.gnuplot", "false"},
  };
  return table;
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  return out;
}

double parse_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  }
  return v;
}

long long parse_integer(const std::string& key, const std::string& text) {
  long long v = 0;
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(key + ": expected an integer, got '" + text + "'");
  }
  return v;
}

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError(key + ": " + what);
}

void require_one_of(const ExperimentConfig& c, const std::string& key,
                    std::initializer_list<const char*> allowed) {
  const std::string& v = c.get(key);
  for (const char* a : allowed) {
    if (v == a) return;
  }
  std::string list;
  for (const char* a : allowed) list += std::string(list.empty() ? "" : ", ") + a;
  throw ConfigError(key + ": expected one of " + list + ", got '" + v + "'");
}

void require_model(const std::string& key, const std::string& model) {
  require(model == "lwr" || model == "separable" || model == "nonseparable",
          key, "unknown model '" + model + "' (lwr, separable, nonseparable)");
}

SpaceTimeGrid config_grid(const ExperimentConfig& c) {
  return SpaceTimeGrid{c.get_double("grid.length"), c.get_double("grid.horizon"),
                       c.get_int("grid.nx"), c.get_int("grid.nt")};
}

void validate_grid(const SpaceTimeGrid& g, double u_max,
                   const std::string& key) {
  try {
    SpaceTimeGrid::make(g.length, g.horizon, g.num_cells, g.num_steps);
  } catch (const ConfigError& e) {
    throw ConfigError(key + ": " + e.what());
  }
  const CflCheck cfl = check_cfl(g, u_max);
  if (!cfl.pass) {
    std::ostringstream msg;
    msg << key << ": CFL violated, u_max dt / dx = " << cfl.ratio;
    throw ConfigError(msg.str());
  }
}

void write_fields(const fs::path& dir, const std::string& prefix,
                  const SolutionTriple& s, bool gnuplot) {
  const std::pair<const char*, const ScalarField*> fields[] = {
      {"density", &s.density}, {"speed", &s.speed}, {"value", &s.value}};
  for (const auto& [name, field] : fields) {
    std::ofstream out(dir / (prefix + name + ".csv"));
    write_field_csv(out, *field);
    if (gnuplot) {
      std::ofstream dat(dir / (prefix + name + ".dat"));
      dat << std::setprecision(15);
      const SpaceTimeGrid& g = field->grid();
      for (int n = 0; n <= g.num_steps; ++n) {
        for (int j = 0; j < g.num_cells; ++j) {
          dat << field->position(j) << ' ' << g.time(n) << ' ' << (*field)(n, j)
              << '\n';
        }
        dat << '\n';
      }
    }
  }
}

void ensure_dir(const fs::path& dir) {
  if (!dir.empty()) fs::create_directories(dir);
}

double least_squares_slope(const std::vector<double>& x,
                           const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace

ExperimentConfig::ExperimentConfig() : values_(defaults()) {}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  if (!values_.count(key)) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = trim(value);
}

void ExperimentConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override '" + assignment + "' is not key=value");
  }
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

void ExperimentConfig::load(std::istream& in) {
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.find('=') == std::string::npos) {
      throw ConfigError("config line " + std::to_string(number) +
                        ": expected key = value");
    }
    apply_override(line);
  }
}

void ExperimentConfig::load_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  load(in);
}

const std::string& ExperimentConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

double ExperimentConfig::get_double(const std::string& key) const {
  return parse_double(key, get(key));
}

int ExperimentConfig::get_int(const std::string& key) const {
  const long long v = parse_integer(key, get(key));
  require(v >= std::numeric_limits<int>::min() &&
              v <= std::numeric_limits<int>::max(),
          key, "integer out of range");
  return static_cast<int>(v);
}

bool ExperimentConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> ExperimentConfig::get_list(const std::string& key) const {
  std::vector<std::string> out;
  for (auto& item : split(get(key), ',')) {
    if (!item.empty()) out.push_back(item);
  }
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

std::vector<double> ExperimentConfig::get_double_list(
    const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : get_list(key)) out.push_back(parse_double(key, item));
  return out;
}

std::vector<int> ExperimentConfig::get_int_list(const std::string& key) const {
  std::vector<int> out;
  for (const auto& item : get_list(key)) {
    out.push_back(static_cast<int>(parse_integer(key, item)));
  }
  return out;
}

void ExperimentConfig::validate(const std::string& experiment) const {
  require(experiment == "solve" || experiment == "fd" ||
              experiment == "converge" || experiment == "myopic" ||
              experiment == "dg-validate",
          "experiment", "unknown experiment '" + experiment + "'");

  const double u_max = get_double("cost.u_max");
  require(u_max > 0.0, "cost.u_max", "must be > 0");
  require(get_double("cost.rho_jam") > 0.0, "cost.rho_jam", "must be > 0");
  const SolverConfig solver = make_solver_config(*this);
  try {
    solver.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("solver: ") + e.what());
  }
  (void)get_bool("output.gnuplot");

  if (experiment == "dg-validate") {
    for (const auto& m : get_list("micro.models")) require_model("micro.models", m);
    for (int n : get_int_list("micro.n")) require(n >= 1, "micro.n", "car counts must be >= 1");
    const double horizon = get_double("micro.horizon");
    require(horizon > 0.0, "micro.horizon", "must be > 0");
    require(get_double("micro.rho_a") >= 0.0, "micro.rho_a", "must be >= 0");
    require(get_double("micro.rho_b") >= 0.0, "micro.rho_b", "must be >= 0");
    require(get_double("micro.rho_a") + get_double("micro.rho_b") > 0.0,
            "micro.rho_b", "initial density has no mass");
    require(get_double("micro.gamma_over_length") > 0.0,
            "micro.gamma_over_length", "must be > 0");
    require(get_double("micro.sigma_over_length") > 0.0,
            "micro.sigma_over_length", "must be > 0");
    const int cells = get_int("micro.cells_per_car");
    require(cells >= 2, "micro.cells_per_car", "must be >= 2");
    const int nt = get_int("micro.nt");
    require(nt >= 1, "micro.nt", "must be >= 1");
    require(u_max * horizon / nt <= (1.0 / cells) * (1.0 + 1e-12), "micro.nt",
            "CFL violated: u_max horizon / nt exceeds 1 / cells_per_car");
    require_one_of(*this, "micro.placement", {"quantile", "random"});
    (void)parse_integer("micro.seed", get("micro.seed"));
    require(get("micro.seed").front() != '-', "micro.seed", "must be >= 0");
    require_one_of(*this, "micro.normalization", {"cars_per_length", "unit_mass"});
    require_one_of(*this, "micro.self", {"include", "exclude"});
    (void)get_bool("micro.polish");
    require(get_int("micro.max_refine") >= 1, "micro.max_refine", "must be >= 1");
    return;
  }

  require_model("model", get("model"));
  require_one_of(*this, "hjb.stencil", {"upwind", "printed"});
  require(get_double("density.rho_a") >= 0.0, "density.rho_a", "must be >= 0");
  require(get_double("density.rho_b") >= 0.0, "density.rho_b", "must be >= 0");
  require(get_double("density.gamma") > 0.0, "density.gamma", "must be > 0");
  const SpaceTimeGrid grid = config_grid(*this);
  validate_grid(grid, u_max, "grid");

  if (experiment == "solve" || experiment == "fd") {
    try {
      multigrid_levels(grid, solver.coarsest_nx);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("solver.coarsest_nx: ") + e.what());
    }
  }
  if (experiment == "fd") {
    require(get_int("fd.nx") >= 1, "fd.nx", "must be >= 1");
    require(get_int("fd.nt") >= 1, "fd.nt", "must be >= 1");
  }
  if (experiment == "converge") {
    std::vector<int> nx = get_int_list("converge.nx");
    const int ratio = get_int("converge.ratio");
    require(ratio >= 1, "converge.ratio", "must be >= 1");
    std::sort(nx.begin(), nx.end());
    require(nx.front() >= 4 && nx.front() % 2 == 0, "converge.nx",
            "smallest Nx must be even and >= 4");
    for (std::size_t k = 1; k < nx.size(); ++k) {
      int n = nx[k];
      while (n > nx.front() && n % 2 == 0) n /= 2;
      require(n == nx.front(), "converge.nx",
              "entries must differ by powers of 2");
    }
    validate_grid(SpaceTimeGrid{grid.length, grid.horizon, nx.front(),
                                ratio * nx.front()},
                  u_max, "converge.ratio");
  }
  if (experiment == "myopic") {
    const std::string model = get("model");
    require(model == "nonseparable" || model == "lwr", "model",
            "myopic limit needs nonseparable or lwr");
    for (double T : get_double_list("myopic.horizons")) {
      require(T > 0.0, "myopic.horizons", "horizons must be > 0");
      const double steps = T * grid.num_steps / grid.horizon;
      require(std::abs(steps - std::round(steps)) < 1e-9 && std::round(steps) >= 1,
              "myopic.horizons",
              "each horizon times grid.nt / grid.horizon must be a positive integer");
    }
  }
}

ScalarFunction bump_density(double rho_a, double rho_b, double gamma,
                            double length) {
  return [=](double x) {
    const double d = x - 0.5 * length;
    return rho_a + (rho_b - rho_a) * std::exp(-d * d / (2.0 * gamma * gamma));
  };
}

CostModel make_cost(const ExperimentConfig& c, const std::string& key) {
  return CostModel::from_key(key, c.get_double("cost.u_max"),
                             c.get_double("cost.rho_jam"));
}

ProblemSpec make_problem(const ExperimentConfig& c) {
  const SpaceTimeGrid g = config_grid(c);
  const HjbStencil stencil =
      c.get("hjb.stencil") == "printed" ? HjbStencil::kPrinted : HjbStencil::kUpwind;
  return ProblemSpec::make(
      SpaceTimeGrid::make(g.length, g.horizon, g.num_cells, g.num_steps),
      make_cost(c, c.get("model")),
      bump_density(c.get_double("density.rho_a"), c.get_double("density.rho_b"),
                   c.get_double("density.gamma"), g.length),
      nullptr, stencil);
}

SolverConfig make_solver_config(const ExperimentConfig& c) {
  SolverConfig s;
  s.newton_tolerance = c.get_double("solver.newton_tol");
  s.max_newton_iterations = c.get_int("solver.max_newton");
  s.gmres_tolerance = c.get_double("solver.gmres_tol");
  s.gmres_restart = c.get_int("solver.gmres_restart");
  s.gmres_max_iterations = c.get_int("solver.gmres_max");
  s.coarsest_nx = c.get_int("solver.coarsest_nx");
  s.line_search = c.get_bool("solver.line_search");
  s.min_damping = c.get_double("solver.min_damping");
  s.use_preconditioner = c.get_bool("solver.preconditioner");
  const std::string& linear = c.get("solver.linear");
  if (linear == "gmres") {
    s.linear_solver = LinearSolver::kGmres;
  } else if (linear == "direct") {
    s.linear_solver = LinearSolver::kDirect;
  } else {
    throw ConfigError("solver.linear: expected gmres or direct, got '" + linear + "'");
  }
  return s;
}

int reachable_coarsest(const SpaceTimeGrid& grid, int preferred) {
  int nx = grid.num_cells;
  int nt = grid.num_steps;
  while (nx % 2 == 0 && nt % 2 == 0 && nx / 2 >= preferred) {
    nx /= 2;
    nt /= 2;
  }
  return nx;
}

MfeRun run_mfe(const ExperimentConfig& config, const fs::path& out_dir) {
  config.validate("solve");
  const ProblemSpec spec = make_problem(config);
  const SolverConfig solver = make_solver_config(config);
  const bool gnuplot = config.get_bool("output.gnuplot");
  ensure_dir(out_dir);

  std::optional<SolveResult> result;
  try {
    result = multigrid_solve(spec, solver);
  } catch (const NonConvergenceError& e) {
    if (!out_dir.empty()) {
      std::ofstream status(out_dir / "status.txt");
      status << "nonconverged: " << e.what() << "\n";
      std::ofstream report(out_dir / "report.csv");
      e.report().write_csv(report);
      if (!e.report().levels.empty()) {
        const LevelReport& last = e.report().levels.back();
        const SpaceTimeGrid g{spec.grid.length, spec.grid.horizon, last.nx,
                              last.nt};
        if (e.best_iterate().size() == UnknownLayout(g).size()) {
          write_fields(out_dir, "partial_",
                       unpack(e.best_iterate(), spec.on_grid(g)), gnuplot);
        }
      }
    }
    throw;
  }

  MfeRun run{spec, std::move(*result), std::nullopt};
  if (spec.cost.kind() == CostKind::kLwrTracking && spec.terminal_cost_is_zero()) {
    const LwrRun lwr =
        solve_lwr(spec.grid, spec.cost.tracked_speed(), spec.initial_cells);
    run.theorem1_residual = verify_theorem1(lwr, spec);
  }
  if (!out_dir.empty()) {
    write_fields(out_dir, "", run.result.solution, gnuplot);
    std::ofstream report(out_dir / "report.csv");
    run.result.report.write_csv(report);
    std::ofstream status(out_dir / "status.txt");
    status << "converged\n";
    for (const auto& note : run.result.report.notes) status << "note: " << note << "\n";
  }
  return run;
}

FundamentalDiagram sample_fundamental_diagram(const SolutionTriple& solution,
                                              int n_x, int n_t) {
  if (n_x < 1 || n_t < 1) throw ConfigError("sample counts must be >= 1");
  const SpaceTimeGrid& g = solution.density.grid();
  FundamentalDiagram out;
  for (int m = 0; m <= n_t; ++m) {
    const double t = g.horizon * m / n_t;
    for (int k = 0; k < n_x; ++k) {
      const double x = (k + 0.5) * g.length / n_x;
      const double rho = interpolate_space_time(solution.density, x, t);
      const double u = interpolate_space_time(solution.speed, x, t);
      out.rho.push_back(rho);
      out.flow.push_back(rho * u);
    }
  }
  return out;
}

FundamentalDiagram fundamental_diagram(const ExperimentConfig& config,
                                       const fs::path& out_dir) {
  config.validate("fd");
  const MfeRun run = run_mfe(config, out_dir);
  FundamentalDiagram fd = sample_fundamental_diagram(
      run.result.solution, config.get_int("fd.nx"), config.get_int("fd.nt"));
  if (!out_dir.empty()) {
    std::ofstream out(out_dir / "fundamental_diagram.csv");
    out << "rho,q\n" << std::setprecision(15);
    for (std::size_t i = 0; i < fd.rho.size(); ++i) {
      out << fd.rho[i] << ',' << fd.flow[i] << '\n';
    }
    if (config.get_bool("output.gnuplot")) {
      std::ofstream dat(out_dir / "fundamental_diagram.dat");
      dat << std::setprecision(15);
      for (std::size_t i = 0; i < fd.rho.size(); ++i) {
        dat << fd.rho[i] << ' ' << fd.flow[i] << '\n';
      }
    }
  }
  return fd;
}

ConvergenceStudy convergence_study(const ExperimentConfig& config,
                                   const fs::path& out_dir) {
  config.validate("converge");
  std::vector<int> nx = config.get_int_list("converge.nx");
  std::sort(nx.begin(), nx.end());
  nx.erase(std::unique(nx.begin(), nx.end()), nx.end());
  const int ratio = config.get_int("converge.ratio");
  const SpaceTimeGrid base = config_grid(config);
  const SpaceTimeGrid finest = SpaceTimeGrid::make(
      base.length, base.horizon, nx.back(), ratio * nx.back());

  const ProblemSpec spec = make_problem(config).on_grid(finest);
  SolverConfig solver = make_solver_config(config);
  solver.coarsest_nx = nx.front() / 2;

  std::vector<SolutionTriple> levels;
  ConvergenceStudy out;
  try {
    out.report = multigrid_solve(spec, solver, &levels).report;
  } catch (const NonConvergenceError& e) {
    throw NonConvergenceError(std::string("convergence study: ") + e.what(),
                              e.best_iterate(), e.best_residual(), e.report());
  }
  auto level_for = [&](int cells) -> const SolutionTriple& {
    for (const auto& s : levels) {
      if (s.density.grid().num_cells == cells) return s;
    }
    throw ConfigError("converge.nx: no multigrid level with Nx = " +
                      std::to_string(cells));
  };
  std::vector<double> log_n, log_e;
  for (int n : nx) {
    const SolutionTriple& fine = level_for(n);
    const SolutionTriple& coarse = level_for(n / 2);
    const SpaceTimeGrid& g = fine.density.grid();
    const double err = l1_norm(fine.density, resample(coarse.density, g)) +
                       l1_norm(fine.speed, resample(coarse.speed, g));
    out.nx.push_back(n);
    out.error.push_back(err);
    log_n.push_back(std::log(static_cast<double>(n)));
    log_e.push_back(std::log(err));
  }
  out.slope = nx.size() >= 2 ? -least_squares_slope(log_n, log_e)
                             : std::numeric_limits<double>::quiet_NaN();
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    std::ofstream csv(out_dir / "convergence.csv");
    csv << "nx,error\n" << std::setprecision(15);
    for (std::size_t k = 0; k < out.nx.size(); ++k) {
      csv << out.nx[k] << ',' << out.error[k] << '\n';
    }
    std::ofstream fit(out_dir / "convergence_fit.csv");
    fit << "model,slope\n" << config.get("model") << ',' << std::setprecision(15)
        << out.slope << '\n';
    std::ofstream report(out_dir / "report.csv");
    out.report.write_csv(report);
  }
  return out;
}

MyopicLimit myopic_limit(const ExperimentConfig& config,
                         const fs::path& out_dir) {
  config.validate("myopic");
  const ProblemSpec base = make_problem(config);
  const SolverConfig solver = make_solver_config(config);
  MyopicLimit out;
  for (double T : config.get_double_list("myopic.horizons")) {
    const int nt = static_cast<int>(
        std::lround(T * base.grid.num_steps / base.grid.horizon));
    const SpaceTimeGrid g =
        SpaceTimeGrid::make(base.grid.length, T, base.grid.num_cells, nt);
    const ProblemSpec spec = base.on_grid(g);
    SolverConfig level = solver;
    level.coarsest_nx = reachable_coarsest(g, solver.coarsest_nx);
    SolveResult r;
    try {
      r = multigrid_solve(spec, level);
    } catch (const NonConvergenceError& e) {
      std::ostringstream msg;
      msg << "myopic limit at T = " << T << ": " << e.what();
      throw NonConvergenceError(msg.str(), e.best_iterate(), e.best_residual(),
                                e.report());
    }
    double dev = 0.0;
    for (int j = 0; j < g.num_cells; ++j) {
      const double U = spec.cost.equilibrium_speed(spec.initial_cells[j]);
      dev = std::max(dev, std::abs(r.solution.speed(0, j) - U));
    }
    out.horizon.push_back(T);
    out.max_deviation.push_back(dev);
  }
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    std::ofstream csv(out_dir / "myopic.csv");
    csv << "horizon,max_deviation\n" << std::setprecision(15);
    for (std::size_t k = 0; k < out.horizon.size(); ++k) {
      csv << out.horizon[k] << ',' << out.max_deviation[k] << '\n';
    }
  }
  return out;
}

void DgValidation::write_summary(std::ostream& out) const {
  out << "N,model,max_ra,mean_ra\n" << std::setprecision(15);
  for (const auto& c : cases) {
    out << c.cars << ',' << c.model << ',' << c.accuracy.max_ra << ','
        << c.accuracy.mean_ra << '\n';
  }
}

DgValidation dg_validate(const ExperimentConfig& config,
                         const fs::path& out_dir) {
  config.validate("dg-validate");
  const SolverConfig solver = make_solver_config(config);
  const double horizon = config.get_double("micro.horizon");
  const int cells_per_car = config.get_int("micro.cells_per_car");
  const int nt = config.get_int("micro.nt");
  const PlacementMode placement = config.get("micro.placement") == "random"
                                      ? PlacementMode::kSeededRandom
                                      : PlacementMode::kQuantile;
  const auto seed =
      static_cast<std::uint64_t>(parse_integer("micro.seed", config.get("micro.seed")));
  const DensityNormalization normalization =
      config.get("micro.normalization") == "unit_mass"
          ? DensityNormalization::kUnitMass
          : DensityNormalization::kCarsPerLength;
  const SelfInteraction self = config.get("micro.self") == "exclude"
                                   ? SelfInteraction::kExclude
                                   : SelfInteraction::kInclude;
  BestResponseOptions options;
  options.polish = config.get_bool("micro.polish");
  options.max_refine = config.get_int("micro.max_refine");

  DgValidation out;
  ensure_dir(out_dir);
  for (const std::string& model_key : config.get_list("micro.models")) {
    const CostModel cost = make_cost(config, model_key);
    for (int n_cars : config.get_int_list("micro.n")) {
      std::ostringstream where;
      where << "dg-validate model " << model_key << ", N = " << n_cars << ": ";
      try {
        const double length = n_cars;
        const ScalarFunction rho0 = bump_density(
            config.get_double("micro.rho_a"), config.get_double("micro.rho_b"),
            config.get_double("micro.gamma_over_length") * length, length);
        const std::vector<double> positions =
            sample_initial_positions(n_cars, length, rho0, placement, seed);
        const CarEnsemble ensemble = CarEnsemble::make(
            length, positions,
            KernelSpec::gaussian(config.get_double("micro.sigma_over_length") * length,
                                 normalization),
            self);
        const SpaceTimeGrid grid = SpaceTimeGrid::make(
            length, horizon, cells_per_car * n_cars, nt);
        // The macroscopic initial density is the smoothed car density.
        const ScalarFunction smoothed = [&ensemble](double x) {
          return smooth_density_at(ensemble, ensemble.initial_positions, x);
        };
        const ProblemSpec spec = ProblemSpec::make(grid, cost, smoothed);
        SolverConfig level = solver;
        level.coarsest_nx = reachable_coarsest(grid, solver.coarsest_nx);
        const SolveResult mfe = multigrid_solve(spec, level);
        const ControlSet controls = construct_controls(mfe.solution, ensemble);
        DgCase c{model_key, n_cars, grid,
                 epsilon_accuracy(controls, ensemble, cost, nullptr, options)};
        if (!out_dir.empty()) {
          std::ofstream csv(out_dir / ("accuracy_" + model_key + "_N" +
                                       std::to_string(n_cars) + ".csv"));
          c.accuracy.write_csv(csv);
        }
        out.cases.push_back(std::move(c));
      } catch (const NonConvergenceError& e) {
        throw NonConvergenceError(where.str() + e.what(), e.best_iterate(),
                                  e.best_residual(), e.report());
      } catch (const ConfigError& e) {
        throw ConfigError(where.str() + e.what());
      } catch (const Error& e) {
        throw Error(where.str() + e.what());
      }
    }
  }
  if (!out_dir.empty()) {
    std::ofstream summary(out_dir / "summary.csv");
    out.write_summary(summary);
  }
  return out;
}

std::string version_string() { return "0.1.0"; }

void write_manifest(const fs::path& out_dir, const std::string& command,
                    const ExperimentConfig& config,
                    const std::string& extra_json) {
  ensure_dir(out_dir);
  nlohmann::ordered_json m;
  m["command"] = command;
  m["version"] = version_string();
  m["libraries"] = {
      {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                    std::to_string(EIGEN_MAJOR_VERSION) + "." +
                    std::to_string(EIGEN_MINOR_VERSION)},
      {"boost", BOOST_LIB_VERSION},
      {"compiler", __VERSION__},
  };
  nlohmann::ordered_json cfg;
  for (const auto& [k, v] : config.entries()) cfg[k] = v;
  m["config"] = cfg;
  m["seeds"] = {{"micro.seed", config.get("micro.seed")},
                {"micro.placement", config.get("micro.placement")}};
  m["run"] = nlohmann::ordered_json::parse(extra_json);
  std::ofstream out(out_dir / "manifest.json");
  out << m.dump(2) << '\n';
}

}  // namespace avmfg
