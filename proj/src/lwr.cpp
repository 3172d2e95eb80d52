#include "avmfg/lwr.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "avmfg/errors.hpp"

namespace avmfg {

LwrRun solve_lwr(const SpaceTimeGrid& grid, const EquilibriumSpeed& speed_law,
                 const std::vector<double>& initial_cells) {
  if (static_cast<int>(initial_cells.size()) != grid.num_cells) {
    throw DimensionError("solve_lwr: initial cells do not match the grid");
  }
  if (!speed_law.value) throw ConfigError("solve_lwr: missing U(rho)");
  LwrRun run{grid, speed_law, initial_cells,
             ScalarField(grid, Staggering::kCellCenter),
             ScalarField(grid, Staggering::kCellCenter)};
  std::copy(initial_cells.begin(), initial_cells.end(),
            run.density.level(0).begin());
  for (int n = 0; n <= grid.num_steps; ++n) {
    auto rho = run.density.level(n);
    auto u = run.speed.level(n);
    for (int j = 0; j < grid.num_cells; ++j) u[j] = speed_law.value(rho[j]);
    if (n == grid.num_steps) break;
    const std::vector<double> next = lf_step(rho, u, grid);
    std::copy(next.begin(), next.end(), run.density.level(n + 1).begin());
  }
  return run;
}

double verify_theorem1(const LwrRun& lwr, const ProblemSpec& spec) {
  if (spec.cost.kind() != CostKind::kLwrTracking) {
    throw ConfigError("verify_theorem1: cost model is not lwr tracking");
  }
  if (!(spec.grid == lwr.grid)) {
    throw ConfigError("verify_theorem1: grid mismatch");
  }
  if (!spec.terminal_cost_is_zero()) {
    throw ConfigError("verify_theorem1: terminal cost must be zero");
  }
  if (spec.initial_cells != lwr.initial_cells) {
    throw ConfigError("verify_theorem1: initial density mismatch");
  }
  // The equilibrium speeds must agree wherever the run visited.
  const EquilibriumSpeed& U = spec.cost.tracked_speed();
  for (double rho : lwr.density.values()) {
    const double a = U.value(rho);
    const double b = lwr.speed_law.value(rho);
    if (std::abs(a - b) > 1e-14 * std::max(1.0, std::abs(a))) {
      throw ConfigError("verify_theorem1: equilibrium speed mismatch");
    }
  }
  SolutionTriple triple{lwr.density, lwr.speed,
                        ScalarField(lwr.grid, spec.value_staggering())};
  const Eigen::VectorXd F = assemble_residual(pack(triple), spec);
  return F.cwiseAbs().maxCoeff();
}

}  // namespace avmfg
