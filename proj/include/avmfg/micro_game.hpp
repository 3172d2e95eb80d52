#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "avmfg/cost_model.hpp"
#include "avmfg/discretization.hpp"
#include "avmfg/grid.hpp"

namespace avmfg {

enum class DensityNormalization {
  kCarsPerLength,  // sum_j xi(x - x_j), integrates to N over the ring
  kUnitMass,       // (1/N) sum_j xi(x - x_j), integrates to 1
};

// Gaussian kernel of width sigma, periodized on a ring of length L by
// summing 5 images on each side.
struct KernelSpec {
  double sigma = 1.0;
  DensityNormalization normalization = DensityNormalization::kCarsPerLength;

  // Throws ConfigError unless sigma > 0.
  static KernelSpec gaussian(double sigma, DensityNormalization normalization =
                                               DensityNormalization::kCarsPerLength);

  double value(double d, double length) const;
  double derivative(double d, double length) const;
};

// Whether car i's own kernel mass is part of the density it pays against.
enum class SelfInteraction { kInclude, kExclude };

struct CarEnsemble {
  double length = 1.0;
  std::vector<double> initial_positions;  // wrapped into [0, L)
  KernelSpec kernel;
  SelfInteraction self = SelfInteraction::kInclude;

  // Wraps the positions; throws ConfigError for N < 1 or L <= 0.
  static CarEnsemble make(double length, std::vector<double> positions,
                          KernelSpec kernel,
                          SelfInteraction self = SelfInteraction::kInclude);

  int size() const { return static_cast<int>(initial_positions.size()); }
  // 1 or 1/N depending on the normalization.
  double weight() const;
};

// Kernel density of `positions` at the cell centers of `grid`.
std::vector<double> smooth_density(const CarEnsemble& ensemble,
                                   std::span<const double> positions,
                                   const SpaceTimeGrid& grid);
double smooth_density_at(const CarEnsemble& ensemble,
                         std::span<const double> positions, double x);

enum class PlacementMode { kQuantile, kSeededRandom };

// Quantile mode puts car i at the (i - 1/2)/N quantile of rho_0 on [0, L);
// random mode draws i.i.d. from rho_0 with a mt19937_64 seeded by `seed`.
// Throws ConfigError when rho_0 has no positive mass.
std::vector<double> sample_initial_positions(int count, double length,
                                             const ScalarFunction& density,
                                             PlacementMode mode,
                                             std::uint64_t seed = 0);

// Per-car speeds v_i(t^n), n < Nt, and positions x_i(t^n), n <= Nt, wrapped
// into [0, L). Positions follow x^{n+1} = x^n + dt v^n.
struct ControlSet {
  SpaceTimeGrid grid;
  Eigen::MatrixXd speeds;     // N x Nt
  Eigen::MatrixXd positions;  // N x (Nt + 1)

  int size() const { return static_cast<int>(speeds.rows()); }
};

// Integrates prescribed speeds from the ensemble's initial positions.
ControlSet controls_from_speeds(const CarEnsemble& ensemble,
                                const SpaceTimeGrid& grid,
                                const Eigen::MatrixXd& speeds);

// v_i(t^n) = u*(x_i(t^n), t^n) by bilinear interpolation, explicit Euler.
// Throws ConfigError when the road lengths differ.
ControlSet construct_controls(const SolutionTriple& mfe,
                              const CarEnsemble& ensemble);

// J_i = sum_n f(v_i^n, rho_hat(x_i^n, t^n)) dt + V_T(x_i^Nt), with rho_hat
// built from every car's position at level n. A null terminal cost is zero.
double driving_cost(int car, const ControlSet& controls,
                    const CarEnsemble& ensemble, const CostModel& model,
                    const ScalarFunction& terminal_cost);

struct BestResponseOptions {
  // The DP grid refines each cell by min(max_refine, floor(dx / (u_max dt)))
  // so that one step never crosses more than one DP cell.
  int max_refine = 8;
  // Projected-gradient descent on the exact discrete cost, started from the
  // DP control. Only improving steps are taken.
  bool polish = true;
  int polish_iterations = 200;
};

struct BestResponse {
  std::vector<double> speeds;     // Nt entries
  std::vector<double> positions;  // Nt + 1 entries, wrapped
  double cost = 0.0;
  double dp_cost = 0.0;  // cost of the DP control before polishing
};

// Best response of `car` when every other car keeps its control.
BestResponse best_response(int car, const ControlSet& controls,
                           const CarEnsemble& ensemble, const CostModel& model,
                           const ScalarFunction& terminal_cost,
                           const BestResponseOptions& options = {});

// J_i for car `car` driving `speeds` against the others in `controls`.
double deviation_cost(int car, std::span<const double> speeds,
                      const ControlSet& controls, const CarEnsemble& ensemble,
                      const CostModel& model,
                      const ScalarFunction& terminal_cost);

struct AccuracyReport {
  std::vector<double> cost_constructed;
  std::vector<double> cost_best_response;
  std::vector<double> epsilon;
  double max_ra = 0.0;
  double mean_ra = 0.0;
  // False when every |J_i| is zero; max_ra and mean_ra are then NaN.
  bool relative_defined = true;

  // Header "car_index,cost_constructed,cost_best_response,epsilon".
  void write_csv(std::ostream& out) const;
};

AccuracyReport epsilon_accuracy(const ControlSet& controls,
                                const CarEnsemble& ensemble,
                                const CostModel& model,
                                const ScalarFunction& terminal_cost,
                                const BestResponseOptions& options = {});

}  // namespace avmfg
