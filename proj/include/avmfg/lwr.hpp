#pragma once

#include <vector>

#include "avmfg/cost_model.hpp"
#include "avmfg/discretization.hpp"
#include "avmfg/grid.hpp"

namespace avmfg {

// Forward march of rho_t + (rho U(rho))_x = 0 with the same Lax-Friedrichs
// step as the coupled system.
struct LwrRun {
  SpaceTimeGrid grid;
  EquilibriumSpeed speed_law;
  std::vector<double> initial_cells;
  ScalarField density;
  ScalarField speed;  // U(rho) on every level, including t = T
};

// Throws ConfigError when max|U(rho)| dt > dx on any level.
LwrRun solve_lwr(const SpaceTimeGrid& grid, const EquilibriumSpeed& speed_law,
                 const std::vector<double>& initial_cells);

// ||F||_inf of the triple (rho_lwr, U(rho_lwr), V = 0) in the tracking
// system. Throws ConfigError unless spec uses the tracking cost with the
// same U, the same grid and initial cells, and V_T = 0.
double verify_theorem1(const LwrRun& lwr, const ProblemSpec& spec);

}  // namespace avmfg
