#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <functional>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include "avmfg/cost_model.hpp"
#include "avmfg/grid.hpp"

namespace avmfg {

// Spatial difference used for the costate p in the HJB update of node j.
//   kUpwind   p = (V_{j+1} - V_j) / dx, node j at x = j dx (left end of cell j)
//   kPrinted  p = (V_j - V_{j-1}) / dx, node j at x = (j+1) dx
// kPrinted is downwind for cars moving in +x and grows high-frequency modes
// in the backward march; it is kept for comparison only.
enum class HjbStencil { kUpwind, kPrinted };

using ScalarFunction = std::function<double(double)>;

struct ProblemSpec {
  SpaceTimeGrid grid;
  CostModel cost;
  ScalarFunction initial_density;  // rho_0(x)
  ScalarFunction terminal_cost;    // V_T(x)
  HjbStencil stencil = HjbStencil::kUpwind;
  std::vector<double> initial_cells;   // cell averages of rho_0
  std::vector<double> terminal_nodes;  // V_T at the value nodes

  // Discretizes rho_0 and V_T on `grid`. A null terminal cost means V_T = 0.
  static ProblemSpec make(const SpaceTimeGrid& grid, const CostModel& cost,
                          ScalarFunction initial_density,
                          ScalarFunction terminal_cost = nullptr,
                          HjbStencil stencil = HjbStencil::kUpwind);

  // Same problem rediscretized on another grid.
  ProblemSpec on_grid(const SpaceTimeGrid& other) const;

  Staggering value_staggering() const;
  bool terminal_cost_is_zero() const;
};

// Cell averages (1/dx) int_{cell} f dx by 16-point Gauss-Legendre per cell.
std::vector<double> cell_averages(const SpaceTimeGrid& grid,
                                  const ScalarFunction& f);

struct CflCheck {
  bool pass = false;
  double ratio = 0.0;  // u_max dt / dx
};
CflCheck check_cfl(const SpaceTimeGrid& grid, double u_max);
CflCheck check_cfl(const ProblemSpec& spec);

// Flat ordering of the unknown vector w (length 3 Nx Nt + 2 Nx):
//   rho^0 .. rho^Nt, then u^0 .. u^{Nt-1}, then V^0 .. V^Nt,
// each level holding Nx entries. Residual rows are stacked as
//   continuity (n = 0..Nt-1, defines rho^{n+1}), HJB value (n = 0..Nt-1),
//   speed definition (n = 0..Nt-1), initial density (Nx), terminal value (Nx).
class UnknownLayout {
 public:
  enum class Block { kContinuity, kHjb, kSpeed, kInitial, kTerminal };

  explicit UnknownLayout(const SpaceTimeGrid& grid)
      : nx_(grid.num_cells), nt_(grid.num_steps) {}

  int nx() const { return nx_; }
  int nt() const { return nt_; }
  int size() const { return 3 * nx_ * nt_ + 2 * nx_; }

  int density(int n, int j) const { return n * nx_ + wrap(j); }
  int speed(int n, int j) const { return speed_offset() + n * nx_ + wrap(j); }
  int value(int n, int j) const { return value_offset() + n * nx_ + wrap(j); }

  int speed_offset() const { return (nt_ + 1) * nx_; }
  int value_offset() const { return (2 * nt_ + 1) * nx_; }

  int continuity_row(int n, int j) const { return n * nx_ + wrap(j); }
  int hjb_row(int n, int j) const { return (nt_ + n) * nx_ + wrap(j); }
  int speed_row(int n, int j) const { return (2 * nt_ + n) * nx_ + wrap(j); }
  int initial_row(int j) const { return 3 * nt_ * nx_ + wrap(j); }
  int terminal_row(int j) const { return 3 * nt_ * nx_ + nx_ + wrap(j); }

  // Block and offset within the block for a residual row.
  std::pair<Block, int> row_block(int row) const;

 private:
  int wrap(int j) const {
    int r = j % nx_;
    return r < 0 ? r + nx_ : r;
  }
  int nx_;
  int nt_;
};

const char* block_name(UnknownLayout::Block block);

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor, int>;

Eigen::VectorXd pack(const SolutionTriple& solution);
// The speed field's level Nt is reconstructed from V^Nt and rho^Nt with the
// speed-definition formula and flagged as derived.
SolutionTriple unpack(const Eigen::VectorXd& w, const ProblemSpec& spec);

// One Lax-Friedrichs step on the ring. Throws ConfigError when
// max|u| dt > dx.
std::vector<double> lf_step(std::span<const double> density,
                            std::span<const double> speed,
                            const SpaceTimeGrid& grid);

struct HjbLevel {
  std::vector<double> value;
  std::vector<double> speed;
};

// One backward step of the HJB scheme from level n+1 to level n.
HjbLevel hjb_backstep(std::span<const double> value_next,
                      std::span<const double> density,
                      const CostModel& model, const SpaceTimeGrid& grid,
                      HjbStencil stencil = HjbStencil::kUpwind);

Eigen::VectorXd assemble_residual(const Eigen::VectorXd& w,
                                  const ProblemSpec& spec);

SparseMatrix assemble_jacobian(const Eigen::VectorXd& w,
                               const ProblemSpec& spec);

// Debug dump with header "block,index,value".
void write_residual_csv(std::ostream& out, const Eigen::VectorXd& residual,
                        const UnknownLayout& layout);

}  // namespace avmfg
