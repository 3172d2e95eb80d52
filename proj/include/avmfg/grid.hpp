#pragma once

#include <iosfwd>
#include <span>
#include <vector>

namespace avmfg {

// Uniform discretization of a ring road [0, L) over the horizon [0, T].
// Cell j covers [j*dx, (j+1)*dx); indices wrap modulo num_cells.
struct SpaceTimeGrid {
  double length = 1.0;
  double horizon = 1.0;
  int num_cells = 2;
  int num_steps = 1;

  // Validating constructor; throws ConfigError.
  static SpaceTimeGrid make(double length, double horizon, int num_cells,
                            int num_steps);

  double dx() const { return length / num_cells; }
  double dt() const { return horizon / num_steps; }
  double time(int n) const { return horizon * n / num_steps; }
  double cell_center(int j) const { return (j + 0.5) * dx(); }

  int wrap(int j) const {
    int r = j % num_cells;
    return r < 0 ? r + num_cells : r;
  }
  double wrap_position(double x) const;

  // 2x refinement in both space and time.
  SpaceTimeGrid refined() const;
  SpaceTimeGrid coarsened() const;

  bool operator==(const SpaceTimeGrid&) const = default;
};

// Where the value with spatial index j lives.
enum class Staggering {
  kCellCenter,  // (j + 1/2) dx
  kLeftNode,    // j dx
  kRightNode,   // (j + 1) dx
};

// Values on (num_steps + 1) time levels by num_cells spatial indices,
// stored time-major.
class ScalarField {
 public:
  ScalarField() = default;
  ScalarField(const SpaceTimeGrid& grid, Staggering staggering,
              double fill = 0.0);

  const SpaceTimeGrid& grid() const { return grid_; }
  Staggering staggering() const { return staggering_; }

  double& operator()(int n, int j) { return values_[index(n, j)]; }
  double operator()(int n, int j) const { return values_[index(n, j)]; }

  std::span<double> level(int n);
  std::span<const double> level(int n) const;

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  // Physical coordinate of spatial index j.
  double position(int j) const;

  // True when the last time level is not an unknown of the discrete system
  // but was reconstructed afterwards (speed at t = T).
  bool last_level_derived() const { return last_level_derived_; }
  void set_last_level_derived(bool derived) { last_level_derived_ = derived; }

  double min() const;
  double max() const;

 private:
  std::size_t index(int n, int j) const {
    return static_cast<std::size_t>(n) * grid_.num_cells + j;
  }

  SpaceTimeGrid grid_;
  Staggering staggering_ = Staggering::kCellCenter;
  std::vector<double> values_;
  bool last_level_derived_ = false;
};

// Density and speed are cell averages; the value function lives at nodes.
struct SolutionTriple {
  ScalarField density;
  ScalarField speed;
  ScalarField value;
};

// Bilinear interpolation in (x, t) with periodic wrap in x.
// Throws DomainError when t is outside [0, T].
double interpolate_space_time(const ScalarField& field, double x, double t);

// Samples `field` at every (position, time) of `target` with the same
// staggering, by interpolate_space_time.
ScalarField resample(const ScalarField& field, const SpaceTimeGrid& target);

// Discrete L1 distance on [0, L] x [0, T]: sum |a - b| dx dt over all
// (Nt + 1) Nx entries (every time level carries weight dt).
// Throws DimensionError on grid or staggering mismatch.
double l1_norm(const ScalarField& a, const ScalarField& b);

// CSV with header "t,x,value", rows ordered by time level then index.
void write_field_csv(std::ostream& out, const ScalarField& field);

}  // namespace avmfg
