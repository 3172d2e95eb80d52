#include "avmfg/grid.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "avmfg/errors.hpp"

namespace avmfg {

SpaceTimeGrid SpaceTimeGrid::make(double length, double horizon, int num_cells,
                                  int num_steps) {
  if (!(length > 0.0) || !std::isfinite(length)) {
    throw ConfigError("road length must be positive and finite");
  }
  if (!(horizon > 0.0) || !std::isfinite(horizon)) {
    throw ConfigError("horizon must be positive and finite");
  }
  if (num_cells < 2) throw ConfigError("need at least 2 cells");
  if (num_steps < 1) throw ConfigError("need at least 1 time step");
  return SpaceTimeGrid{length, horizon, num_cells, num_steps};
}

double SpaceTimeGrid::wrap_position(double x) const {
  double r = std::fmod(x, length);
  if (r < 0.0) r += length;
  // fmod can return exactly `length` after the shift for tiny negatives.
  if (r >= length) r = 0.0;
  return r;
}

SpaceTimeGrid SpaceTimeGrid::refined() const {
  return make(length, horizon, 2 * num_cells, 2 * num_steps);
}

SpaceTimeGrid SpaceTimeGrid::coarsened() const {
  if (num_cells % 2 != 0 || num_steps % 2 != 0) {
    throw ConfigError("grid cannot be coarsened by 2");
  }
  return make(length, horizon, num_cells / 2, num_steps / 2);
}

ScalarField::ScalarField(const SpaceTimeGrid& grid, Staggering staggering,
                         double fill)
    : grid_(grid),
      staggering_(staggering),
      values_(static_cast<std::size_t>(grid.num_steps + 1) * grid.num_cells,
              fill) {}

std::span<double> ScalarField::level(int n) {
  return {values_.data() + index(n, 0),
          static_cast<std::size_t>(grid_.num_cells)};
}

std::span<const double> ScalarField::level(int n) const {
  return {values_.data() + index(n, 0),
          static_cast<std::size_t>(grid_.num_cells)};
}

double ScalarField::position(int j) const {
  switch (staggering_) {
    case Staggering::kCellCenter:
      return (j + 0.5) * grid_.dx();
    case Staggering::kLeftNode:
      return j * grid_.dx();
    case Staggering::kRightNode:
      return (j + 1) * grid_.dx();
  }
  return 0.0;
}

double ScalarField::min() const {
  return *std::min_element(values_.begin(), values_.end());
}

double ScalarField::max() const {
  return *std::max_element(values_.begin(), values_.end());
}

namespace {

// Grid coordinates computed as x / dx land a few ulps off integers; pull
// them back so stored values are reproduced exactly at grid points.
double snap_to_integer(double s) {
  const double r = std::round(s);
  return std::abs(s - r) <= 1e-10 * std::max(1.0, std::abs(s)) ? r : s;
}

}  // namespace

double interpolate_space_time(const ScalarField& field, double x, double t) {
  const SpaceTimeGrid& g = field.grid();
  const double slack = 1e-12 * g.horizon;
  if (!(t >= -slack && t <= g.horizon + slack)) {
    std::ostringstream msg;
    msg << "time " << t << " outside [0, " << g.horizon << "]";
    throw DomainError(msg.str());
  }
  t = std::clamp(t, 0.0, g.horizon);

  double s = snap_to_integer(t / g.dt());
  int n = std::min(static_cast<int>(std::floor(s)), g.num_steps - 1);
  double theta = s - n;
  if (theta > 1.0) theta = 1.0;

  const double offset = field.position(0);
  double xi = snap_to_integer(g.wrap_position(x - offset) / g.dx());
  int j = static_cast<int>(std::floor(xi));
  double phi = xi - j;
  if (j >= g.num_cells) {
    j -= g.num_cells;
  }
  int j0 = g.wrap(j);
  int j1 = g.wrap(j + 1);

  auto at_level = [&](int level) {
    return (1.0 - phi) * field(level, j0) + phi * field(level, j1);
  };
  // Avoid touching level n+1 when theta == 0 so exact nodes stay exact.
  if (theta == 0.0) return at_level(n);
  return (1.0 - theta) * at_level(n) + theta * at_level(n + 1);
}

ScalarField resample(const ScalarField& field, const SpaceTimeGrid& target) {
  ScalarField out(target, field.staggering());
  for (int n = 0; n <= target.num_steps; ++n) {
    const double t = target.time(n);
    for (int j = 0; j < target.num_cells; ++j) {
      out(n, j) = interpolate_space_time(field, out.position(j), t);
    }
  }
  return out;
}

double l1_norm(const ScalarField& a, const ScalarField& b) {
  if (!(a.grid() == b.grid())) throw DimensionError("l1_norm: grid mismatch");
  if (a.staggering() != b.staggering()) {
    throw DimensionError("l1_norm: staggering mismatch");
  }
  double sum = 0.0;
  const auto& va = a.values();
  const auto& vb = b.values();
  for (std::size_t k = 0; k < va.size(); ++k) sum += std::abs(va[k] - vb[k]);
  return sum * a.grid().dx() * a.grid().dt();
}

void write_field_csv(std::ostream& out, const ScalarField& field) {
  const SpaceTimeGrid& g = field.grid();
  out << "t,x,value\n";
  out << std::setprecision(15);
  for (int n = 0; n <= g.num_steps; ++n) {
    const double t = g.time(n);
    for (int j = 0; j < g.num_cells; ++j) {
      out << t << ',' << field.position(j) << ',' << field(n, j) << '\n';
    }
  }
}

}  // namespace avmfg
