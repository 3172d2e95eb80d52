#include "avmfg/discretization.hpp"

#include <algorithm>
#include <boost/math/quadrature/gauss.hpp>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "avmfg/errors.hpp"

namespace avmfg {

namespace {

int stencil_offset(HjbStencil stencil) {
  return stencil == HjbStencil::kUpwind ? 1 : -1;
}

// Costate at node j; `s` is +1 (upwind) or -1 (printed).
double costate(std::span<const double> v, int j, int s,
               const SpaceTimeGrid& grid) {
  const double neighbor = v[grid.wrap(j + s)];
  return s * (neighbor - v[j]) / grid.dx();
}

}  // namespace

ProblemSpec ProblemSpec::make(const SpaceTimeGrid& grid, const CostModel& cost,
                              ScalarFunction initial_density,
                              ScalarFunction terminal_cost,
                              HjbStencil stencil) {
  if (!initial_density) throw ConfigError("initial density is required");
  if (!terminal_cost) terminal_cost = [](double) { return 0.0; };

  ProblemSpec spec{grid,
                   cost,
                   std::move(initial_density),
                   std::move(terminal_cost),
                   stencil,
                   {},
                   {}};
  spec.initial_cells = cell_averages(grid, spec.initial_density);
  double mass = 0.0;
  for (double r : spec.initial_cells) {
    if (!std::isfinite(r)) throw ConfigError("initial density is not finite");
    mass += r * grid.dx();
  }
  if (!(mass >= 0.0)) throw ConfigError("initial density has negative mass");

  ScalarField probe(grid, spec.value_staggering());
  spec.terminal_nodes.resize(grid.num_cells);
  for (int j = 0; j < grid.num_cells; ++j) {
    spec.terminal_nodes[j] = spec.terminal_cost(probe.position(j));
  }
  return spec;
}

ProblemSpec ProblemSpec::on_grid(const SpaceTimeGrid& other) const {
  return make(other, cost, initial_density, terminal_cost, stencil);
}

Staggering ProblemSpec::value_staggering() const {
  return stencil == HjbStencil::kUpwind ? Staggering::kLeftNode
                                        : Staggering::kRightNode;
}

bool ProblemSpec::terminal_cost_is_zero() const {
  return std::all_of(terminal_nodes.begin(), terminal_nodes.end(),
                     [](double v) { return v == 0.0; });
}

std::vector<double> cell_averages(const SpaceTimeGrid& grid,
                                  const ScalarFunction& f) {
  using Quadrature = boost::math::quadrature::gauss<double, 16>;
  std::vector<double> out(grid.num_cells);
  const double dx = grid.dx();
  for (int j = 0; j < grid.num_cells; ++j) {
    out[j] = Quadrature::integrate(f, j * dx, (j + 1) * dx) / dx;
  }
  return out;
}

CflCheck check_cfl(const SpaceTimeGrid& grid, double u_max) {
  CflCheck c;
  c.ratio = u_max * grid.dt() / grid.dx();
  c.pass = c.ratio <= 1.0 + 1e-12;
  return c;
}

CflCheck check_cfl(const ProblemSpec& spec) {
  return check_cfl(spec.grid, spec.cost.u_max());
}

std::pair<UnknownLayout::Block, int> UnknownLayout::row_block(int row) const {
  const int level = nt_ * nx_;
  if (row < level) return {Block::kContinuity, row};
  if (row < 2 * level) return {Block::kHjb, row - level};
  if (row < 3 * level) return {Block::kSpeed, row - 2 * level};
  if (row < 3 * level + nx_) return {Block::kInitial, row - 3 * level};
  return {Block::kTerminal, row - 3 * level - nx_};
}

const char* block_name(UnknownLayout::Block block) {
  switch (block) {
    case UnknownLayout::Block::kContinuity:
      return "continuity";
    case UnknownLayout::Block::kHjb:
      return "hjb";
    case UnknownLayout::Block::kSpeed:
      return "speed";
    case UnknownLayout::Block::kInitial:
      return "initial";
    case UnknownLayout::Block::kTerminal:
      return "terminal";
  }
  return "?";
}

Eigen::VectorXd pack(const SolutionTriple& solution) {
  const SpaceTimeGrid& g = solution.density.grid();
  if (!(solution.speed.grid() == g) || !(solution.value.grid() == g)) {
    throw DimensionError("pack: fields live on different grids");
  }
  const UnknownLayout layout(g);
  Eigen::VectorXd w(layout.size());
  for (int n = 0; n <= g.num_steps; ++n) {
    for (int j = 0; j < g.num_cells; ++j) {
      w[layout.density(n, j)] = solution.density(n, j);
      w[layout.value(n, j)] = solution.value(n, j);
      if (n < g.num_steps) w[layout.speed(n, j)] = solution.speed(n, j);
    }
  }
  return w;
}

SolutionTriple unpack(const Eigen::VectorXd& w, const ProblemSpec& spec) {
  const SpaceTimeGrid& g = spec.grid;
  const UnknownLayout layout(g);
  if (w.size() != layout.size()) {
    throw DimensionError("unpack: unknown vector has the wrong length");
  }
  SolutionTriple out{ScalarField(g, Staggering::kCellCenter),
                     ScalarField(g, Staggering::kCellCenter),
                     ScalarField(g, spec.value_staggering())};
  for (int n = 0; n <= g.num_steps; ++n) {
    for (int j = 0; j < g.num_cells; ++j) {
      out.density(n, j) = w[layout.density(n, j)];
      out.value(n, j) = w[layout.value(n, j)];
      if (n < g.num_steps) out.speed(n, j) = w[layout.speed(n, j)];
    }
  }
  const int s = stencil_offset(spec.stencil);
  const auto v_last = out.value.level(g.num_steps);
  for (int j = 0; j < g.num_cells; ++j) {
    const double p = costate(v_last, j, s, g);
    out.speed(g.num_steps, j) =
        spec.cost.optimal_speed(p, out.density(g.num_steps, j));
  }
  out.speed.set_last_level_derived(true);
  return out;
}

std::vector<double> lf_step(std::span<const double> density,
                            std::span<const double> speed,
                            const SpaceTimeGrid& grid) {
  const int nx = grid.num_cells;
  if (static_cast<int>(density.size()) != nx ||
      static_cast<int>(speed.size()) != nx) {
    throw DimensionError("lf_step: level size does not match the grid");
  }
  double alpha = 0.0;
  for (double u : speed) alpha = std::max(alpha, std::abs(u));
  if (alpha * grid.dt() > grid.dx() * (1.0 + 1e-12)) {
    std::ostringstream msg;
    msg << "CFL violated: max|u| dt / dx = " << alpha * grid.dt() / grid.dx();
    throw ConfigError(msg.str());
  }
  const double lambda = grid.dt() / (2.0 * grid.dx());
  std::vector<double> next(nx);
  for (int j = 0; j < nx; ++j) {
    const int l = grid.wrap(j - 1);
    const int r = grid.wrap(j + 1);
    next[j] = 0.5 * (density[l] + density[r]) -
              lambda * (density[r] * speed[r] - density[l] * speed[l]);
  }
  return next;
}

HjbLevel hjb_backstep(std::span<const double> value_next,
                      std::span<const double> density,
                      const CostModel& model, const SpaceTimeGrid& grid,
                      HjbStencil stencil) {
  const int nx = grid.num_cells;
  if (static_cast<int>(value_next.size()) != nx ||
      static_cast<int>(density.size()) != nx) {
    throw DimensionError("hjb_backstep: level size does not match the grid");
  }
  const int s = stencil_offset(stencil);
  HjbLevel out{std::vector<double>(nx), std::vector<double>(nx)};
  for (int j = 0; j < nx; ++j) {
    const LegendrePoint lp =
        model.legendre(costate(value_next, j, s, grid), density[j]);
    out.value[j] = value_next[j] + grid.dt() * lp.value;
    out.speed[j] = lp.speed;
  }
  return out;
}

Eigen::VectorXd assemble_residual(const Eigen::VectorXd& w,
                                  const ProblemSpec& spec) {
  const SpaceTimeGrid& g = spec.grid;
  const UnknownLayout L(g);
  if (w.size() != L.size()) {
    throw DimensionError("assemble_residual: wrong unknown vector length");
  }
  const int nx = g.num_cells;
  const int nt = g.num_steps;
  const double dt = g.dt();
  const double lambda = dt / (2.0 * g.dx());
  const int s = stencil_offset(spec.stencil);

  Eigen::VectorXd F(L.size());
  for (int n = 0; n < nt; ++n) {
    std::span<const double> v_next(w.data() + L.value(n + 1, 0), nx);
    for (int j = 0; j < nx; ++j) {
      const double rl = w[L.density(n, j - 1)];
      const double rr = w[L.density(n, j + 1)];
      const double ul = w[L.speed(n, j - 1)];
      const double ur = w[L.speed(n, j + 1)];
      F[L.continuity_row(n, j)] = w[L.density(n + 1, j)] - 0.5 * (rl + rr) +
                                  lambda * (rr * ur - rl * ul);

      const LegendrePoint lp =
          spec.cost.legendre(costate(v_next, j, s, g), w[L.density(n, j)]);
      F[L.hjb_row(n, j)] =
          w[L.value(n, j)] - w[L.value(n + 1, j)] - dt * lp.value;
      F[L.speed_row(n, j)] = w[L.speed(n, j)] - lp.speed;
    }
  }
  for (int j = 0; j < nx; ++j) {
    F[L.initial_row(j)] = w[L.density(0, j)] - spec.initial_cells[j];
    F[L.terminal_row(j)] = w[L.value(nt, j)] - spec.terminal_nodes[j];
  }
  return F;
}

SparseMatrix assemble_jacobian(const Eigen::VectorXd& w,
                               const ProblemSpec& spec) {
  const SpaceTimeGrid& g = spec.grid;
  const UnknownLayout L(g);
  if (w.size() != L.size()) {
    throw DimensionError("assemble_jacobian: wrong unknown vector length");
  }
  const int nx = g.num_cells;
  const int nt = g.num_steps;
  const double dt = g.dt();
  const double dx = g.dx();
  const double lambda = dt / (2.0 * dx);
  const int s = stencil_offset(spec.stencil);

  std::vector<Eigen::Triplet<double>> t;
  t.reserve(static_cast<std::size_t>(nx) * nt * 13 + 2 * nx);
  for (int n = 0; n < nt; ++n) {
    std::span<const double> v_next(w.data() + L.value(n + 1, 0), nx);
    for (int j = 0; j < nx; ++j) {
      // continuity
      const int rc = L.continuity_row(n, j);
      t.emplace_back(rc, L.density(n + 1, j), 1.0);
      t.emplace_back(rc, L.density(n, j - 1),
                     -0.5 - lambda * w[L.speed(n, j - 1)]);
      t.emplace_back(rc, L.density(n, j + 1),
                     -0.5 + lambda * w[L.speed(n, j + 1)]);
      t.emplace_back(rc, L.speed(n, j + 1), lambda * w[L.density(n, j + 1)]);
      t.emplace_back(rc, L.speed(n, j - 1), -lambda * w[L.density(n, j - 1)]);

      // p = s (V_{j+s} - V_j) / dx, so dp/dV_{j+s} = s/dx, dp/dV_j = -s/dx.
      const LegendrePoint lp =
          spec.cost.legendre(costate(v_next, j, s, g), w[L.density(n, j)]);
      const int rh = L.hjb_row(n, j);
      t.emplace_back(rh, L.value(n, j), 1.0);
      t.emplace_back(rh, L.value(n + 1, j), -1.0 + dt * lp.speed * s / dx);
      t.emplace_back(rh, L.value(n + 1, j + s), -dt * lp.speed * s / dx);
      t.emplace_back(rh, L.density(n, j), -dt * lp.value_drho);

      const int rs = L.speed_row(n, j);
      t.emplace_back(rs, L.speed(n, j), 1.0);
      t.emplace_back(rs, L.value(n + 1, j + s), -lp.speed_dp * s / dx);
      t.emplace_back(rs, L.value(n + 1, j), lp.speed_dp * s / dx);
      t.emplace_back(rs, L.density(n, j), -lp.speed_drho);
    }
  }
  for (int j = 0; j < nx; ++j) {
    t.emplace_back(L.initial_row(j), L.density(0, j), 1.0);
    t.emplace_back(L.terminal_row(j), L.value(nt, j), 1.0);
  }
  SparseMatrix J(L.size(), L.size());
  J.setFromTriplets(t.begin(), t.end());
  return J;
}

void write_residual_csv(std::ostream& out, const Eigen::VectorXd& residual,
                        const UnknownLayout& layout) {
  out << "block,index,value\n" << std::setprecision(15);
  for (int r = 0; r < residual.size(); ++r) {
    const auto [block, index] = layout.row_block(r);
    out << block_name(block) << ',' << index << ',' << residual[r] << '\n';
  }
}

}  // namespace avmfg
