#include "avmfg/micro_game.hpp"

#include <algorithm>
#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/tools/roots.hpp>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>

#include "avmfg/errors.hpp"

namespace avmfg {

namespace {

constexpr int kImages = 5;

double reduce(double d, double length) {
  return d - length * std::floor(d / length + 0.5);
}

// Kernel density of all cars on the nodes k h of a DP grid, one row per
// time level n < Nt.
struct NodeDensity {
  double spacing = 0.0;
  Eigen::MatrixXd full;  // Nt x M
};

NodeDensity node_density(const ControlSet& controls, const CarEnsemble& ens,
                         int nodes) {
  const int nt = controls.grid.num_steps;
  NodeDensity out{ens.length / nodes, Eigen::MatrixXd::Zero(nt, nodes)};
  const double w = ens.weight();
  for (int n = 0; n < nt; ++n) {
    for (int k = 0; k < nodes; ++k) {
      const double x = k * out.spacing;
      double sum = 0.0;
      for (int j = 0; j < controls.size(); ++j) {
        sum += ens.kernel.value(x - controls.positions(j, n), ens.length);
      }
      out.full(n, k) = w * sum;
    }
  }
  return out;
}

// Density seen by `car` at x on level n when the others sit where
// `controls` puts them.
struct CarView {
  int car;
  const ControlSet& controls;
  const CarEnsemble& ens;

  double self_term() const {
    return ens.self == SelfInteraction::kInclude
               ? ens.weight() * ens.kernel.value(0.0, ens.length)
               : 0.0;
  }
  double density(double x, int n) const {
    double sum = 0.0;
    for (int j = 0; j < controls.size(); ++j) {
      if (j != car) sum += ens.kernel.value(x - controls.positions(j, n), ens.length);
    }
    return ens.weight() * sum + self_term();
  }
  double density_dx(double x, int n) const {
    double sum = 0.0;
    for (int j = 0; j < controls.size(); ++j) {
      if (j != car) {
        sum += ens.kernel.derivative(x - controls.positions(j, n), ens.length);
      }
    }
    return ens.weight() * sum;
  }
};

double terminal(const ScalarFunction& vt, double x) { return vt ? vt(x) : 0.0; }

double terminal_slope(const ScalarFunction& vt, double x) {
  if (!vt) return 0.0;
  const double h = 1e-6;
  return (vt(x + h) - vt(x - h)) / (2 * h);
}

struct CostAndGradient {
  double cost = 0.0;
  std::vector<double> gradient;
};

// Exact discrete cost of a deviation and, when asked, its gradient with
// respect to the speeds by the adjoint recursion
//   lambda_Nt = V_T'(x_Nt),
//   lambda_n  = lambda_{n+1} + dt f_rho(v_n, D_n) D_x(x_n)   (n >= 1),
//   dJ/dv_n   = dt (f_u(v_n, D_n) + lambda_{n+1}).
CostAndGradient evaluate_deviation(const CarView& view,
                                   std::span<const double> speeds,
                                   const CostModel& model,
                                   const ScalarFunction& vt, bool gradient) {
  const SpaceTimeGrid& g = view.controls.grid;
  const int nt = g.num_steps;
  const double dt = g.dt();
  std::vector<double> x(nt + 1), rho(nt);
  x[0] = view.controls.positions(view.car, 0);
  CostAndGradient out;
  for (int n = 0; n < nt; ++n) {
    rho[n] = view.density(x[n], n);
    out.cost += model.running_cost(speeds[n], rho[n]) * dt;
    x[n + 1] = g.wrap_position(x[n] + dt * speeds[n]);
  }
  out.cost += terminal(vt, x[nt]);
  if (!gradient) return out;

  out.gradient.assign(nt, 0.0);
  double lambda = terminal_slope(vt, x[nt]);
  for (int n = nt - 1; n >= 0; --n) {
    out.gradient[n] = dt * (model.running_cost_du(speeds[n], rho[n]) + lambda);
    if (n > 0) {
      lambda += dt * model.running_cost_drho(speeds[n], rho[n]) *
                view.density_dx(x[n], n);
    }
  }
  return out;
}

std::vector<double> polish(const CarView& view, std::vector<double> v,
                           const CostModel& model, const ScalarFunction& vt,
                           int iterations) {
  const double um = model.u_max();
  auto project = [um](double s) { return std::clamp(s, 0.0, um); };
  CostAndGradient cur = evaluate_deviation(view, v, model, vt, true);
  const double dt = view.controls.grid.dt();
  double alpha = um / std::max(dt, 1e-300);
  std::vector<double> trial(v.size());
  for (int it = 0; it < iterations; ++it) {
    double stationarity = 0.0;
    for (std::size_t n = 0; n < v.size(); ++n) {
      stationarity =
          std::max(stationarity, std::abs(project(v[n] - cur.gradient[n]) - v[n]));
    }
    if (stationarity < 1e-14) break;
    bool accepted = false;
    for (int halving = 0; halving < 40; ++halving, alpha *= 0.5) {
      double decrease = 0.0;
      for (std::size_t n = 0; n < v.size(); ++n) {
        trial[n] = project(v[n] - alpha * cur.gradient[n]);
        decrease += cur.gradient[n] * (v[n] - trial[n]);
      }
      if (decrease <= 0.0) continue;
      CostAndGradient next = evaluate_deviation(view, trial, model, vt, true);
      if (next.cost <= cur.cost - 1e-4 * decrease) {
        // Barzilai-Borwein length for the next step.
        double ss = 0.0, sy = 0.0;
        for (std::size_t n = 0; n < v.size(); ++n) {
          const double s = trial[n] - v[n];
          ss += s * s;
          sy += s * (next.gradient[n] - cur.gradient[n]);
        }
        alpha = sy > 0.0 ? ss / sy : alpha * 2.0;
        v = trial;
        cur = std::move(next);
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }
  return v;
}

BestResponse best_response_on(int car, const ControlSet& controls,
                              const CarEnsemble& ens, const CostModel& model,
                              const ScalarFunction& vt,
                              const BestResponseOptions& options,
                              const NodeDensity& nodes) {
  const SpaceTimeGrid& g = controls.grid;
  const int nt = g.num_steps;
  const int m = static_cast<int>(nodes.full.cols());
  const double h = nodes.spacing;
  const double dt = g.dt();
  const double um = model.u_max();
  const SpaceTimeGrid fine{g.length, g.horizon, m, nt};

  const CarView view{car, controls, ens};
  const double self = view.self_term();
  const double w = ens.weight();

  // Backward DP on the nodes with the density frozen.
  std::vector<std::vector<double>> V(nt + 1, std::vector<double>(m));
  for (int k = 0; k < m; ++k) V[nt][k] = terminal(vt, k * h);
  std::vector<double> dens(m);
  for (int n = nt - 1; n >= 0; --n) {
    const double own = controls.positions(car, n);
    for (int k = 0; k < m; ++k) {
      dens[k] = nodes.full(n, k) - w * ens.kernel.value(k * h - own, ens.length) +
                self;
    }
    V[n] = hjb_backstep(V[n + 1], dens, model, fine, HjbStencil::kUpwind).value;
  }

  // Forward tracking: one-step lookahead against the interpolated V^{n+1}.
  auto node = [m](long k) {
    long r = k % m;
    return static_cast<int>(r < 0 ? r + m : r);
  };
  BestResponse out;
  out.speeds.resize(nt);
  out.positions.resize(nt + 1);
  double x = controls.positions(car, 0);
  out.positions[0] = x;
  for (int n = 0; n < nt; ++n) {
    const double rho = view.density(x, n);
    const double reach = x + um * dt;
    double best_total = std::numeric_limits<double>::infinity();
    double best_speed = 0.0;
    double lo = x;
    while (true) {
      long k = static_cast<long>(std::floor(lo / h));
      if ((k + 1) * h <= lo) ++k;
      const double hi = std::min(reach, (k + 1) * h);
      const std::vector<double>& Vn = V[n + 1];
      const double slope = (Vn[node(k + 1)] - Vn[node(k)]) / h;
      const double base = Vn[node(k)] + slope * (x - k * h);
      const double vlo = dt > 0 ? std::clamp((lo - x) / dt, 0.0, um) : 0.0;
      const double vhi = dt > 0 ? std::clamp((hi - x) / dt, vlo, um) : 0.0;
      const IntervalMinimum seg = model.minimize_on(slope, rho, vlo, vhi);
      const double total = dt * seg.value + base;
      if (total < best_total) {
        best_total = total;
        best_speed = seg.argmin;
      }
      if (hi >= reach || um == 0.0) break;
      lo = hi;
    }
    out.speeds[n] = best_speed;
    x = g.wrap_position(x + dt * best_speed);
    out.positions[n + 1] = x;
  }

  out.dp_cost = evaluate_deviation(view, out.speeds, model, vt, false).cost;
  out.cost = out.dp_cost;
  if (options.polish) {
    std::vector<double> v =
        polish(view, out.speeds, model, vt, options.polish_iterations);
    const double c = evaluate_deviation(view, v, model, vt, false).cost;
    if (c < out.cost) {
      out.speeds = std::move(v);
      out.cost = c;
      double y = controls.positions(car, 0);
      for (int n = 0; n < nt; ++n) {
        y = g.wrap_position(y + dt * out.speeds[n]);
        out.positions[n + 1] = y;
      }
    }
  }
  return out;
}

int refine_factor(const ControlSet& controls, const CostModel& model,
                  const BestResponseOptions& options) {
  if (options.max_refine < 1) {
    throw ConfigError("best response: max_refine must be >= 1");
  }
  const SpaceTimeGrid& g = controls.grid;
  const double reach = model.u_max() * g.dt();
  if (reach <= 0.0) return options.max_refine;
  const double cells = std::floor(g.dx() / reach * (1.0 + 1e-12));
  if (cells < 1.0) {
    throw ConfigError("best response: u_max dt exceeds dx");
  }
  return static_cast<int>(std::min<double>(options.max_refine, cells));
}

}  // namespace

KernelSpec KernelSpec::gaussian(double sigma,
                                DensityNormalization normalization) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw ConfigError("kernel width sigma must be > 0");
  }
  return KernelSpec{sigma, normalization};
}

double KernelSpec::value(double d, double length) const {
  const double r = reduce(d, length);
  const double c = 1.0 / (std::sqrt(2.0 * std::numbers::pi) * sigma);
  double sum = 0.0;
  for (int k = -kImages; k <= kImages; ++k) {
    const double z = (r + k * length) / sigma;
    if (std::abs(z) < 40.0) sum += std::exp(-0.5 * z * z);
  }
  return c * sum;
}

double KernelSpec::derivative(double d, double length) const {
  const double r = reduce(d, length);
  const double c = 1.0 / (std::sqrt(2.0 * std::numbers::pi) * sigma * sigma);
  double sum = 0.0;
  for (int k = -kImages; k <= kImages; ++k) {
    const double z = (r + k * length) / sigma;
    if (std::abs(z) < 40.0) sum -= z * std::exp(-0.5 * z * z);
  }
  return c * sum;
}

CarEnsemble CarEnsemble::make(double length, std::vector<double> positions,
                              KernelSpec kernel, SelfInteraction self) {
  if (!(length > 0.0) || !std::isfinite(length)) {
    throw ConfigError("road length must be > 0");
  }
  if (positions.empty()) throw ConfigError("ensemble needs at least one car");
  if (!(kernel.sigma > 0.0)) throw ConfigError("kernel width sigma must be > 0");
  for (double& x : positions) {
    if (!std::isfinite(x)) throw ConfigError("car position is not finite");
    x -= length * std::floor(x / length);
    if (x >= length) x = 0.0;
  }
  return CarEnsemble{length, std::move(positions), kernel, self};
}

double CarEnsemble::weight() const {
  return kernel.normalization == DensityNormalization::kUnitMass
             ? 1.0 / size()
             : 1.0;
}

double smooth_density_at(const CarEnsemble& ensemble,
                         std::span<const double> positions, double x) {
  double sum = 0.0;
  for (double xj : positions) sum += ensemble.kernel.value(x - xj, ensemble.length);
  return ensemble.weight() * sum;
}

std::vector<double> smooth_density(const CarEnsemble& ensemble,
                                   std::span<const double> positions,
                                   const SpaceTimeGrid& grid) {
  std::vector<double> out(grid.num_cells);
  for (int j = 0; j < grid.num_cells; ++j) {
    out[j] = smooth_density_at(ensemble, positions, grid.cell_center(j));
  }
  return out;
}

std::vector<double> sample_initial_positions(int count, double length,
                                             const ScalarFunction& density,
                                             PlacementMode mode,
                                             std::uint64_t seed) {
  if (count < 1) throw ConfigError("car count must be >= 1");
  if (!(length > 0.0)) throw ConfigError("road length must be > 0");
  if (!density) throw ConfigError("initial density is missing");
  auto rho = [&](double x) {
    const double r = density(x);
    if (!(r >= 0.0) || !std::isfinite(r)) {
      throw ConfigError("initial density must be finite and >= 0");
    }
    return r;
  };
  using Rule = boost::math::quadrature::gauss<double, 30>;
  constexpr int kPanels = 512;
  const double width = length / kPanels;
  std::vector<double> cumulative(kPanels + 1, 0.0);
  for (int p = 0; p < kPanels; ++p) {
    cumulative[p + 1] =
        cumulative[p] + Rule::integrate(rho, p * width, (p + 1) * width);
  }
  const double total = cumulative.back();
  if (!(total > 0.0)) throw ConfigError("initial density has no mass");

  auto inverse_cdf = [&](double q) {
    const double target = q * total;
    const auto it =
        std::upper_bound(cumulative.begin() + 1, cumulative.end(), target);
    const int p = std::min<int>(kPanels - 1, static_cast<int>(it - cumulative.begin()) - 1);
    const double a = p * width;
    auto excess = [&](double x) {
      return cumulative[p] + Rule::integrate(rho, a, x) - target;
    };
    const double fa = cumulative[p] - target;
    const double fb = cumulative[p + 1] - target;
    if (fa >= 0.0) return a;
    if (fb <= 0.0) return a + width;
    std::uintmax_t iters = 200;
    const auto bracket = boost::math::tools::toms748_solve(
        excess, a, a + width, fa, fb,
        boost::math::tools::eps_tolerance<double>(52), iters);
    return 0.5 * (bracket.first + bracket.second);
  };

  std::vector<double> out(count);
  if (mode == PlacementMode::kQuantile) {
    for (int i = 0; i < count; ++i) out[i] = inverse_cdf((i + 0.5) / count);
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    for (int i = 0; i < count; ++i) out[i] = inverse_cdf(uniform(rng));
  }
  for (double& x : out) {
    if (x >= length) x -= length;
  }
  return out;
}

ControlSet controls_from_speeds(const CarEnsemble& ensemble,
                                const SpaceTimeGrid& grid,
                                const Eigen::MatrixXd& speeds) {
  const int n_cars = ensemble.size();
  const int nt = grid.num_steps;
  if (speeds.rows() != n_cars || speeds.cols() != nt) {
    throw DimensionError("speed table must be N x Nt");
  }
  if (grid.length != ensemble.length) {
    throw ConfigError("grid and ensemble road lengths differ");
  }
  ControlSet out{grid, speeds, Eigen::MatrixXd(n_cars, nt + 1)};
  const double dt = grid.dt();
  for (int i = 0; i < n_cars; ++i) {
    double x = ensemble.initial_positions[i];
    out.positions(i, 0) = x;
    for (int n = 0; n < nt; ++n) {
      x = grid.wrap_position(x + dt * speeds(i, n));
      out.positions(i, n + 1) = x;
    }
  }
  return out;
}

ControlSet construct_controls(const SolutionTriple& mfe,
                              const CarEnsemble& ensemble) {
  const SpaceTimeGrid& grid = mfe.speed.grid();
  if (grid.length != ensemble.length) {
    throw ConfigError("MFE grid and ensemble road lengths differ");
  }
  const int n_cars = ensemble.size();
  const int nt = grid.num_steps;
  const double dt = grid.dt();
  ControlSet out{grid, Eigen::MatrixXd(n_cars, nt),
                 Eigen::MatrixXd(n_cars, nt + 1)};
  for (int i = 0; i < n_cars; ++i) {
    double x = ensemble.initial_positions[i];
    out.positions(i, 0) = x;
    for (int n = 0; n < nt; ++n) {
      const double v = interpolate_space_time(mfe.speed, x, grid.time(n));
      out.speeds(i, n) = v;
      x = grid.wrap_position(x + dt * v);
      out.positions(i, n + 1) = x;
    }
  }
  return out;
}

double deviation_cost(int car, std::span<const double> speeds,
                      const ControlSet& controls, const CarEnsemble& ensemble,
                      const CostModel& model,
                      const ScalarFunction& terminal_cost) {
  if (car < 0 || car >= controls.size()) {
    throw DimensionError("car index out of range");
  }
  if (static_cast<int>(speeds.size()) != controls.grid.num_steps) {
    throw DimensionError("deviation needs Nt speeds");
  }
  const CarView view{car, controls, ensemble};
  return evaluate_deviation(view, speeds, model, terminal_cost, false).cost;
}

double driving_cost(int car, const ControlSet& controls,
                    const CarEnsemble& ensemble, const CostModel& model,
                    const ScalarFunction& terminal_cost) {
  if (car < 0 || car >= controls.size()) {
    throw DimensionError("car index out of range");
  }
  const Eigen::VectorXd v = controls.speeds.row(car).transpose();
  return deviation_cost(car, std::span<const double>(v.data(), v.size()),
                        controls, ensemble, model, terminal_cost);
}

BestResponse best_response(int car, const ControlSet& controls,
                           const CarEnsemble& ensemble, const CostModel& model,
                           const ScalarFunction& terminal_cost,
                           const BestResponseOptions& options) {
  if (car < 0 || car >= controls.size()) {
    throw DimensionError("car index out of range");
  }
  const int refine = refine_factor(controls, model, options);
  const NodeDensity nodes =
      node_density(controls, ensemble, controls.grid.num_cells * refine);
  return best_response_on(car, controls, ensemble, model, terminal_cost,
                          options, nodes);
}

AccuracyReport epsilon_accuracy(const ControlSet& controls,
                                const CarEnsemble& ensemble,
                                const CostModel& model,
                                const ScalarFunction& terminal_cost,
                                const BestResponseOptions& options) {
  const int refine = refine_factor(controls, model, options);
  const NodeDensity nodes =
      node_density(controls, ensemble, controls.grid.num_cells * refine);
  AccuracyReport out;
  const int n_cars = controls.size();
  double max_eps = -std::numeric_limits<double>::infinity();
  double max_abs = 0.0, sum_eps = 0.0, sum_abs = 0.0;
  for (int i = 0; i < n_cars; ++i) {
    const double jc = driving_cost(i, controls, ensemble, model, terminal_cost);
    const BestResponse br = best_response_on(i, controls, ensemble, model,
                                             terminal_cost, options, nodes);
    out.cost_constructed.push_back(jc);
    out.cost_best_response.push_back(br.cost);
    out.epsilon.push_back(jc - br.cost);
    max_eps = std::max(max_eps, jc - br.cost);
    max_abs = std::max(max_abs, std::abs(jc));
    sum_eps += jc - br.cost;
    sum_abs += std::abs(jc);
  }
  if (max_abs == 0.0) {
    out.relative_defined = false;
    out.max_ra = out.mean_ra = std::numeric_limits<double>::quiet_NaN();
  } else {
    out.max_ra = max_eps / max_abs;
    out.mean_ra = sum_eps / sum_abs;
  }
  return out;
}

void AccuracyReport::write_csv(std::ostream& out) const {
  out << "car_index,cost_constructed,cost_best_response,epsilon\n";
  out << std::setprecision(15);
  for (std::size_t i = 0; i < epsilon.size(); ++i) {
    out << i << ',' << cost_constructed[i] << ',' << cost_best_response[i]
        << ',' << epsilon[i] << '\n';
  }
}

}  // namespace avmfg
