#include "avmfg/solver.hpp"

#include <Eigen/Dense>
#include <Eigen/OrderingMethods>
#include <Eigen/SparseLU>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

namespace avmfg {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

double max_norm(const Eigen::VectorXd& v) {
  return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
}

enum class ColumnKind { kDensity, kSpeed, kValue };

ColumnKind column_kind(const UnknownLayout& layout, int col) {
  if (col < layout.speed_offset()) return ColumnKind::kDensity;
  if (col < layout.value_offset()) return ColumnKind::kSpeed;
  return ColumnKind::kValue;
}

bool kept_by_preconditioner(const UnknownLayout& layout, int row, int col) {
  const auto block = layout.row_block(row).first;
  const ColumnKind kind = column_kind(layout, col);
  switch (block) {
    case UnknownLayout::Block::kContinuity:
    case UnknownLayout::Block::kInitial:
      return kind == ColumnKind::kDensity;
    case UnknownLayout::Block::kHjb:
    case UnknownLayout::Block::kSpeed:
    case UnknownLayout::Block::kTerminal:
      return kind != ColumnKind::kDensity;
  }
  return false;
}

GmresResult direct_solve(const SparseMatrix& J, const Eigen::VectorXd& rhs) {
  const Eigen::SparseMatrix<double> A = J;
  Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
  lu.compute(A);
  if (lu.info() != Eigen::Success) {
    throw LinearSolverError("sparse LU failed: " + lu.lastErrorMessage());
  }
  GmresResult out;
  out.x = lu.solve(rhs);
  const double bnorm = rhs.norm();
  out.relative_residual = bnorm > 0.0 ? (A * out.x - rhs).norm() / bnorm : 0.0;
  out.converged = true;
  return out;
}

}  // namespace

void SolverConfig::validate() const {
  if (!(newton_tolerance >= 0.0)) {
    throw ConfigError("solver.newton_tol must be >= 0");
  }
  if (max_newton_iterations < 0) {
    throw ConfigError("solver.max_newton must be >= 0");
  }
  if (!(gmres_tolerance > 0.0)) throw ConfigError("solver.gmres_tol must be > 0");
  if (gmres_restart < 1) throw ConfigError("solver.gmres_restart must be >= 1");
  if (gmres_max_iterations < 1) {
    throw ConfigError("solver.gmres_max must be >= 1");
  }
  if (coarsest_nx < 4) throw ConfigError("solver.coarsest_nx must be >= 4");
  if (!(min_damping > 0.0 && min_damping <= 0.125)) {
    throw ConfigError("solver.min_damping must be in (0, 1/8]");
  }
  if (!(negative_density_threshold >= 0.0)) {
    throw ConfigError("negative density threshold must be >= 0");
  }
}

long SolveReport::total_gmres_iterations() const {
  long total = 0;
  for (const auto& l : levels) total += l.gmres_iterations;
  return total;
}

double SolveReport::final_residual() const {
  return levels.empty() ? 0.0 : levels.back().final_residual;
}

void SolveReport::write_csv(std::ostream& out) const {
  out << "level,newton_iters,gmres_iters,final_residual,seconds\n";
  out << std::setprecision(12);
  for (std::size_t k = 0; k < levels.size(); ++k) {
    const auto& l = levels[k];
    out << k << ',' << l.newton_iterations << ',' << l.gmres_iterations << ','
        << l.final_residual << ',' << l.seconds << '\n';
  }
}

DecoupledPreconditioner::DecoupledPreconditioner(const SparseMatrix& jacobian,
                                                 const UnknownLayout& layout)
    : J_(jacobian), layout_(layout) {
  if (J_.rows() != layout.size() || J_.cols() != layout.size()) {
    throw DimensionError("preconditioner: Jacobian size mismatch");
  }
}

Eigen::VectorXd DecoupledPreconditioner::apply(const Eigen::VectorXd& r) const {
  const UnknownLayout& L = layout_;
  const int nx = L.nx();
  const int nt = L.nt();
  Eigen::VectorXd z = Eigen::VectorXd::Zero(L.size());

  // Solves one row for its pivot unknown, using only the kept columns whose
  // values are already known.
  auto solve_row = [&](int row, int pivot) {
    double rhs = r[row];
    double diag = 0.0;
    for (SparseMatrix::InnerIterator it(J_, row); it; ++it) {
      const int col = static_cast<int>(it.col());
      if (col == pivot) {
        diag += it.value();
      } else if (kept_by_preconditioner(L, row, col)) {
        rhs -= it.value() * z[col];
      }
    }
    if (!(std::abs(diag) > 1e-300) || !std::isfinite(diag)) {
      std::ostringstream msg;
      msg << "singular pivot in decoupled preconditioner at row " << row;
      throw PreconditionerError(msg.str());
    }
    z[pivot] = rhs / diag;
  };

  // Forward in time: density.
  for (int j = 0; j < nx; ++j) solve_row(L.initial_row(j), L.density(0, j));
  for (int n = 0; n < nt; ++n) {
    for (int j = 0; j < nx; ++j) {
      solve_row(L.continuity_row(n, j), L.density(n + 1, j));
    }
  }
  // Backward in time: value and speed.
  for (int j = 0; j < nx; ++j) solve_row(L.terminal_row(j), L.value(nt, j));
  for (int n = nt - 1; n >= 0; --n) {
    for (int j = 0; j < nx; ++j) {
      solve_row(L.hjb_row(n, j), L.value(n, j));
      solve_row(L.speed_row(n, j), L.speed(n, j));
    }
  }
  return z;
}

Eigen::VectorXd apply_preconditioner(const SparseMatrix& jacobian,
                                     const UnknownLayout& layout,
                                     const Eigen::VectorXd& r) {
  return DecoupledPreconditioner(jacobian, layout).apply(r);
}

SparseMatrix decoupled_part(const SparseMatrix& jacobian,
                            const UnknownLayout& layout) {
  SparseMatrix out = jacobian;
  out.prune([&](int row, int col, double) {
    return kept_by_preconditioner(layout, row, col);
  });
  return out;
}

GmresResult gmres(const SparseMatrix& A, const Eigen::VectorXd& b,
                  const LinearOperator& preconditioner, int restart,
                  double tolerance, int max_iterations) {
  const Eigen::Index n = b.size();
  GmresResult out;
  out.x = Eigen::VectorXd::Zero(n);
  const double bnorm = b.norm();
  if (bnorm == 0.0) {
    out.converged = true;
    return out;
  }
  auto precondition = [&](const Eigen::VectorXd& v) {
    return preconditioner ? preconditioner(v) : v;
  };

  const int m = std::max(1, restart);
  Eigen::MatrixXd basis(n, m + 1);
  Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(m + 1, m);
  Eigen::VectorXd cs(m), sn(m), g(m + 1);

  Eigen::VectorXd r = b;
  double beta = bnorm;
  while (true) {
    out.relative_residual = beta / bnorm;
    if (out.relative_residual <= tolerance) {
      out.converged = true;
      break;
    }
    if (out.iterations >= max_iterations) break;

    basis.col(0) = r / beta;
    hess.setZero();
    g.setZero();
    g[0] = beta;
    int k = 0;
    for (; k < m && out.iterations < max_iterations; ++k) {
      Eigen::VectorXd w = A * precondition(basis.col(k));
      // Classical Gram-Schmidt applied twice.
      const auto known = basis.leftCols(k + 1);
      for (int pass = 0; pass < 2; ++pass) {
        const Eigen::VectorXd h = known.transpose() * w;
        w.noalias() -= known * h;
        hess.col(k).head(k + 1) += h;
      }
      const double h_next = w.norm();
      hess(k + 1, k) = h_next;
      for (int i = 0; i < k; ++i) {
        const double a = cs[i] * hess(i, k) + sn[i] * hess(i + 1, k);
        hess(i + 1, k) = -sn[i] * hess(i, k) + cs[i] * hess(i + 1, k);
        hess(i, k) = a;
      }
      const double denom = std::hypot(hess(k, k), hess(k + 1, k));
      cs[k] = denom == 0.0 ? 1.0 : hess(k, k) / denom;
      sn[k] = denom == 0.0 ? 0.0 : hess(k + 1, k) / denom;
      hess(k, k) = denom;
      hess(k + 1, k) = 0.0;
      g[k + 1] = -sn[k] * g[k];
      g[k] = cs[k] * g[k];
      ++out.iterations;
      if (h_next > 0.0) basis.col(k + 1) = w / h_next;
      if (std::abs(g[k + 1]) / bnorm <= tolerance || h_next == 0.0) {
        ++k;
        break;
      }
    }
    const Eigen::VectorXd y = hess.topLeftCorner(k, k)
                                  .triangularView<Eigen::Upper>()
                                  .solve(g.head(k));
    out.x += precondition(basis.leftCols(k) * y);
    r = b - A * out.x;
    beta = r.norm();
    if (!std::isfinite(beta)) {
      throw LinearSolverError("GMRES produced a non-finite residual");
    }
  }
  return out;
}

Eigen::VectorXd cold_start(const ProblemSpec& spec) {
  const UnknownLayout L(spec.grid);
  double mean = 0.0;
  for (double r : spec.initial_cells) mean += r;
  mean /= spec.grid.num_cells;
  const double u = spec.cost.equilibrium_speed(mean);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(L.size());
  w.head(L.speed_offset()).setConstant(mean);
  w.segment(L.speed_offset(), L.value_offset() - L.speed_offset())
      .setConstant(u);
  return w;
}

SolveResult newton_solve(const ProblemSpec& spec, const Eigen::VectorXd& w0,
                         const SolverConfig& config) {
  config.validate();
  const CflCheck cfl = check_cfl(spec);
  if (!cfl.pass) {
    std::ostringstream msg;
    msg << "CFL violated: u_max dt / dx = " << cfl.ratio;
    throw ConfigError(msg.str());
  }
  const UnknownLayout layout(spec.grid);
  if (w0.size() != layout.size()) {
    throw DimensionError("newton_solve: initial guess has the wrong length");
  }

  const auto start = Clock::now();
  SolveReport report;
  LevelReport level;
  level.nx = spec.grid.num_cells;
  level.nt = spec.grid.num_steps;

  Eigen::VectorXd w = w0;
  Eigen::VectorXd F = assemble_residual(w, spec);
  double norm = max_norm(F);
  if (!std::isfinite(norm)) {
    throw NonConvergenceError("initial residual is not finite", w, norm,
                              report);
  }
  bool use_preconditioner = config.use_preconditioner;

  auto fail = [&](const std::string& why) {
    level.final_residual = norm;
    level.seconds = seconds_since(start);
    report.levels.push_back(level);
    std::ostringstream msg;
    msg << "Newton did not converge on " << level.nx << "x" << level.nt
        << " after " << level.newton_iterations << " iterations ("
        << why << "), residual " << norm;
    throw NonConvergenceError(msg.str(), w, norm, report);
  };

  while (!(config.newton_tolerance > 0.0 && norm <= config.newton_tolerance)) {
    if (level.newton_iterations >= config.max_newton_iterations) {
      fail("iteration limit");
    }
    const SparseMatrix J = assemble_jacobian(w, spec);
    const Eigen::VectorXd rhs = -F;

    std::optional<GmresResult> step;
    if (config.linear_solver == LinearSolver::kDirect) {
      step = direct_solve(J, rhs);
    } else if (use_preconditioner) {
      DecoupledPreconditioner pre(J, layout);
      try {
        step = gmres(
            J, rhs, [&pre](const Eigen::VectorXd& v) { return pre.apply(v); },
            config.gmres_restart, config.gmres_tolerance,
            config.gmres_max_iterations);
      } catch (const PreconditionerError& e) {
        report.notes.push_back(std::string("preconditioner failed (") +
                               e.what() + "), falling back to plain GMRES");
        use_preconditioner = false;
      }
    }
    if (!step) {
      step = gmres(J, rhs, nullptr, config.gmres_restart,
                   config.gmres_tolerance, config.gmres_max_iterations);
    }
    level.gmres_iterations += step->iterations;
    if (!step->converged) {
      std::ostringstream msg;
      msg << "GMRES stopped at relative residual " << step->relative_residual
          << " after " << step->iterations << " iterations (Newton iteration "
          << level.newton_iterations << ")";
      report.notes.push_back(msg.str());
    }
    if (!step->x.allFinite()) {
      throw LinearSolverError("linear solve produced non-finite values");
    }

    ++level.newton_iterations;
    if (!config.line_search) {
      w += step->x;
      F = assemble_residual(w, spec);
      norm = max_norm(F);
      if (!std::isfinite(norm)) fail("non-finite residual");
      continue;
    }
    bool accepted = false;
    // Past 1/8 the step is still a descent direction but crosses a clamp
    // kink; shorter steps stop before it.
    for (double damping = 1.0; damping >= config.min_damping; damping *= 0.5) {
      Eigen::VectorXd trial = w + damping * step->x;
      Eigen::VectorXd F_trial = assemble_residual(trial, spec);
      const double trial_norm = max_norm(F_trial);
      if (std::isfinite(trial_norm) && trial_norm < norm) {
        if (damping < 0.125) {
          std::ostringstream msg;
          msg << "Newton iteration " << level.newton_iterations
              << " accepted damping " << damping;
          report.notes.push_back(msg.str());
        }
        w = std::move(trial);
        F = std::move(F_trial);
        norm = trial_norm;
        accepted = true;
        break;
      }
    }
    if (!accepted) fail("line search could not reduce the residual");
  }

  level.final_residual = norm;
  level.converged = true;
  level.seconds = seconds_since(start);
  report.levels.push_back(level);

  SolutionTriple solution = unpack(w, spec);
  int truncated = 0;
  double most_negative = 0.0;
  for (double& r : solution.density.values()) {
    if (r < 0.0) {
      most_negative = std::min(most_negative, r);
      if (r >= -config.negative_density_threshold) {
        r = 0.0;
        ++truncated;
      }
    }
  }
  if (truncated > 0) {
    std::ostringstream msg;
    msg << "truncated " << truncated << " tiny negative densities to 0";
    report.notes.push_back(msg.str());
  }
  if (most_negative < -config.negative_density_threshold) {
    std::ostringstream msg;
    msg << "density dips to " << most_negative << " at the solution";
    report.notes.push_back(msg.str());
  }
  for (double& u : solution.speed.values()) {
    u = std::clamp(u, 0.0, spec.cost.u_max());
  }
  return SolveResult{std::move(solution), std::move(w), std::move(report)};
}

Eigen::VectorXd interpolate_solution(const SolutionTriple& coarse,
                                     const SpaceTimeGrid& fine, double u_max) {
  const SpaceTimeGrid& cg = coarse.density.grid();
  if (!(fine == cg.refined())) {
    throw ConfigError("interpolate_solution: target is not a 2x refinement");
  }
  SolutionTriple out{resample(coarse.density, fine),
                     resample(coarse.speed, fine),
                     resample(coarse.value, fine)};
  for (double& u : out.speed.values()) u = std::clamp(u, 0.0, u_max);
  return pack(out);
}

std::vector<SpaceTimeGrid> multigrid_levels(const SpaceTimeGrid& target,
                                            int coarsest_nx) {
  std::vector<SpaceTimeGrid> levels{target};
  SpaceTimeGrid g = target;
  while (g.num_cells > coarsest_nx) {
    if (g.num_cells % 2 != 0 || g.num_steps % 2 != 0) break;
    g = g.coarsened();
    levels.push_back(g);
  }
  if (g.num_cells != coarsest_nx) {
    std::ostringstream msg;
    msg << "coarsest Nx " << coarsest_nx << " is not reachable from "
        << target.num_cells << "x" << target.num_steps << " by halving";
    throw ConfigError(msg.str());
  }
  std::reverse(levels.begin(), levels.end());
  return levels;
}

SolveResult multigrid_solve(const ProblemSpec& spec,
                            const SolverConfig& config,
                            std::vector<SolutionTriple>* level_solutions) {
  config.validate();
  const std::vector<SpaceTimeGrid> grids =
      multigrid_levels(spec.grid, config.coarsest_nx);

  SolveReport report;
  if (level_solutions) level_solutions->clear();
  std::optional<SolveResult> previous;
  for (std::size_t k = 0; k < grids.size(); ++k) {
    const bool finest = k + 1 == grids.size();
    const ProblemSpec level_spec = finest ? spec : spec.on_grid(grids[k]);
    const Eigen::VectorXd guess =
        previous ? interpolate_solution(previous->solution, grids[k],
                                        spec.cost.u_max())
                 : cold_start(level_spec);
    try {
      SolveResult result = newton_solve(level_spec, guess, config);
      report.levels.push_back(result.report.levels.front());
      for (auto& note : result.report.notes) {
        report.notes.push_back("level " + std::to_string(k) + ": " + note);
      }
      if (level_solutions) level_solutions->push_back(result.solution);
      previous = std::move(result);
    } catch (const NonConvergenceError& e) {
      for (const auto& l : e.report().levels) report.levels.push_back(l);
      for (const auto& note : e.report().notes) {
        report.notes.push_back("level " + std::to_string(k) + ": " + note);
      }
      std::ostringstream msg;
      msg << "multigrid level " << k << " (" << grids[k].num_cells << "x"
          << grids[k].num_steps << "): " << e.what();
      throw NonConvergenceError(msg.str(), e.best_iterate(),
                                e.best_residual(), report);
    }
  }
  previous->report = std::move(report);
  return std::move(*previous);
}

}  // namespace avmfg
