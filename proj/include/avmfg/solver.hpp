#pragma once

#include <Eigen/Core>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "avmfg/discretization.hpp"
#include "avmfg/errors.hpp"
#include "avmfg/grid.hpp"

namespace avmfg {

enum class LinearSolver {
  kGmres,   // restarted GMRES, optionally with the decoupled preconditioner
  kDirect,  // sparse LU of the Newton matrix
};

struct SolverConfig {
  LinearSolver linear_solver = LinearSolver::kGmres;
  double newton_tolerance = 1e-9;  // on max-norm of F
  int max_newton_iterations = 50;
  double gmres_tolerance = 1e-8;  // relative to the right-hand side
  int gmres_restart = 60;
  int gmres_max_iterations = 2000;
  int coarsest_nx = 15;
  // Backtracking on ||F||_inf with factors 1, 1/2, 1/4, 1/8, then further
  // halvings down to min_damping (noted in the report). Off means the full
  // Newton step is always taken.
  bool line_search = true;
  double min_damping = 1.0 / 1024.0;
  bool use_preconditioner = true;
  double negative_density_threshold = 1e-10;

  // Throws ConfigError.
  void validate() const;
};

struct LevelReport {
  int nx = 0;
  int nt = 0;
  int newton_iterations = 0;
  long gmres_iterations = 0;
  double final_residual = 0.0;
  double seconds = 0.0;
  bool converged = false;
};

struct SolveReport {
  std::vector<LevelReport> levels;
  std::vector<std::string> notes;

  long total_gmres_iterations() const;
  double final_residual() const;
  // Header "level,newton_iters,gmres_iters,final_residual,seconds".
  void write_csv(std::ostream& out) const;
};

struct SolveResult {
  SolutionTriple solution;
  Eigen::VectorXd unknowns;
  SolveReport report;
};

// Carries the iterate with the smallest residual seen.
class NonConvergenceError : public Error {
 public:
  NonConvergenceError(const std::string& what, Eigen::VectorXd best_iterate,
                      double best_residual, SolveReport report)
      : Error(what),
        best_iterate_(std::move(best_iterate)),
        best_residual_(best_residual),
        report_(std::move(report)) {}

  const Eigen::VectorXd& best_iterate() const { return best_iterate_; }
  double best_residual() const { return best_residual_; }
  const SolveReport& report() const { return report_; }

 private:
  Eigen::VectorXd best_iterate_;
  double best_residual_;
  SolveReport report_;
};

// Thrown when a pivot of the decoupled forward/backward system vanishes.
class PreconditionerError : public LinearSolverError {
 public:
  using LinearSolverError::LinearSolverError;
};

// J~ drops the density columns of the HJB and speed rows and the speed/value
// columns of the continuity rows. What remains is a forward recursion in time
// for rho and a backward recursion for (u, V), each with a diagonal pivot.
// apply() returns J~^{-1} r by one forward and one backward sweep.
class DecoupledPreconditioner {
 public:
  DecoupledPreconditioner(const SparseMatrix& jacobian,
                          const UnknownLayout& layout);
  Eigen::VectorXd apply(const Eigen::VectorXd& r) const;

 private:
  const SparseMatrix& J_;
  UnknownLayout layout_;
};

Eigen::VectorXd apply_preconditioner(const SparseMatrix& jacobian,
                                     const UnknownLayout& layout,
                                     const Eigen::VectorXd& r);

// The part of J that the preconditioner keeps.
SparseMatrix decoupled_part(const SparseMatrix& jacobian,
                            const UnknownLayout& layout);

using LinearOperator = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct GmresResult {
  Eigen::VectorXd x;
  int iterations = 0;
  double relative_residual = 0.0;
  bool converged = false;
};

// Restarted GMRES with optional right preconditioning, x0 = 0.
GmresResult gmres(const SparseMatrix& A, const Eigen::VectorXd& b,
                  const LinearOperator& preconditioner, int restart,
                  double tolerance, int max_iterations);

// rho = mean of the initial cell averages, u = U(mean), V = 0.
Eigen::VectorXd cold_start(const ProblemSpec& spec);

// Newton on F(w) = 0 with GMRES inner solves. Throws NonConvergenceError,
// LinearSolverError or ConfigError (CFL).
SolveResult newton_solve(const ProblemSpec& spec, const Eigen::VectorXd& w0,
                         const SolverConfig& config);

// Bilinear space-time interpolation of a solution onto the 2x refined grid;
// speeds are clamped to [0, u_max]. Throws ConfigError unless `fine` is
// exactly coarse.refined().
Eigen::VectorXd interpolate_solution(const SolutionTriple& coarse,
                                     const SpaceTimeGrid& fine, double u_max);

// Grids from the coarsest level up to spec.grid, halving Nx and Nt.
std::vector<SpaceTimeGrid> multigrid_levels(const SpaceTimeGrid& target,
                                            int coarsest_nx);

// Nested iteration: cold start on the coarsest grid, then each solution is
// interpolated to the next grid as the Newton guess. When `level_solutions`
// is given it receives the converged solution of every level, coarsest first.
SolveResult multigrid_solve(
    const ProblemSpec& spec, const SolverConfig& config,
    std::vector<SolutionTriple>* level_solutions = nullptr);

}  // namespace avmfg
