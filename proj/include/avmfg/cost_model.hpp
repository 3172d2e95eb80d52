#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <utility>

namespace avmfg {

enum class CostKind { kLwrTracking, kSeparable, kNonSeparable };

// Equilibrium speed-density relation U(rho) used by the tracking cost and the
// reference LWR solver.
struct EquilibriumSpeed {
  std::string name;
  std::function<double(double)> value;
  std::function<double(double)> derivative;

  // U(rho) = u_max (1 - rho / rho_jam)
  static EquilibriumSpeed greenshields(double u_max, double rho_jam);
};

// Constrained minimization of f(a, rho) + a p over a in [0, u_max] together
// with the derivatives needed for Newton. Derivatives of the minimizer are
// one-sided: zero whenever the minimizer sits on (or past) a bound.
struct LegendrePoint {
  double value = 0.0;       // f*(p, rho)
  double speed = 0.0;       // f*_p(p, rho), the minimizer
  double value_drho = 0.0;  // d f* / d rho
  double speed_dp = 0.0;    // d f*_p / d p
  double speed_drho = 0.0;  // d f*_p / d rho
  bool clamped = false;
};

struct IntervalMinimum {
  double value = 0.0;
  double argmin = 0.0;
};

// Running cost f(u, rho). All three models share the quadratic form
//   f(a, rho) = 1/2 c a^2 - b(rho) a + e(rho),
// so the Legendre transform has a closed form with clamping.
//
//   lwr          f = 1/2 (U(rho) - u)^2
//   separable    f = 1/2 (u/u_max)^2 - u/u_max + rho/rho_jam
//   nonseparable f = 1/2 (u/u_max)^2 - u/u_max + u rho / (u_max rho_jam)
//
// Note nonseparable = (U(rho) - u)^2 / (2 u_max^2) - 1/2 (1 - rho/rho_jam)^2
// with U the Greenshields speed.
class CostModel {
 public:
  static CostModel lwr_tracking(double u_max, double rho_jam);
  static CostModel lwr_tracking(double u_max, double rho_jam,
                                EquilibriumSpeed speed);
  static CostModel separable(double u_max, double rho_jam);
  static CostModel nonseparable(double u_max, double rho_jam);
  // Keys: "lwr", "separable", "nonseparable". Throws ConfigError.
  static CostModel from_key(std::string_view key, double u_max,
                            double rho_jam);

  CostKind kind() const { return kind_; }
  std::string_view key() const;
  double u_max() const { return u_max_; }
  double rho_jam() const { return rho_jam_; }
  // Only set for the tracking model.
  const EquilibriumSpeed& tracked_speed() const { return tracked_; }

  // Throws ConstraintError when u is outside [0, u_max].
  double running_cost(double u, double rho) const;
  double running_cost_unchecked(double u, double rho) const;
  double running_cost_du(double u, double rho) const;
  double running_cost_drho(double u, double rho) const;

  double hamiltonian(double p, double rho) const;
  double optimal_speed(double p, double rho) const;
  // U(rho) = f*_p(0, rho), the myopic choice.
  double equilibrium_speed(double rho) const;
  LegendrePoint legendre(double p, double rho) const;

  // min over a in [lo, hi] of f(a, rho) + a p, for 0 <= lo <= hi <= u_max.
  IntervalMinimum minimize_on(double p, double rho, double lo,
                              double hi) const;

 private:
  CostModel(CostKind kind, double u_max, double rho_jam);

  double drive(double rho) const;
  double drive_drho(double rho) const;
  double congestion(double rho) const;
  double congestion_drho(double rho) const;
  double objective(double a, double p, double rho) const;

  CostKind kind_;
  double u_max_;
  double rho_jam_;
  double curvature_;
  EquilibriumSpeed tracked_;
};

// Diagnostic form of the calibration conditions relating f to a
// well-behaved equilibrium speed: f_{u rho}(U(rho), rho) >= 0,
// f_u(u_max, 0) = 0 and f_u(0, rho_jam) = 0. Not used by any solver.
struct CalibrationReport {
  bool cross_derivative_nonnegative = false;
  bool free_flow_at_zero_density = false;
  bool stopped_at_jam_density = false;
};
CalibrationReport check_calibration(const CostModel& model, int samples = 101,
                                    double tolerance = 1e-9);

}  // namespace avmfg
