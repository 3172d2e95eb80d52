#include "avmfg/cost_model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "avmfg/errors.hpp"

namespace avmfg {

EquilibriumSpeed EquilibriumSpeed::greenshields(double u_max, double rho_jam) {
  return EquilibriumSpeed{
      "greenshields",
      [u_max, rho_jam](double rho) { return u_max * (1.0 - rho / rho_jam); },
      [u_max, rho_jam](double) { return -u_max / rho_jam; }};
}

CostModel::CostModel(CostKind kind, double u_max, double rho_jam)
    : kind_(kind), u_max_(u_max), rho_jam_(rho_jam) {
  if (!(u_max > 0.0) || !std::isfinite(u_max)) {
    throw ConfigError("u_max must be positive");
  }
  if (!(rho_jam > 0.0) || !std::isfinite(rho_jam)) {
    throw ConfigError("rho_jam must be positive");
  }
  curvature_ = kind == CostKind::kLwrTracking ? 1.0 : 1.0 / (u_max * u_max);
}

CostModel CostModel::lwr_tracking(double u_max, double rho_jam) {
  return lwr_tracking(u_max, rho_jam,
                      EquilibriumSpeed::greenshields(u_max, rho_jam));
}

CostModel CostModel::lwr_tracking(double u_max, double rho_jam,
                                  EquilibriumSpeed speed) {
  if (!speed.value || !speed.derivative) {
    throw ConfigError("equilibrium speed needs value and derivative");
  }
  CostModel m(CostKind::kLwrTracking, u_max, rho_jam);
  m.tracked_ = std::move(speed);
  return m;
}

CostModel CostModel::separable(double u_max, double rho_jam) {
  return CostModel(CostKind::kSeparable, u_max, rho_jam);
}

CostModel CostModel::nonseparable(double u_max, double rho_jam) {
  return CostModel(CostKind::kNonSeparable, u_max, rho_jam);
}

CostModel CostModel::from_key(std::string_view key, double u_max,
                              double rho_jam) {
  if (key == "lwr") return lwr_tracking(u_max, rho_jam);
  if (key == "separable") return separable(u_max, rho_jam);
  if (key == "nonseparable") return nonseparable(u_max, rho_jam);
  std::ostringstream msg;
  msg << "unknown cost model '" << key
      << "' (expected lwr, separable or nonseparable)";
  throw ConfigError(msg.str());
}

std::string_view CostModel::key() const {
  switch (kind_) {
    case CostKind::kLwrTracking:
      return "lwr";
    case CostKind::kSeparable:
      return "separable";
    case CostKind::kNonSeparable:
      return "nonseparable";
  }
  return "";
}

double CostModel::drive(double rho) const {
  switch (kind_) {
    case CostKind::kLwrTracking:
      return tracked_.value(rho);
    case CostKind::kSeparable:
      return 1.0 / u_max_;
    case CostKind::kNonSeparable:
      return (1.0 - rho / rho_jam_) / u_max_;
  }
  return 0.0;
}

double CostModel::drive_drho(double rho) const {
  switch (kind_) {
    case CostKind::kLwrTracking:
      return tracked_.derivative(rho);
    case CostKind::kSeparable:
      return 0.0;
    case CostKind::kNonSeparable:
      return -1.0 / (u_max_ * rho_jam_);
  }
  return 0.0;
}

double CostModel::congestion(double rho) const {
  switch (kind_) {
    case CostKind::kLwrTracking: {
      const double u = tracked_.value(rho);
      return 0.5 * u * u;
    }
    case CostKind::kSeparable:
      return rho / rho_jam_;
    case CostKind::kNonSeparable:
      return 0.0;
  }
  return 0.0;
}

double CostModel::congestion_drho(double rho) const {
  switch (kind_) {
    case CostKind::kLwrTracking:
      return tracked_.value(rho) * tracked_.derivative(rho);
    case CostKind::kSeparable:
      return 1.0 / rho_jam_;
    case CostKind::kNonSeparable:
      return 0.0;
  }
  return 0.0;
}

double CostModel::objective(double a, double p, double rho) const {
  if (kind_ == CostKind::kLwrTracking) {
    // Written as a square so perfect tracking gives exactly zero.
    const double gap = tracked_.value(rho) - a;
    return 0.5 * gap * gap + a * p;
  }
  return 0.5 * curvature_ * a * a - drive(rho) * a + congestion(rho) + a * p;
}

double CostModel::running_cost(double u, double rho) const {
  const double slack = 1e-12 * u_max_;
  if (!(u >= -slack && u <= u_max_ + slack)) {
    std::ostringstream msg;
    msg << "speed " << u << " outside [0, " << u_max_ << "]";
    throw ConstraintError(msg.str());
  }
  return running_cost_unchecked(u, rho);
}

double CostModel::running_cost_unchecked(double u, double rho) const {
  return objective(u, 0.0, rho);
}

double CostModel::running_cost_du(double u, double rho) const {
  return curvature_ * u - drive(rho);
}

double CostModel::running_cost_drho(double u, double rho) const {
  return -drive_drho(rho) * u + congestion_drho(rho);
}

LegendrePoint CostModel::legendre(double p, double rho) const {
  LegendrePoint out;
  const double raw = (drive(rho) - p) / curvature_;
  const bool free = raw > 0.0 && raw < u_max_;
  out.clamped = !free;
  out.speed = free ? raw : (raw <= 0.0 ? 0.0 : u_max_);
  out.value = objective(out.speed, p, rho);
  // Envelope theorem: d/d rho of the minimum is the partial of the objective.
  out.value_drho = running_cost_drho(out.speed, rho);
  if (free) {
    out.speed_dp = -1.0 / curvature_;
    out.speed_drho = drive_drho(rho) / curvature_;
  }
  return out;
}

double CostModel::hamiltonian(double p, double rho) const {
  return legendre(p, rho).value;
}

double CostModel::optimal_speed(double p, double rho) const {
  return legendre(p, rho).speed;
}

double CostModel::equilibrium_speed(double rho) const {
  return optimal_speed(0.0, rho);
}

IntervalMinimum CostModel::minimize_on(double p, double rho, double lo,
                                       double hi) const {
  const double raw = (drive(rho) - p) / curvature_;
  const double a = std::clamp(raw, lo, hi);
  return {objective(a, p, rho), a};
}

CalibrationReport check_calibration(const CostModel& model, int samples,
                                    double tolerance) {
  CalibrationReport report;
  report.cross_derivative_nonnegative = true;
  // f_u(u, rho) = c u - b(rho), so f_{u rho} = -b'(rho), evaluated along the
  // equilibrium curve by finite differences of f_u.
  const double h = 1e-6 * model.rho_jam();
  for (int k = 0; k < samples; ++k) {
    const double rho = model.rho_jam() * k / std::max(1, samples - 1);
    const double u = model.equilibrium_speed(rho);
    const double cross = (model.running_cost_du(u, rho + h) -
                          model.running_cost_du(u, rho - h)) /
                         (2.0 * h);
    if (cross < -tolerance) report.cross_derivative_nonnegative = false;
  }
  report.free_flow_at_zero_density =
      std::abs(model.running_cost_du(model.u_max(), 0.0)) <= tolerance;
  report.stopped_at_jam_density =
      std::abs(model.running_cost_du(0.0, model.rho_jam())) <= tolerance;
  return report;
}

}  // namespace avmfg
