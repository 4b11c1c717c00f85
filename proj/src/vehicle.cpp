#include "cacc/vehicle.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cacc/errors.hpp"

namespace cacc::vehicle {

namespace {

void require_positive(double value, const char* field) {
  if (!(value > 0.0) || !std::isfinite(value)) {
    throw ConfigError(std::string("vehicle.") + field + " must be finite and > 0");
  }
}

bool all_finite(std::initializer_list<double> values) {
  return std::all_of(values.begin(), values.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

void VehicleParams::validate() const {
  require_positive(mass, "mass");
  require_positive(rolling_coeff, "rolling_coeff");
  require_positive(air_density, "air_density");
  require_positive(drag_coeff, "drag_coeff");
  require_positive(frontal_area, "frontal_area");
  require_positive(gravity, "gravity");
  require_positive(wheel_radius, "wheel_radius");
  require_positive(gear_ratio, "gear_ratio");
  require_positive(motor_efficiency, "motor_efficiency");
  if (motor_efficiency > 1.0) throw ConfigError("vehicle.motor_efficiency must be <= 1");
}

double clip_accel(double u) { return std::clamp(u, -kMaxAccel, kMaxAccel); }

double advance_velocity(double v, double u, double dt) {
  return std::clamp(v + u * dt, kMinVelocity, kMaxVelocity);
}

double displacement(double v, double u, double dt) {
  // Time until the velocity reaches the bound it is heading for; past that
  // point the vehicle continues at the bound.
  double t_sat = dt;
  double v_bound = v;
  if (u < 0.0 && v + u * dt < kMinVelocity) {
    t_sat = std::max(0.0, (kMinVelocity - v) / u);
    v_bound = kMinVelocity;
  } else if (u > 0.0 && v + u * dt > kMaxVelocity) {
    t_sat = std::max(0.0, (kMaxVelocity - v) / u);
    v_bound = kMaxVelocity;
  }
  if (t_sat >= dt) return v * dt + 0.5 * u * dt * dt;
  return v * t_sat + 0.5 * u * t_sat * t_sat + v_bound * (dt - t_sat);
}

VehicleState step_kinematics(const VehicleState& state, double v_prev, double u_prev,
                             double u_cmd, double dt) {
  if (!all_finite({state.spacing, state.velocity, v_prev, u_prev, u_cmd, dt})) {
    throw DomainError("step_kinematics: non-finite input");
  }
  if (!(dt > 0.0)) throw DomainError("step_kinematics: dt must be > 0");

  const double u = clip_accel(u_cmd);
  VehicleState next;
  next.accel = u;
  next.velocity = advance_velocity(state.velocity, u, dt);
  next.spacing =
      state.spacing + displacement(v_prev, u_prev, dt) - displacement(state.velocity, u, dt);
  return next;
}

double driving_force(const VehicleParams& p, double v, double u) {
  const double inertial = p.mass * u;
  const double rolling = p.mass * p.gravity * p.rolling_coeff;
  const double aero = 0.5 * p.air_density * p.frontal_area * p.drag_coeff * v * v;
  return inertial + rolling + aero;
}

double electric_power(const VehicleParams& p, double v, double u) {
  // Torque times motor speed equals force times wheel speed for any gear
  // ratio, so the gear ratio drops out.
  const double wheel_w = driving_force(p, v, u) * v;
  const double electric_w =
      wheel_w >= 0.0 ? wheel_w / p.motor_efficiency : wheel_w * p.motor_efficiency;
  return electric_w / 1000.0;
}

namespace {

constexpr double kVelocityScale = kMaxVelocity;
constexpr double kAccelScale = kMaxAccel;
constexpr std::size_t kTerms = EnergyPoly::kOrder * EnergyPoly::kOrder;

std::vector<double> axis(std::size_t n, double lo, double hi, bool offset) {
  std::vector<double> out;
  if (n < 2) {
    out.push_back(lo);
    return out;
  }
  const double step = (hi - lo) / static_cast<double>(n - 1);
  const std::size_t count = offset ? n - 1 : n;
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(lo + step * (static_cast<double>(i) + (offset ? 0.5 : 0.0)));
  }
  return out;
}

double rmse_on(const VehicleParams& params, const EnergyPoly& poly, const std::vector<double>& vs,
               const std::vector<double>& us) {
  double sq = 0.0;
  for (double v : vs) {
    for (double u : us) {
      const double r = eval_energy_poly(poly, v, u) - electric_power(params, v, u);
      sq += r * r;
    }
  }
  return std::sqrt(sq / static_cast<double>(vs.size() * us.size()));
}

}  // namespace

EnergyFit fit_energy_poly(const VehicleParams& params, const GridSpec& grid) {
  params.validate();
  const auto vs = axis(grid.velocity_points, 0.0, kMaxVelocity, false);
  const auto us = axis(grid.accel_points, -kMaxAccel, kMaxAccel, false);
  const std::size_t rows = vs.size() * us.size();
  if (rows < kTerms) {
    throw FitError("fit_energy_poly: grid has " + std::to_string(rows) +
                   " points, need at least 25");
  }

  // Fit in scaled coordinates for conditioning, then map coefficients back.
  Eigen::MatrixXd design(rows, kTerms);
  Eigen::VectorXd target(rows);
  std::size_t r = 0;
  for (double v : vs) {
    for (double u : us) {
      const double vn = v / kVelocityScale;
      const double un = u / kAccelScale;
      double vk = 1.0;
      for (std::size_t k = 0; k < EnergyPoly::kOrder; ++k) {
        double uj = 1.0;
        for (std::size_t j = 0; j < EnergyPoly::kOrder; ++j) {
          design(r, k * EnergyPoly::kOrder + j) = vk * uj;
          uj *= un;
        }
        vk *= vn;
      }
      target(r) = electric_power(params, v, u);
      ++r;
    }
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() < static_cast<Eigen::Index>(kTerms)) {
    throw FitError("fit_energy_poly: design matrix is rank deficient (rank " +
                   std::to_string(qr.rank()) + " < 25); grid needs >= 5 distinct values per axis");
  }
  const Eigen::VectorXd scaled = qr.solve(target);

  EnergyFit fit;
  for (std::size_t k = 0; k < EnergyPoly::kOrder; ++k) {
    for (std::size_t j = 0; j < EnergyPoly::kOrder; ++j) {
      fit.poly.coeffs[k][j] = scaled(k * EnergyPoly::kOrder + j) /
                              (std::pow(kVelocityScale, k) * std::pow(kAccelScale, j));
    }
  }
  fit.rmse_kw = rmse_on(params, fit.poly, vs, us);
  return fit;
}

double holdout_rmse(const VehicleParams& params, const EnergyPoly& poly, const GridSpec& grid) {
  const auto vs = axis(grid.velocity_points, 0.0, kMaxVelocity, true);
  const auto us = axis(grid.accel_points, -kMaxAccel, kMaxAccel, true);
  return rmse_on(params, poly, vs, us);
}

double eval_energy_poly(const EnergyPoly& poly, double v, double u) {
  double result = 0.0;
  for (std::size_t k = EnergyPoly::kOrder; k-- > 0;) {
    double row = 0.0;
    for (std::size_t j = EnergyPoly::kOrder; j-- > 0;) row = row * u + poly.coeffs[k][j];
    result = result * v + row;
  }
  return result;
}

}  // namespace cacc::vehicle
