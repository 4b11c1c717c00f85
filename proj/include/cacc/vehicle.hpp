#pragma once

#include <array>
#include <cstddef>

namespace cacc::vehicle {

inline constexpr double kMinSpacing = 1.0;    // m
inline constexpr double kMinVelocity = 0.0;   // m/s
inline constexpr double kMaxVelocity = 30.0;  // m/s
inline constexpr double kMaxAccel = 2.5;      // m/s^2, symmetric bound

/// Physical constants of one (electric) vehicle. Defaults describe the
/// reference passenger car used throughout the project.
struct VehicleParams {
  double mass = 1718.4;           // kg
  double rolling_coeff = 0.011;   // -
  double air_density = 1.206;     // kg/m^3
  double drag_coeff = 0.32;       // -
  double frontal_area = 2.455;    // m^2
  double gravity = 9.8;           // m/s^2
  double wheel_radius = 0.337;    // m
  double gear_ratio = 3.91 * 4.14;
  double motor_efficiency = 0.9;  // (0, 1]

  /// Throws ConfigError naming the first invalid field.
  void validate() const;
};

/// Longitudinal state of one vehicle. `spacing` is the gap to the
/// preceding vehicle.
struct VehicleState {
  double spacing = 0.0;   // m
  double velocity = 0.0;  // m/s
  double accel = 0.0;     // m/s^2, the acceleration applied during the last step
};

/// Coefficients p[k][j] of P(v, u) = sum_k sum_j p[k][j] v^k u^j, in kW.
struct EnergyPoly {
  static constexpr std::size_t kOrder = 5;
  std::array<std::array<double, kOrder>, kOrder> coeffs{};
};

double clip_accel(double u);

/// Distance covered in `dt` starting at velocity `v` under constant
/// acceleration `u`, with velocity saturating at [0, 30] m/s.
double displacement(double v, double u, double dt);

/// Velocity after `dt` under constant `u`, saturated at [0, 30] m/s.
double advance_velocity(double v, double u, double dt);

/// Advances one vehicle by `dt`. The command is clipped to the
/// acceleration box; spacing integrates the preceding vehicle's motion
/// (`v_prev`, `u_prev`) minus this vehicle's, both under constant
/// acceleration with velocity saturation. Throws DomainError on
/// non-finite input or dt <= 0.
VehicleState step_kinematics(const VehicleState& state, double v_prev, double u_prev,
                             double u_cmd, double dt);

/// Tractive force at the wheel, N. Level road.
double driving_force(const VehicleParams& params, double v, double u);

/// Electrical power drawn (positive) or recovered (negative), kW.
double electric_power(const VehicleParams& params, double v, double u);

struct GridSpec {
  std::size_t velocity_points = 61;
  std::size_t accel_points = 51;
};

struct EnergyFit {
  EnergyPoly poly;
  double rmse_kw = 0.0;
};

/// Least-squares fit of the 25 monomials v^k u^j against electric_power on
/// a uniform grid over v in [0, 30], u in [-2.5, 2.5]. Throws FitError if
/// the grid cannot determine all coefficients.
EnergyFit fit_energy_poly(const VehicleParams& params, const GridSpec& grid = {});

/// RMSE of `poly` against electric_power on the grid offset by half a cell
/// in both axes from `grid` (held-out points).
double holdout_rmse(const VehicleParams& params, const EnergyPoly& poly, const GridSpec& grid = {});

double eval_energy_poly(const EnergyPoly& poly, double v, double u);

}  // namespace cacc::vehicle
