#include <gtest/gtest.h>

#include <cmath>

#include "cacc/errors.hpp"
#include "cacc/random.hpp"
#include "cacc/vehicle.hpp"

using namespace cacc;
using namespace cacc::vehicle;

namespace {

// Hand arithmetic with the reference parameters.
constexpr double kRolling = 1718.4 * 9.8 * 0.011;            // 185.2435 N
constexpr double kAeroAt15 = 0.5 * 1.206 * 2.455 * 0.32 * 225.0;  // 106.59 N

}  // namespace

TEST(Kinematics, EquilibriumIsFixed) {
  const auto s = step_kinematics({20.0, 15.0, 0.0}, 15.0, 0.0, 0.0, 0.1);
  EXPECT_DOUBLE_EQ(s.spacing, 20.0);
  EXPECT_DOUBLE_EQ(s.velocity, 15.0);
  EXPECT_DOUBLE_EQ(s.accel, 0.0);
}

TEST(Kinematics, SlowerFollowerOpensGap) {
  const auto s = step_kinematics({20.0, 14.0, 0.0}, 15.0, 0.0, 0.0, 0.1);
  EXPECT_NEAR(s.spacing, 20.1, 1e-12);
  EXPECT_DOUBLE_EQ(s.velocity, 14.0);
}

TEST(Kinematics, CommandIsClipped) {
  const auto s = step_kinematics({20.0, 10.0, 0.0}, 10.0, 0.0, 3.5, 0.1);
  EXPECT_DOUBLE_EQ(s.accel, 2.5);
  EXPECT_NEAR(s.velocity, 10.25, 1e-12);
}

TEST(Kinematics, NonFiniteInputRejected) {
  EXPECT_THROW(step_kinematics({20.0, NAN, 0.0}, 15.0, 0.0, 0.0, 0.1), DomainError);
  EXPECT_THROW(step_kinematics({20.0, 15.0, 0.0}, 15.0, 0.0, INFINITY, 0.1), DomainError);
  EXPECT_THROW(step_kinematics({20.0, 15.0, 0.0}, 15.0, 0.0, 0.0, 0.0), DomainError);
}

TEST(Kinematics, ConstraintBoxUnderRandomCommands) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    VehicleState s{20.0, rng.uniform(0.0, 30.0), 0.0};
    double v_prev = rng.uniform(0.0, 30.0);
    for (int k = 0; k < 400; ++k) {
      const double u_prev = rng.uniform(-2.5, 2.5);
      s = step_kinematics(s, v_prev, u_prev, rng.uniform(-10.0, 10.0), 0.1);
      v_prev = advance_velocity(v_prev, u_prev, 0.1);
      ASSERT_GE(s.velocity, 0.0);
      ASSERT_LE(s.velocity, 30.0);
      ASSERT_GE(s.accel, -2.5);
      ASSERT_LE(s.accel, 2.5);
    }
  }
}

TEST(Kinematics, ExactIntegrationAwayFromBounds) {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const double d = rng.uniform(5.0, 40.0);
    const double v = rng.uniform(5.0, 25.0);
    const double vp = rng.uniform(5.0, 25.0);
    const double up = rng.uniform(-2.5, 2.5);
    const double u = rng.uniform(-2.5, 2.5);
    const double dt = 0.1;
    const auto s = step_kinematics({d, v, 0.0}, vp, up, u, dt);
    const double expected = d + (vp - v) * dt + 0.5 * (up - u) * dt * dt;
    EXPECT_NEAR(s.spacing, expected, 1e-12);
    EXPECT_NEAR(s.velocity, v + u * dt, 1e-12);
  }
}

TEST(Kinematics, SaturatedVelocityHeldAtBound) {
  // Braking from 0.1 m/s at -2.5 stops after 0.04 s, then stays put.
  EXPECT_NEAR(displacement(0.1, -2.5, 0.1), 0.1 * 0.04 - 0.5 * 2.5 * 0.04 * 0.04, 1e-15);
  EXPECT_DOUBLE_EQ(advance_velocity(0.1, -2.5, 0.1), 0.0);
  // Accelerating from 29.9 reaches 30 after 0.04 s, then cruises.
  EXPECT_NEAR(displacement(29.9, 2.5, 0.1), 29.9 * 0.04 + 0.5 * 2.5 * 0.04 * 0.04 + 30.0 * 0.06,
              1e-12);
  EXPECT_DOUBLE_EQ(advance_velocity(29.9, 2.5, 0.1), 30.0);
}

TEST(Force, HandArithmetic) {
  const VehicleParams p;
  EXPECT_NEAR(driving_force(p, 0.0, 0.0), kRolling, 1e-9);
  EXPECT_NEAR(driving_force(p, 0.0, 0.0), 185.24, 0.01);
  EXPECT_NEAR(driving_force(p, 15.0, 0.0), kRolling + kAeroAt15, 1e-9);
  EXPECT_NEAR(driving_force(p, 15.0, 0.0), 291.83, 0.05);
  EXPECT_NEAR(driving_force(p, 15.0, -1.0), 291.83 - 1718.4, 0.05);
}

TEST(Force, MonotoneInAccelAndVelocity) {
  const VehicleParams p;
  for (double v = 0.0; v <= 30.0; v += 1.5) {
    for (double u = -2.5; u < 2.5; u += 0.25) {
      EXPECT_LT(driving_force(p, v, u), driving_force(p, v, u + 0.25));
      EXPECT_LT(driving_force(p, v, u), driving_force(p, v + 1.5, u));
    }
  }
}

TEST(Power, HandArithmetic) {
  const VehicleParams p;
  EXPECT_NEAR(electric_power(p, 15.0, 0.0), (kRolling + kAeroAt15) * 15.0 / 0.9 / 1000.0, 1e-12);
  EXPECT_NEAR(electric_power(p, 15.0, 0.0), 4.864, 0.005);
  EXPECT_NEAR(electric_power(p, 15.0, 1.0), 33.50, 0.01);
  EXPECT_NEAR(electric_power(p, 15.0, -1.0), -19.26, 0.01);
  EXPECT_DOUBLE_EQ(electric_power(p, 0.0, 0.0), 0.0);
}

TEST(Power, SignConvention) {
  const VehicleParams p;
  for (double v = 0.0; v <= 30.0; v += 0.5) {
    EXPECT_GE(electric_power(p, v, 0.0), 0.0);
    for (double u = -2.5; u <= 2.5; u += 0.1) {
      const double wheel = driving_force(p, v, u) * v / 1000.0;
      const double pe = electric_power(p, v, u);
      if (wheel >= 0.0) {
        EXPECT_GE(pe, wheel);
      } else {
        EXPECT_LE(std::abs(pe), std::abs(wheel));
      }
    }
  }
}

TEST(EnergyFit, DefaultGridQuality) {
  const VehicleParams p;
  const auto fit = fit_energy_poly(p);
  EXPECT_LE(fit.rmse_kw, 0.5);
  EXPECT_LE(holdout_rmse(p, fit.poly), 2.0 * fit.rmse_kw);
  EXPECT_NEAR(eval_energy_poly(fit.poly, 0.0, 0.0), 0.0, 0.2);
  EXPECT_NEAR(eval_energy_poly(fit.poly, 15.0, 0.0), 4.864, 0.5);
}

TEST(EnergyFit, HoldoutWithinTwiceFitOnOtherGrids) {
  const VehicleParams p;
  for (GridSpec g : {GridSpec{11, 11}, GridSpec{31, 21}, GridSpec{101, 81}}) {
    const auto fit = fit_energy_poly(p, g);
    EXPECT_LE(holdout_rmse(p, fit.poly, g), 2.0 * fit.rmse_kw) << g.velocity_points;
  }
}

TEST(EnergyFit, DegenerateGridThrows) {
  const VehicleParams p;
  EXPECT_THROW(fit_energy_poly(p, {1, 51}), FitError);
  EXPECT_THROW(fit_energy_poly(p, {61, 1}), FitError);
  EXPECT_THROW(fit_energy_poly(p, {2, 2}), FitError);
}

TEST(EnergyPoly, TrivialCoefficients) {
  EnergyPoly zero;
  EXPECT_EQ(eval_energy_poly(zero, 12.0, -1.0), 0.0);
  EnergyPoly one;
  one.coeffs[0][0] = 1.0;
  for (double v : {0.0, 7.0, 30.0}) {
    for (double u : {-2.5, 0.0, 1.3}) EXPECT_DOUBLE_EQ(eval_energy_poly(one, v, u), 1.0);
  }
}

TEST(EnergyPoly, MatchesDirectSum) {
  Rng rng(3);
  EnergyPoly p;
  for (auto& row : p.coeffs) {
    for (double& c : row) c = rng.uniform(-1.0, 1.0);
  }
  for (int i = 0; i < 50; ++i) {
    const double v = rng.uniform(0.0, 30.0);
    const double u = rng.uniform(-2.5, 2.5);
    double direct = 0.0;
    for (int k = 0; k < 5; ++k) {
      for (int j = 0; j < 5; ++j) direct += p.coeffs[k][j] * std::pow(v, k) * std::pow(u, j);
    }
    EXPECT_NEAR(eval_energy_poly(p, v, u), direct, 1e-9 * std::max(1.0, std::abs(direct)));
  }
}

TEST(VehicleParams, Validation) {
  VehicleParams p;
  EXPECT_NO_THROW(p.validate());
  p.motor_efficiency = 1.2;
  EXPECT_THROW(p.validate(), ConfigError);
  p = {};
  p.mass = 0.0;
  EXPECT_THROW(p.validate(), ConfigError);
}
