#pragma once

namespace cacc::ovm {

/// Optimal velocity model parameters. alpha weighs the gap to the
/// spacing-dependent target velocity, beta the velocity difference to the
/// preceding vehicle.
struct OvmParams {
  double alpha = 0.0;     // 1/s
  double beta = 0.0;      // 1/s
  double d_stop = 5.0;    // m
  double d_go = 35.0;     // m
  double v_max = 30.0;    // m/s

  void validate() const;
};

/// Spacing-dependent target velocity: 0 below d_stop, v_max above d_go,
/// raised-cosine blend in between.
double headway_velocity(const OvmParams& p, double d);

/// OVM acceleration command, clipped to the vehicle acceleration box.
double ovm_accel(const OvmParams& p, double d, double v, double v_prev);

}  // namespace cacc::ovm
