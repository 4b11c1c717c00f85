#include "cacc/ovm.hpp"

#include <cmath>
#include <numbers>

#include "cacc/errors.hpp"
#include "cacc/vehicle.hpp"

namespace cacc::ovm {

void OvmParams::validate() const {
  if (!(d_stop < d_go)) throw ConfigError("ovm.d_stop must be < ovm.d_go");
  if (!(v_max > 0.0)) throw ConfigError("ovm.v_max must be > 0");
  if (!(alpha >= 0.0)) throw ConfigError("ovm.alpha must be >= 0");
  if (!(beta >= 0.0)) throw ConfigError("ovm.beta must be >= 0");
}

double headway_velocity(const OvmParams& p, double d) {
  if (d < p.d_stop) return 0.0;
  if (d > p.d_go) return p.v_max;
  // 1 - cos(pi x) written as 1 + sin(pi (x - 1/2)): exact at both ends and
  // at the midpoint.
  const double x = (d - p.d_stop) / (p.d_go - p.d_stop);
  return 0.5 * p.v_max * (1.0 + std::sin(std::numbers::pi * (x - 0.5)));
}

double ovm_accel(const OvmParams& p, double d, double v, double v_prev) {
  if (!std::isfinite(d) || !std::isfinite(v) || !std::isfinite(v_prev)) {
    throw DomainError("ovm_accel: non-finite input");
  }
  const double raw = p.alpha * (headway_velocity(p, d) - v) + p.beta * (v_prev - v);
  return vehicle::clip_accel(raw);
}

}  // namespace cacc::ovm
