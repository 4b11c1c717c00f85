#include "cacc/env.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "cacc/errors.hpp"

namespace cacc::env {

std::string to_string(LeaderMode mode) {
  return mode == LeaderMode::kVirtualTarget ? "virtual-target" : "trace-replay";
}

std::string to_string(ObsMode mode) { return mode == ObsMode::kIa2c ? "ia2c" : "fprint"; }

LeaderMode leader_mode_from_string(const std::string& name) {
  if (name == "virtual-target") return LeaderMode::kVirtualTarget;
  if (name == "trace-replay") return LeaderMode::kTraceReplay;
  throw ConfigError("scenario.leader_mode: unknown value '" + name +
                    "' (expected virtual-target or trace-replay)");
}

ObsMode obs_mode_from_string(const std::string& name) {
  if (name == "ia2c") return ObsMode::kIa2c;
  if (name == "fprint") return ObsMode::kFprint;
  throw ConfigError("train.obs_mode: unknown value '" + name + "' (expected ia2c or fprint)");
}

void ScenarioConfig::validate(const ovm::OvmParams& ovm) const {
  if (n_vehicles < 2) throw ConfigError("scenario.n_vehicles must be >= 2");
  if (!(d_star > ovm.d_stop)) throw ConfigError("scenario.d_star must be > ovm.d_stop");
  if (!(v_star > 0.0 && v_star <= vehicle::kMaxVelocity)) {
    throw ConfigError("scenario.v_star must be in (0, 30]");
  }
  if (!(dt > 0.0)) throw ConfigError("scenario.dt must be > 0");
  if (episode_steps < 1) throw ConfigError("scenario.episode_steps must be >= 1");
  if (!(init_spacing_jitter >= 0.0 && init_spacing_jitter < 1.0)) {
    throw ConfigError("scenario.init_spacing_jitter must be in [0, 1)");
  }
  if (!(init_velocity_jitter >= 0.0 && init_velocity_jitter < 1.0)) {
    throw ConfigError("scenario.init_velocity_jitter must be in [0, 1)");
  }
  if (perturbation.enabled) {
    if (!(perturbation.duration > 0.0)) {
      throw ConfigError("scenario.perturbation.duration must be > 0");
    }
    if (!(perturbation.depth >= 0.0 && perturbation.depth <= 1.0)) {
      throw ConfigError("scenario.perturbation.depth must be in [0, 1]");
    }
    if (!(perturbation.start >= 0.0)) throw ConfigError("scenario.perturbation.start must be >= 0");
  }
}

double ScenarioConfig::target_velocity(double t) const {
  if (!perturbation.enabled) return v_star;
  const double half = 0.5 * perturbation.duration;
  const double trough = perturbation.depth * v_star;
  const double s = t - perturbation.start;
  if (s <= 0.0 || s >= perturbation.duration) return v_star;
  if (s <= half) return v_star + (trough - v_star) * (s / half);
  return trough + (v_star - trough) * ((s - half) / half);
}

void RewardWeights::validate() const {
  if (!(collision_penalty > 0.0)) throw ConfigError("reward.collision_penalty must be > 0");
  if (!(power_norm > 0.0)) throw ConfigError("reward.power_norm must be > 0");
  if (!(d_safe >= 0.0)) throw ConfigError("reward.d_safe must be >= 0");
}

std::vector<double> Observation::flatten() const {
  std::vector<double> out(own.begin(), own.end());
  out.insert(out.end(), neighbor_block.begin(), neighbor_block.end());
  out.insert(out.end(), fingerprint_block.begin(), fingerprint_block.end());
  return out;
}

double compute_reward(const RewardWeights& w, double d, double v, double u, double power_kw,
                      double d_star, double v_star) {
  const double spacing_err = d - d_star;
  const double velocity_err = v - v_star;
  const double unsafe = std::max(0.0, 2.0 * w.d_safe - d);
  return w.w1 * spacing_err * spacing_err + w.w2 * velocity_err * velocity_err + w.w3 * u * u +
         w.w4 * unsafe * unsafe + w.w5 * (power_kw / w.power_norm);
}

std::size_t obs_dim(ObsMode mode) {
  const std::size_t base = 3 * kStateFeatures;
  return mode == ObsMode::kFprint ? base + 2 * kNumActions : base;
}

PlatoonEnv::PlatoonEnv(ScenarioConfig scenario, RewardWeights weights,
                       vehicle::VehicleParams vehicle, ovm::OvmParams ovm, ObsMode obs_mode,
                       std::optional<std::vector<double>> leader_trace)
    : PlatoonEnv(scenario, weights, vehicle, ovm, obs_mode,
                 vehicle::fit_energy_poly(vehicle).poly, std::move(leader_trace)) {}

PlatoonEnv::PlatoonEnv(ScenarioConfig scenario, RewardWeights weights,
                       vehicle::VehicleParams vehicle, ovm::OvmParams ovm, ObsMode obs_mode,
                       const vehicle::EnergyPoly& energy,
                       std::optional<std::vector<double>> leader_trace)
    : scenario_(scenario),
      weights_(weights),
      vehicle_params_(vehicle),
      ovm_(ovm),
      obs_mode_(obs_mode),
      energy_(energy),
      trace_(std::move(leader_trace)) {
  scenario_.validate(ovm_);
  weights_.validate();
  vehicle_params_.validate();
  ovm_.validate();

  const auto n = static_cast<std::size_t>(scenario_.n_vehicles);
  if (scenario_.leader_mode == LeaderMode::kTraceReplay) {
    if (!trace_ || trace_->size() < 2) {
      throw ConfigError("trace-replay scenario needs a leader trace with >= 2 samples");
    }
    for (double v : *trace_) {
      if (!std::isfinite(v)) throw ConfigError("leader trace contains non-finite velocity");
    }
    first_agent_ = 1;
    n_agents_ = n - 1;
    episode_length_ =
        std::min(static_cast<std::size_t>(scenario_.episode_steps), trace_->size() - 1);
  } else {
    first_agent_ = 0;
    n_agents_ = n;
    episode_length_ = static_cast<std::size_t>(scenario_.episode_steps);
  }
  vehicles_.resize(n);
  initial_velocity_.resize(n_agents_);
  last_policy_.resize(n_agents_);
}

std::vector<Observation> PlatoonEnv::reset() { return reset(scenario_.seed); }

std::vector<Observation> PlatoonEnv::reset(std::uint64_t seed) {
  Rng rng(seed);
  const bool replay = scenario_.leader_mode == LeaderMode::kTraceReplay;
  const double base_velocity = replay ? trace_->front() : scenario_.v_star;
  const double js = scenario_.init_spacing_jitter;
  const double jv = scenario_.init_velocity_jitter;
  for (std::size_t i = 0; i < vehicles_.size(); ++i) {
    auto& veh = vehicles_[i];
    veh.spacing = scenario_.d_star * (1.0 + rng.uniform(-js, js));
    veh.velocity =
        std::clamp(base_velocity * (1.0 + rng.uniform(-jv, jv)), 0.0, vehicle::kMaxVelocity);
    veh.accel = 0.0;
  }
  if (replay) {
    vehicles_[0].spacing = scenario_.d_star;
    vehicles_[0].velocity = trace_->front();
  }
  virtual_velocity_ = scenario_.target_velocity(0.0);
  for (std::size_t a = 0; a < n_agents_; ++a) {
    initial_velocity_[a] = vehicles_[vehicle_of(a)].velocity;
    last_policy_[a].fill(1.0 / static_cast<double>(kNumActions));
  }
  step_ = 0;
  done_ = false;

  std::vector<Observation> obs;
  obs.reserve(n_agents_);
  for (std::size_t a = 0; a < n_agents_; ++a) obs.push_back(observation(a));
  return obs;
}

double PlatoonEnv::preceding_velocity(std::size_t vehicle_index) const {
  if (vehicle_index == 0) return virtual_velocity_;
  return vehicles_[vehicle_index - 1].velocity;
}

std::array<double, kStateFeatures> PlatoonEnv::own_features(std::size_t agent) const {
  const std::size_t idx = vehicle_of(agent);
  const auto& veh = vehicles_[idx];
  const double v_prev = preceding_velocity(idx);
  const double v0 = initial_velocity_[agent];
  const double d_star = scenario_.d_star;

  std::array<double, kStateFeatures> f{};
  f[0] = v0 > 0.0 ? (veh.velocity - v0) / v0 : 0.0;
  f[1] = std::clamp((v_prev - veh.velocity) / 5.0, -2.0, 2.0);
  f[2] = std::clamp((ovm::headway_velocity(ovm_, veh.spacing) - veh.velocity) / 5.0, -2.0, 2.0);
  f[3] = (veh.spacing + (v_prev - veh.velocity) * scenario_.dt - d_star) / d_star;
  f[4] = veh.accel / vehicle::kMaxAccel;
  return f;
}

Observation PlatoonEnv::observation(std::size_t agent) const {
  if (agent >= n_agents_) throw UsageError("observation: agent index out of range");
  Observation obs;
  obs.own = own_features(agent);
  obs.neighbor_block.assign(2 * kStateFeatures, 0.0);
  if (agent > 0) {
    const auto front = own_features(agent - 1);
    std::copy(front.begin(), front.end(), obs.neighbor_block.begin());
  }
  if (agent + 1 < n_agents_) {
    const auto rear = own_features(agent + 1);
    std::copy(rear.begin(), rear.end(), obs.neighbor_block.begin() + kStateFeatures);
  }
  if (obs_mode_ == ObsMode::kFprint) {
    obs.fingerprint_block.assign(2 * kNumActions, 0.0);
    if (agent > 0) {
      std::copy(last_policy_[agent - 1].begin(), last_policy_[agent - 1].end(),
                obs.fingerprint_block.begin());
    }
    if (agent + 1 < n_agents_) {
      std::copy(last_policy_[agent + 1].begin(), last_policy_[agent + 1].end(),
                obs.fingerprint_block.begin() + kNumActions);
    }
  }
  return obs;
}

void PlatoonEnv::set_vehicles(std::vector<vehicle::VehicleState> states) {
  if (states.size() != vehicles_.size()) throw UsageError("set_vehicles: wrong vehicle count");
  vehicles_ = std::move(states);
}

void PlatoonEnv::set_policy(std::size_t agent, std::span<const double> policy) {
  if (agent >= n_agents_ || policy.size() != kNumActions) {
    throw UsageError("set_policy: bad agent index or policy length");
  }
  std::copy(policy.begin(), policy.end(), last_policy_[agent].begin());
}

StepOutcome PlatoonEnv::step(std::span<const int> actions) {
  if (done_) throw UsageError("step called on a finished episode; call reset()");
  if (actions.size() != n_agents_) {
    throw DomainError("step: expected " + std::to_string(n_agents_) + " actions, got " +
                      std::to_string(actions.size()));
  }
  for (int a : actions) {
    if (a < 0 || a >= static_cast<int>(kNumActions)) {
      throw DomainError("step: action index " + std::to_string(a) + " out of range [0, 3]");
    }
  }

  const double dt = scenario_.dt;
  const bool replay = scenario_.leader_mode == LeaderMode::kTraceReplay;
  const auto n = vehicles_.size();

  // Commands from the pre-step snapshot.
  std::vector<double> commands(n, 0.0);
  double lead_velocity_next = 0.0;
  double lead_accel = 0.0;
  if (replay) {
    const auto t = static_cast<std::size_t>(step_);
    lead_velocity_next = (*trace_)[t + 1];
    lead_accel = (lead_velocity_next - (*trace_)[t]) / dt;
  } else {
    lead_velocity_next = scenario_.target_velocity(dt * (step_ + 1));
    lead_accel = (lead_velocity_next - virtual_velocity_) / dt;
  }
  for (std::size_t a = 0; a < n_agents_; ++a) {
    const std::size_t idx = vehicle_of(a);
    ovm::OvmParams gains = ovm_;
    gains.alpha = kActionGains[static_cast<std::size_t>(actions[a])][0];
    gains.beta = kActionGains[static_cast<std::size_t>(actions[a])][1];
    commands[idx] = ovm::ovm_accel(gains, vehicles_[idx].spacing, vehicles_[idx].velocity,
                                   preceding_velocity(idx));
  }

  std::vector<vehicle::VehicleState> next(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (replay && i == 0) {
      next[0] = vehicles_[0];
      next[0].velocity = lead_velocity_next;
      next[0].accel = lead_accel;
      continue;
    }
    const double v_prev = i == 0 ? virtual_velocity_ : vehicles_[i - 1].velocity;
    double u_prev = 0.0;
    if (i == 0) {
      u_prev = lead_accel;
    } else if (replay && i == 1) {
      u_prev = lead_accel;
    } else {
      u_prev = vehicle::clip_accel(commands[i - 1]);
    }
    next[i] = vehicle::step_kinematics(vehicles_[i], v_prev, u_prev, commands[i], dt);
  }
  vehicles_ = std::move(next);
  if (!replay) virtual_velocity_ = lead_velocity_next;
  ++step_;

  StepOutcome out;
  out.rewards.resize(n_agents_);
  out.info.resize(n_agents_);
  for (std::size_t a = 0; a < n_agents_; ++a) {
    const auto& veh = vehicles_[vehicle_of(a)];
    const double power = vehicle::eval_energy_poly(energy_, veh.velocity, veh.accel);
    out.info[a] = {power, veh.spacing, veh.velocity, veh.accel};
    out.rewards[a] = compute_reward(weights_, veh.spacing, veh.velocity, veh.accel, power,
                                    scenario_.d_star, scenario_.v_star);
    if (veh.spacing <= kCollisionSpacing) {
      out.collision = true;
      out.rewards[a] -= weights_.collision_penalty;
    }
  }
  done_ = out.collision || static_cast<std::size_t>(step_) >= episode_length_;
  out.done = done_;
  out.observations.reserve(n_agents_);
  for (std::size_t a = 0; a < n_agents_; ++a) out.observations.push_back(observation(a));
  return out;
}

}  // namespace cacc::env
