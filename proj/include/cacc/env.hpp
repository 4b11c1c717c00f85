#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cacc/ovm.hpp"
#include "cacc/random.hpp"
#include "cacc/vehicle.hpp"

namespace cacc::env {

inline constexpr std::size_t kNumActions = 4;
inline constexpr std::size_t kStateFeatures = 5;
inline constexpr double kCollisionSpacing = 1.0;  // m

/// (alpha, beta) gain pair selected by each discrete action.
inline constexpr std::array<std::array<double, 2>, kNumActions> kActionGains{{
    {0.0, 0.0},
    {0.5, 0.0},
    {0.0, 0.5},
    {0.5, 0.5},
}};

enum class LeaderMode { kVirtualTarget, kTraceReplay };
enum class ObsMode { kIa2c, kFprint };

std::string to_string(LeaderMode mode);
std::string to_string(ObsMode mode);
LeaderMode leader_mode_from_string(const std::string& name);
ObsMode obs_mode_from_string(const std::string& name);

/// Leader slowdown: linear decay to `depth * v_star` over duration/2, then
/// linear recovery over duration/2.
struct Perturbation {
  bool enabled = true;
  double start = 20.0;     // s
  double depth = 0.6;      // fraction of v_star at the trough
  double duration = 10.0;  // s
};

struct ScenarioConfig {
  int n_vehicles = 4;
  double d_star = 20.0;  // m
  double v_star = 15.0;  // m/s
  double dt = 0.1;       // s
  int episode_steps = 600;
  LeaderMode leader_mode = LeaderMode::kVirtualTarget;
  Perturbation perturbation;
  double init_spacing_jitter = 0.15;
  double init_velocity_jitter = 0.10;
  std::uint64_t seed = 1;

  void validate(const ovm::OvmParams& ovm) const;

  /// Velocity of the virtual lead car at time `t`.
  double target_velocity(double t) const;
};

struct RewardWeights {
  double w1 = -1.0;   // spacing error
  double w2 = -1.0;   // velocity error
  double w3 = -0.1;   // acceleration
  double w4 = -5.0;   // unsafe spacing
  double w5 = -10.0;  // normalised power
  double d_safe = 5.0;            // m
  double collision_penalty = 1000.0;
  double power_norm = 135.0;      // kW

  void validate() const;
};

/// Per-agent observation. `own` is [v_norm, v_diff, v_headway, d_norm, u_norm].
struct Observation {
  std::array<double, kStateFeatures> own{};
  std::vector<double> neighbor_block;     // front then rear, zero-padded
  std::vector<double> fingerprint_block;  // front then rear policies (fprint mode only)

  std::vector<double> flatten() const;
};

struct AgentInfo {
  double power_kw = 0.0;
  double spacing = 0.0;
  double velocity = 0.0;
  double accel = 0.0;
};

struct StepOutcome {
  std::vector<Observation> observations;
  std::vector<double> rewards;
  bool done = false;
  bool collision = false;
  std::vector<AgentInfo> info;
};

/// Multi-objective reward for one agent, excluding the collision penalty.
double compute_reward(const RewardWeights& w, double d, double v, double u, double power_kw,
                      double d_star, double v_star);

std::size_t obs_dim(ObsMode mode);

/// N-vehicle platoon with discrete OVM-gain actions.
///
/// Vehicle 0 follows either a virtual lead car (and is an agent) or a
/// replayed velocity trace (and is not). Every other vehicle is an agent.
/// All vehicles advance synchronously from the pre-step state.
class PlatoonEnv {
 public:
  PlatoonEnv(ScenarioConfig scenario, RewardWeights weights, vehicle::VehicleParams vehicle,
             ovm::OvmParams ovm, ObsMode obs_mode,
             std::optional<std::vector<double>> leader_trace = std::nullopt);

  PlatoonEnv(ScenarioConfig scenario, RewardWeights weights, vehicle::VehicleParams vehicle,
             ovm::OvmParams ovm, ObsMode obs_mode, const vehicle::EnergyPoly& energy,
             std::optional<std::vector<double>> leader_trace = std::nullopt);

  /// Resets with the scenario's own seed.
  std::vector<Observation> reset();
  std::vector<Observation> reset(std::uint64_t seed);

  /// One synchronous step. Throws DomainError on an invalid action index
  /// or a wrong action count, UsageError after the episode has ended.
  StepOutcome step(std::span<const int> actions);

  Observation observation(std::size_t agent) const;

  /// Overwrites the platoon state mid-episode (scenario injection).
  void set_vehicles(std::vector<vehicle::VehicleState> states);

  /// Records an agent's most recent policy for neighbours' fingerprints.
  void set_policy(std::size_t agent, std::span<const double> policy);

  std::size_t n_agents() const { return n_agents_; }
  std::size_t n_vehicles() const { return vehicles_.size(); }
  std::size_t obs_dim() const { return env::obs_dim(obs_mode_); }
  std::size_t vehicle_of(std::size_t agent) const { return agent + first_agent_; }
  std::size_t episode_length() const { return episode_length_; }
  int step_count() const { return step_; }
  bool done() const { return done_; }
  const std::vector<vehicle::VehicleState>& vehicles() const { return vehicles_; }
  const ScenarioConfig& scenario() const { return scenario_; }
  const vehicle::EnergyPoly& energy_poly() const { return energy_; }

 private:
  double preceding_velocity(std::size_t vehicle_index) const;
  std::array<double, kStateFeatures> own_features(std::size_t agent) const;

  ScenarioConfig scenario_;
  RewardWeights weights_;
  vehicle::VehicleParams vehicle_params_;
  ovm::OvmParams ovm_;
  ObsMode obs_mode_;
  vehicle::EnergyPoly energy_;
  std::optional<std::vector<double>> trace_;

  std::size_t first_agent_ = 0;
  std::size_t n_agents_ = 0;
  std::size_t episode_length_ = 0;

  std::vector<vehicle::VehicleState> vehicles_;
  std::vector<double> initial_velocity_;
  std::vector<std::array<double, kNumActions>> last_policy_;
  double virtual_velocity_ = 0.0;
  int step_ = 0;
  bool done_ = true;
};

}  // namespace cacc::env
