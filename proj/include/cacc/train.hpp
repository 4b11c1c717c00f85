#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cacc/consensus.hpp"
#include "cacc/env.hpp"
#include "cacc/nn.hpp"
#include "cacc/ovm.hpp"
#include "cacc/vehicle.hpp"

namespace cacc::train {

/// Everything needed to build a PlatoonEnv.
struct Problem {
  env::ScenarioConfig scenario;
  env::RewardWeights reward;
  vehicle::VehicleParams vehicle;
  ovm::OvmParams ovm;
};

enum class LocalOptimizer { kSgd, kAdam, kQsgd };

std::string to_string(LocalOptimizer opt);
LocalOptimizer local_optimizer_from_string(const std::string& name);

struct TrainConfig {
  std::int64_t total_steps = 100000;
  double gamma = 0.99;
  double actor_lr = 3.0e-3;
  double critic_lr = 3.0e-3;
  double entropy_coeff = 0.001;
  double grad_clip = 5.0;
  env::ObsMode obs_mode = env::ObsMode::kIa2c;
  consensus::ConsensusConfig consensus;
  int eval_seeds = 20;
  int checkpoint_every = 0;  // episodes; 0 disables intermediate checkpoints
  std::uint64_t seed = 1;
  int hidden = 64;
  bool shared_init = true;   // all agents start from the same parameters
  LocalOptimizer optimizer = LocalOptimizer::kAdam;
  double reward_scale = 1.0e-3;  // rewards are multiplied by this before returns
  bool record_wall_time = false;

  void validate() const;
};

/// One agent's episode, aligned per step.
struct Trajectory {
  std::vector<nn::ForwardRecord> records;
  std::vector<int> actions;
  std::vector<double> rewards;
  std::vector<double> values;
  std::vector<bool> dones;
};

/// G_t = r_t + gamma * G_{t+1}, restarting at done steps; `bootstrap` is
/// the value after the last step when it is not terminal.
std::vector<double> discounted_returns(std::span<const double> rewards,
                                       const std::vector<bool>& dones, double gamma,
                                       double bootstrap = 0.0);

/// Loss gradients at the outputs for one step:
/// actor: -A log pi(a) - c H(pi); critic: (G - V)^2.
nn::OutputGrad actor_output_grad(const nn::Vector& policy, int action, double advantage,
                                 double entropy_coeff);
nn::OutputGrad critic_output_grad(std::size_t n_actions, double ret, double value);

/// Scales `g` so that its global L2 norm is at most `max_norm`.
void clip_grad_norm(nn::GradBundle& g, double max_norm);

/// Adam moment estimates for one parameter bundle.
class AdamState {
 public:
  explicit AdamState(const nn::NetShape& shape, double beta1 = 0.9, double beta2 = 0.999,
                     double eps = 1e-8);
  /// Bias-corrected Adam step direction for `grad` (to be scaled by -lr).
  nn::GradBundle direction(const nn::GradBundle& grad);

 private:
  std::vector<double> m_, v_;
  double beta1_, beta2_, eps_;
  int t_ = 0;
  nn::NetShape shape_;
};

struct EpisodeLog {
  int episode = 0;
  std::int64_t steps = 0;     // cumulative env steps
  double mean_reward = 0.0;   // mean over agents of each agent's summed reward
  int collisions = 0;
  std::uint64_t comm_bits_cum = 0;
  std::int64_t wall_ms = 0;
};

struct TrainResult {
  std::vector<nn::NetParams> nets;
  std::vector<EpisodeLog> log;
  bool aborted = false;
  std::string diagnostic;
};

/// Called after each episode with the nets and the new log row.
using EpisodeCallback =
    std::function<void(const std::vector<nn::NetParams>&, const EpisodeLog&)>;

/// Decentralised episodic A2C. The step budget is counted in episode
/// slots: each episode consumes its full configured length whether it ends
/// at the limit or by collision, so matched configs run the same number of
/// episodes and consensus rounds.
TrainResult train(const TrainConfig& cfg, const Problem& problem,
                  const EpisodeCallback& on_episode = {});

std::vector<nn::NetParams> initial_nets(const TrainConfig& cfg, std::size_t n_agents);

struct RolloutRow {
  int step = 0;
  int vehicle = 0;
  double spacing = 0.0;
  double velocity = 0.0;
  double accel = 0.0;
  double power_kw = 0.0;
  double reward = 0.0;
};

struct EpisodeStats {
  std::uint64_t seed = 0;
  int steps = 0;
  double ivs_mean = 0.0, ivs_std = 0.0;
  double velocity_mean = 0.0, velocity_std = 0.0;
  double accel_mean = 0.0, accel_std = 0.0;  // of |u|
  double power_mean_kw = 0.0, power_std_kw = 0.0;  // per vehicle
  double energy_kwh = 0.0;  // whole platoon
  int collisions = 0;
};

struct EvalReport {
  std::vector<EpisodeStats> per_seed;
  EpisodeStats aggregate;  // pooled over all samples; energy averaged over seeds; collisions summed
};

/// Greedy index; ties go to the lowest action.
int greedy_action(const nn::Vector& policy);

/// Runs one greedy episode on a fresh reset of `env`.
EpisodeStats run_greedy_episode(const std::vector<nn::NetParams>& nets, env::PlatoonEnv& env,
                                std::uint64_t seed, std::vector<RolloutRow>* rollout = nullptr);

std::uint64_t eval_seed(std::uint64_t base, int index);

EvalReport evaluate(const std::vector<nn::NetParams>& nets, const Problem& problem,
                    env::ObsMode obs_mode, int n_seeds);

struct ProtocolRun {
  consensus::Protocol protocol;
  TrainResult result;
  EvalReport report;
};

std::vector<ProtocolRun> compare_protocols(const TrainConfig& base, const Problem& problem,
                                           std::span<const consensus::Protocol> protocols);

/// Mean of the first/last 10% (at least one) of the episodes' mean rewards.
double head_mean_reward(const std::vector<EpisodeLog>& log);
double tail_mean_reward(const std::vector<EpisodeLog>& log);

void write_train_log(const std::filesystem::path& path, const std::vector<EpisodeLog>& log);
void write_eval_report(const std::filesystem::path& path, const EvalReport& report);
void write_rollout(const std::filesystem::path& path, const std::vector<RolloutRow>& rows);
void write_protocol_table(const std::filesystem::path& path, const std::vector<ProtocolRun>& runs);

inline constexpr const char* kTrainLogHeader =
    "episode,steps,mean_reward,collisions,comm_bits_cum,wall_ms";
inline constexpr const char* kEvalHeader =
    "seed,steps,ivs_mean_m,ivs_std_m,velocity_mean_mps,velocity_std_mps,accel_mean_mps2,"
    "accel_std_mps2,power_mean_kw,power_std_kw,energy_kwh,collisions";
inline constexpr const char* kRolloutHeader =
    "step,vehicle,spacing_m,velocity_mps,accel_mps2,power_kw,reward";
inline constexpr const char* kProtocolHeader =
    "protocol,episodes,head_mean_reward,tail_mean_reward,comm_bits_cum,ivs_mean_m,"
    "velocity_mean_mps,accel_mean_mps2,power_mean_kw,energy_kwh,collisions";

}  // namespace cacc::train
