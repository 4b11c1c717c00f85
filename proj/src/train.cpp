#include "cacc/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "cacc/errors.hpp"

namespace cacc::train {

std::string to_string(LocalOptimizer opt) {
  switch (opt) {
    case LocalOptimizer::kSgd:
      return "sgd";
    case LocalOptimizer::kAdam:
      return "adam";
    case LocalOptimizer::kQsgd:
      return "qsgd";
  }
  return "sgd";
}

LocalOptimizer local_optimizer_from_string(const std::string& name) {
  if (name == "sgd") return LocalOptimizer::kSgd;
  if (name == "adam") return LocalOptimizer::kAdam;
  if (name == "qsgd") return LocalOptimizer::kQsgd;
  throw ConfigError("train.optimizer: unknown value '" + name + "' (expected sgd, adam or qsgd)");
}

void TrainConfig::validate() const {
  if (total_steps < 1) throw ConfigError("train.total_steps must be >= 1");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("train.gamma must be in (0, 1)");
  if (!(actor_lr > 0.0)) throw ConfigError("train.actor_lr must be > 0");
  if (!(critic_lr > 0.0)) throw ConfigError("train.critic_lr must be > 0");
  if (!(entropy_coeff >= 0.0)) throw ConfigError("train.entropy_coeff must be >= 0");
  if (!(grad_clip > 0.0)) throw ConfigError("train.grad_clip must be > 0");
  if (eval_seeds < 1) throw ConfigError("train.eval_seeds must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
  if (hidden < 1) throw ConfigError("train.hidden must be >= 1");
  if (!(reward_scale > 0.0)) throw ConfigError("train.reward_scale must be > 0");
  consensus.validate();
}

std::vector<double> discounted_returns(std::span<const double> rewards,
                                       const std::vector<bool>& dones, double gamma,
                                       double bootstrap) {
  if (dones.size() != rewards.size()) throw UsageError("discounted_returns: length mismatch");
  std::vector<double> out(rewards.size());
  double running = bootstrap;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    if (dones[t]) running = 0.0;
    running = rewards[t] + gamma * running;
    out[t] = running;
  }
  return out;
}

nn::OutputGrad actor_output_grad(const nn::Vector& policy, int action, double advantage,
                                 double entropy_coeff) {
  const auto n = policy.size();
  nn::OutputGrad g{nn::Vector::Zero(n), 0.0};
  double entropy = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    if (policy(k) > 0.0) entropy -= policy(k) * std::log(policy(k));
  }
  for (Eigen::Index k = 0; k < n; ++k) {
    const double indicator = k == action ? 1.0 : 0.0;
    const double log_p = policy(k) > 0.0 ? std::log(policy(k)) : 0.0;
    g.d_logits(k) = -advantage * (indicator - policy(k)) +
                    entropy_coeff * policy(k) * (log_p + entropy);
  }
  return g;
}

nn::OutputGrad critic_output_grad(std::size_t n_actions, double ret, double value) {
  return {nn::Vector::Zero(static_cast<Eigen::Index>(n_actions)), -2.0 * (ret - value)};
}

void clip_grad_norm(nn::GradBundle& g, double max_norm) {
  const double norm = std::sqrt(g.squared_norm());
  if (norm > max_norm) g.scale(max_norm / norm);
}

AdamState::AdamState(const nn::NetShape& shape, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps), shape_(shape) {
  const auto n = nn::NetParams::zeros(shape).num_params();
  m_.assign(n, 0.0);
  v_.assign(n, 0.0);
}

nn::GradBundle AdamState::direction(const nn::GradBundle& grad) {
  const auto g = grad.flatten();
  if (g.size() != m_.size()) throw UsageError("AdamState: gradient shape mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, t_);
  const double c2 = 1.0 - std::pow(beta2_, t_);
  std::vector<double> d(g.size());
  for (std::size_t k = 0; k < g.size(); ++k) {
    m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * g[k];
    v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * g[k] * g[k];
    d[k] = (m_[k] / c1) / (std::sqrt(v_[k] / c2) + eps_);
  }
  nn::GradBundle out = nn::NetParams::zeros(shape_);
  out.unflatten(d);
  return out;
}

std::vector<nn::NetParams> initial_nets(const TrainConfig& cfg, std::size_t n_agents) {
  const nn::NetShape shape{env::obs_dim(cfg.obs_mode), static_cast<std::size_t>(cfg.hidden),
                           env::kNumActions};
  std::vector<nn::NetParams> nets;
  nets.reserve(n_agents);
  for (std::size_t a = 0; a < n_agents; ++a) {
    Rng rng(mix_seed(cfg.seed, cfg.shared_init ? 0 : a + 1));
    nets.push_back(nn::NetParams::orthogonal(shape, rng));
  }
  return nets;
}

namespace {

constexpr std::uint64_t kActionStream = 0xAC710;
constexpr std::uint64_t kEpisodeStream = 0xE915;
constexpr std::uint64_t kEvalStream = 0xE7A1;

struct AgentUpdate {
  nn::GradBundle actor;
  nn::GradBundle critic;
};

AgentUpdate agent_gradients(const TrainConfig& cfg, const nn::NetParams& net,
                            const Trajectory& traj) {
  const auto returns = discounted_returns(traj.rewards, traj.dones, cfg.gamma);
  std::vector<nn::OutputGrad> actor_grads;
  std::vector<nn::OutputGrad> critic_grads;
  actor_grads.reserve(traj.records.size());
  critic_grads.reserve(traj.records.size());
  for (std::size_t t = 0; t < traj.records.size(); ++t) {
    const double advantage = returns[t] - traj.values[t];
    actor_grads.push_back(actor_output_grad(traj.records[t].policy, traj.actions[t], advantage,
                                            cfg.entropy_coeff));
    critic_grads.push_back(critic_output_grad(net.shape.actions, returns[t], traj.values[t]));
  }
  AgentUpdate up{nn::backward(net, traj.records, actor_grads),
                 nn::backward(net, traj.records, critic_grads)};
  clip_grad_norm(up.actor, cfg.grad_clip);
  clip_grad_norm(up.critic, cfg.grad_clip);
  return up;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const Problem& problem,
                  const EpisodeCallback& on_episode) {
  cfg.validate();
  env::PlatoonEnv environment(problem.scenario, problem.reward, problem.vehicle, problem.ovm,
                              cfg.obs_mode);
  const std::size_t n_agents = environment.n_agents();
  const auto graph = consensus::NeighborGraph::line(n_agents);

  TrainResult result;
  result.nets = initial_nets(cfg, n_agents);
  std::vector<nn::AgentNet> agents;
  for (const auto& p : result.nets) agents.emplace_back(p);
  const std::size_t n_params = result.nets.front().num_params();
  std::vector<consensus::EfState> ef(n_agents, consensus::EfState::zeros(n_params));
  std::vector<AdamState> actor_adam(n_agents, AdamState(result.nets.front().shape));
  std::vector<AdamState> critic_adam(n_agents, AdamState(result.nets.front().shape));

  Rng action_rng(mix_seed(cfg.seed, kActionStream));
  const auto slot = static_cast<std::int64_t>(environment.episode_length());
  const auto start = std::chrono::steady_clock::now();

  std::int64_t budget_used = 0;
  std::int64_t env_steps = 0;
  std::uint64_t bits = 0;
  int episode = 0;

  while (budget_used < cfg.total_steps) {
    const std::int64_t limit = std::min(slot, cfg.total_steps - budget_used);
    budget_used += limit;
    ++episode;

    auto obs = environment.reset(mix_seed(mix_seed(cfg.seed, kEpisodeStream), episode));
    for (auto& agent : agents) agent.reset_hidden();
    std::vector<Trajectory> traj(n_agents);
    std::vector<double> totals(n_agents, 0.0);
    std::vector<int> actions(n_agents);
    bool collided = false;

    try {
      for (std::int64_t t = 0; t < limit; ++t) {
        for (std::size_t a = 0; a < n_agents; ++a) {
          const auto flat = obs[a].flatten();
          nn::ForwardRecord rec = agents[a].step(flat);
          const std::span<const double> probs(rec.policy.data(),
                                              static_cast<std::size_t>(rec.policy.size()));
          actions[a] = static_cast<int>(action_rng.categorical(probs));
          environment.set_policy(a, probs);
          traj[a].values.push_back(rec.value);
          traj[a].actions.push_back(actions[a]);
          traj[a].records.push_back(std::move(rec));
        }
        env::StepOutcome out = environment.step(actions);
        ++env_steps;
        const bool last = out.done || t + 1 == limit;
        for (std::size_t a = 0; a < n_agents; ++a) {
          traj[a].rewards.push_back(out.rewards[a] * cfg.reward_scale);
          traj[a].dones.push_back(last);
          totals[a] += out.rewards[a];
        }
        collided = collided || out.collision;
        obs = std::move(out.observations);
        if (out.done) break;
      }

      for (std::size_t a = 0; a < n_agents; ++a) {
        AgentUpdate up = agent_gradients(cfg, agents[a].params, traj[a]);
        if (!up.actor.all_finite() || !up.critic.all_finite()) {
          throw NumericError(fmt::format("non-finite gradient for agent {}", a));
        }
        if (cfg.optimizer == LocalOptimizer::kSgd) {
          agents[a].params.add_scaled(up.actor, -cfg.actor_lr);
          agents[a].params.add_scaled(up.critic, -cfg.critic_lr);
        } else if (cfg.optimizer == LocalOptimizer::kAdam) {
          agents[a].params.add_scaled(actor_adam[a].direction(up.actor), -cfg.actor_lr);
          agents[a].params.add_scaled(critic_adam[a].direction(up.critic), -cfg.critic_lr);
        } else {
          up.actor.add_scaled(up.critic, cfg.critic_lr / cfg.actor_lr);
          const auto w = agents[a].params.flatten();
          const auto g = up.actor.flatten();
          auto stepped = consensus::qsgd_step(w, g, ef[a], cfg.actor_lr, cfg.consensus.threshold);
          agents[a].params.unflatten(stepped.weights);
          ef[a] = std::move(stepped.ef);
        }
      }
    } catch (const NumericError& e) {
      result.aborted = true;
      result.diagnostic = fmt::format("episode {}: {}", episode, e.what());
      break;
    }

    if (cfg.consensus.protocol != consensus::Protocol::kNone &&
        episode % cfg.consensus.period == 0) {
      consensus::AgentVectors flat;
      flat.reserve(n_agents);
      for (const auto& agent : agents) flat.push_back(agent.params.flatten());
      flat = consensus::apply(cfg.consensus, flat, graph);
      for (std::size_t a = 0; a < n_agents; ++a) agents[a].params.unflatten(flat[a]);
      bits += consensus::comm_bits(cfg.consensus.protocol, n_params, graph);
    }

    EpisodeLog row;
    row.episode = episode;
    row.steps = env_steps;
    double sum = 0.0;
    for (double v : totals) sum += v;
    row.mean_reward = sum / static_cast<double>(n_agents);
    row.collisions = collided ? 1 : 0;
    row.comm_bits_cum = bits;
    if (cfg.record_wall_time) {
      row.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - start)
                        .count();
    }
    if (!std::isfinite(row.mean_reward)) {
      result.aborted = true;
      result.diagnostic = fmt::format("episode {}: non-finite episode reward", episode);
      break;
    }
    result.log.push_back(row);

    for (std::size_t a = 0; a < n_agents; ++a) result.nets[a] = agents[a].params;
    if (on_episode) on_episode(result.nets, row);
  }
  for (std::size_t a = 0; a < n_agents; ++a) result.nets[a] = agents[a].params;
  return result;
}

int greedy_action(const nn::Vector& policy) {
  int best = 0;
  for (Eigen::Index k = 1; k < policy.size(); ++k) {
    if (policy(k) > policy(best)) best = static_cast<int>(k);
  }
  return best;
}

namespace {

// Welford accumulator.
struct Moments {
  std::int64_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++n;
    const double delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (x - mean);
  }
  void merge(const Moments& o) {
    if (o.n == 0) return;
    const std::int64_t total = n + o.n;
    const double delta = o.mean - mean;
    mean += delta * static_cast<double>(o.n) / static_cast<double>(total);
    m2 += o.m2 + delta * delta * static_cast<double>(n) * static_cast<double>(o.n) /
                     static_cast<double>(total);
    n = total;
  }
  double stddev() const { return n > 0 ? std::sqrt(m2 / static_cast<double>(n)) : 0.0; }
};

struct EpisodeMoments {
  Moments ivs, velocity, accel, power;
};

EpisodeStats finish(std::uint64_t seed, int steps, const EpisodeMoments& m, double energy,
                    int collisions) {
  EpisodeStats s;
  s.seed = seed;
  s.steps = steps;
  s.ivs_mean = m.ivs.mean;
  s.ivs_std = m.ivs.stddev();
  s.velocity_mean = m.velocity.mean;
  s.velocity_std = m.velocity.stddev();
  s.accel_mean = m.accel.mean;
  s.accel_std = m.accel.stddev();
  s.power_mean_kw = m.power.mean;
  s.power_std_kw = m.power.stddev();
  s.energy_kwh = energy;
  s.collisions = collisions;
  return s;
}

EpisodeStats greedy_episode(const std::vector<nn::NetParams>& nets, env::PlatoonEnv& env,
                            std::uint64_t seed, std::vector<RolloutRow>* rollout,
                            EpisodeMoments* moments_out) {
  if (nets.size() != env.n_agents()) {
    throw UsageError(fmt::format("evaluate: {} nets for {} agents", nets.size(), env.n_agents()));
  }
  std::vector<nn::AgentNet> agents;
  agents.reserve(nets.size());
  for (const auto& p : nets) agents.emplace_back(p);

  auto obs = env.reset(seed);
  EpisodeMoments m;
  double energy = 0.0;
  int collisions = 0;
  int steps = 0;
  std::vector<int> actions(agents.size());
  const double dt = env.scenario().dt;
  while (!env.done()) {
    for (std::size_t a = 0; a < agents.size(); ++a) {
      const auto rec = agents[a].step(obs[a].flatten());
      actions[a] = greedy_action(rec.policy);
      env.set_policy(a, std::span<const double>(rec.policy.data(),
                                                static_cast<std::size_t>(rec.policy.size())));
    }
    auto out = env.step(actions);
    ++steps;
    for (std::size_t a = 0; a < agents.size(); ++a) {
      const auto& info = out.info[a];
      m.ivs.add(info.spacing);
      m.velocity.add(info.velocity);
      m.accel.add(std::abs(info.accel));
      m.power.add(info.power_kw);
      energy += info.power_kw * dt / 3600.0;
      if (rollout) {
        rollout->push_back({steps, static_cast<int>(env.vehicle_of(a)), info.spacing,
                            info.velocity, info.accel, info.power_kw, out.rewards[a]});
      }
    }
    if (out.collision) ++collisions;
    obs = std::move(out.observations);
  }
  if (moments_out) *moments_out = m;
  return finish(seed, steps, m, energy, collisions);
}

}  // namespace

EpisodeStats run_greedy_episode(const std::vector<nn::NetParams>& nets, env::PlatoonEnv& env,
                                std::uint64_t seed, std::vector<RolloutRow>* rollout) {
  return greedy_episode(nets, env, seed, rollout, nullptr);
}

std::uint64_t eval_seed(std::uint64_t base, int index) {
  return mix_seed(mix_seed(base, kEvalStream), static_cast<std::uint64_t>(index));
}

EvalReport evaluate(const std::vector<nn::NetParams>& nets, const Problem& problem,
                    env::ObsMode obs_mode, int n_seeds) {
  env::PlatoonEnv environment(problem.scenario, problem.reward, problem.vehicle, problem.ovm,
                              obs_mode);
  EvalReport report;
  EpisodeMoments pooled;
  double energy_sum = 0.0;
  int collisions = 0;
  int steps = 0;
  for (int k = 0; k < n_seeds; ++k) {
    EpisodeMoments m;
    auto stats = greedy_episode(nets, environment, eval_seed(problem.scenario.seed, k), nullptr, &m);
    stats.seed = static_cast<std::uint64_t>(k);
    pooled.ivs.merge(m.ivs);
    pooled.velocity.merge(m.velocity);
    pooled.accel.merge(m.accel);
    pooled.power.merge(m.power);
    energy_sum += stats.energy_kwh;
    collisions += stats.collisions;
    steps += stats.steps;
    report.per_seed.push_back(stats);
  }
  report.aggregate = finish(0, steps, pooled, n_seeds > 0 ? energy_sum / n_seeds : 0.0, collisions);
  return report;
}

std::vector<ProtocolRun> compare_protocols(const TrainConfig& base, const Problem& problem,
                                           std::span<const consensus::Protocol> protocols) {
  if (protocols.empty()) throw ConfigError("compare_protocols: need at least one protocol");
  std::vector<ProtocolRun> runs;
  for (const auto protocol : protocols) {
    TrainConfig cfg = base;
    cfg.consensus.protocol = protocol;
    ProtocolRun run{protocol, train(cfg, problem), {}};
    run.report = evaluate(run.result.nets, problem, cfg.obs_mode, cfg.eval_seeds);
    runs.push_back(std::move(run));
  }
  return runs;
}

namespace {

std::size_t tenth(std::size_t n) { return std::max<std::size_t>(1, n / 10); }

}  // namespace

double head_mean_reward(const std::vector<EpisodeLog>& log) {
  if (log.empty()) return 0.0;
  const std::size_t k = tenth(log.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) sum += log[i].mean_reward;
  return sum / static_cast<double>(k);
}

double tail_mean_reward(const std::vector<EpisodeLog>& log) {
  if (log.empty()) return 0.0;
  const std::size_t k = tenth(log.size());
  double sum = 0.0;
  for (std::size_t i = log.size() - k; i < log.size(); ++i) sum += log[i].mean_reward;
  return sum / static_cast<double>(k);
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path, const char* header) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << header << '\n';
  return out;
}

std::string stats_fields(const EpisodeStats& s) {
  return fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{}",
                     s.steps, s.ivs_mean, s.ivs_std, s.velocity_mean, s.velocity_std,
                     s.accel_mean, s.accel_std, s.power_mean_kw, s.power_std_kw, s.energy_kwh,
                     s.collisions);
}

void check_written(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

void write_train_log(const std::filesystem::path& path, const std::vector<EpisodeLog>& log) {
  auto out = open_csv(path, kTrainLogHeader);
  for (const auto& r : log) {
    out << fmt::format("{},{},{:.6f},{},{},{}\n", r.episode, r.steps, r.mean_reward, r.collisions,
                       r.comm_bits_cum, r.wall_ms);
  }
  check_written(out, path);
}

void write_eval_report(const std::filesystem::path& path, const EvalReport& report) {
  auto out = open_csv(path, kEvalHeader);
  for (const auto& s : report.per_seed) out << s.seed << ',' << stats_fields(s) << '\n';
  out << "aggregate," << stats_fields(report.aggregate) << '\n';
  check_written(out, path);
}

void write_rollout(const std::filesystem::path& path, const std::vector<RolloutRow>& rows) {
  auto out = open_csv(path, kRolloutHeader);
  for (const auto& r : rows) {
    out << fmt::format("{},{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}\n", r.step, r.vehicle, r.spacing,
                       r.velocity, r.accel, r.power_kw, r.reward);
  }
  check_written(out, path);
}

void write_protocol_table(const std::filesystem::path& path, const std::vector<ProtocolRun>& runs) {
  auto out = open_csv(path, kProtocolHeader);
  for (const auto& run : runs) {
    const auto& log = run.result.log;
    const auto& agg = run.report.aggregate;
    out << fmt::format("{},{},{:.6f},{:.6f},{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{}\n",
                       consensus::to_string(run.protocol), log.size(), head_mean_reward(log),
                       tail_mean_reward(log), log.empty() ? 0 : log.back().comm_bits_cum,
                       agg.ivs_mean, agg.velocity_mean, agg.accel_mean, agg.power_mean_kw,
                       agg.energy_kwh, agg.collisions);
  }
  check_written(out, path);
}

}  // namespace cacc::train
