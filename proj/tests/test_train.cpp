#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "cacc/errors.hpp"
#include "cacc/train.hpp"

using namespace cacc;
using namespace cacc::train;

namespace {

Problem small_problem(int n_vehicles = 2, int episode_steps = 100) {
  Problem p;
  p.scenario.n_vehicles = n_vehicles;
  p.scenario.episode_steps = episode_steps;
  return p;
}

TrainConfig small_config(std::int64_t steps) {
  TrainConfig c;
  c.total_steps = steps;
  c.hidden = 8;
  return c;
}

double actor_loss(const nn::Vector& logits, int action, double advantage, double c) {
  const nn::Vector pi = nn::softmax(logits);
  double entropy = 0.0;
  for (Eigen::Index k = 0; k < pi.size(); ++k) entropy -= pi[k] * std::log(pi[k]);
  return -advantage * std::log(pi[action]) - c * entropy;
}

}  // namespace

TEST(Returns, HandBuiltTrajectory) {
  const std::vector<double> r{1.0, 0.0, 2.0};
  const auto g = discounted_returns(r, {false, false, true}, 0.5);
  EXPECT_EQ(g, (std::vector<double>{1.5, 1.0, 2.0}));
}

TEST(Returns, ZeroDiscountGivesRewards) {
  const std::vector<double> r{-3.0, 0.5, 7.0, 1.0};
  EXPECT_EQ(discounted_returns(r, {false, false, false, true}, 0.0), r);
  // The advantage is then r_t - V(s_t).
  const std::vector<double> v{1.0, 1.0, 1.0, 1.0};
  const auto g = discounted_returns(r, {false, false, false, true}, 0.0);
  for (std::size_t t = 0; t < r.size(); ++t) EXPECT_EQ(g[t] - v[t], r[t] - 1.0);
}

TEST(Returns, RestartAtDoneAndBootstrap) {
  const std::vector<double> r{1.0, 1.0, 1.0};
  EXPECT_EQ(discounted_returns(r, {false, true, false}, 0.5, 4.0),
            (std::vector<double>{1.5, 1.0, 3.0}));
  EXPECT_THROW(discounted_returns(r, {false}, 0.5), UsageError);
}

TEST(OutputGrads, ActorMatchesFiniteDifferences) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    nn::Vector z(4);
    for (Eigen::Index k = 0; k < 4; ++k) z[k] = rng.uniform(-3.0, 3.0);
    const int a = static_cast<int>(rng.next_u64() % 4);
    const double adv = rng.uniform(-5.0, 5.0);
    const double c = rng.uniform(0.0, 0.1);
    const auto g = actor_output_grad(nn::softmax(z), a, adv, c);
    for (Eigen::Index k = 0; k < 4; ++k) {
      nn::Vector zp = z;
      nn::Vector zm = z;
      zp[k] += 1e-6;
      zm[k] -= 1e-6;
      const double fd = (actor_loss(zp, a, adv, c) - actor_loss(zm, a, adv, c)) / 2e-6;
      EXPECT_NEAR(g.d_logits[k], fd, 1e-6 + 1e-5 * std::abs(fd));
    }
    EXPECT_EQ(g.d_value, 0.0);
  }
}

TEST(OutputGrads, CriticIsSquaredError) {
  const auto g = critic_output_grad(4, 2.0, 0.5);
  EXPECT_DOUBLE_EQ(g.d_value, -3.0);
  EXPECT_EQ(g.d_logits, nn::Vector::Zero(4));
}

TEST(ClipGradNorm, ScalesOnlyLargeGradients) {
  auto g = nn::NetParams::zeros({2, 2, 4});
  g.critic_head.biases[0] = 3.0;
  g.actor_head.biases[0] = 4.0;
  clip_grad_norm(g, 10.0);
  EXPECT_DOUBLE_EQ(g.squared_norm(), 25.0);
  clip_grad_norm(g, 1.0);
  EXPECT_NEAR(g.squared_norm(), 1.0, 1e-12);
  EXPECT_NEAR(g.critic_head.biases[0], 0.6, 1e-12);
}

TEST(Adam, FirstStepIsSignOfGradient) {
  AdamState adam({2, 2, 4});
  auto g = nn::NetParams::zeros({2, 2, 4});
  g.actor_head.biases[1] = -0.003;
  g.critic_head.biases[0] = 250.0;
  const auto d = adam.direction(g);
  EXPECT_NEAR(d.actor_head.biases[1], -1.0, 1e-4);
  EXPECT_NEAR(d.critic_head.biases[0], 1.0, 1e-9);
  EXPECT_EQ(d.actor_head.biases[0], 0.0);
}

TEST(Train, OneEpisodeOneUpdate) {
  auto cfg = small_config(100);
  cfg.consensus.protocol = consensus::Protocol::kNone;
  const auto problem = small_problem();
  const auto result = train::train(cfg, problem);
  ASSERT_EQ(result.log.size(), 1u);
  EXPECT_EQ(result.log[0].episode, 1);
  EXPECT_EQ(result.log[0].comm_bits_cum, 0u);
  EXPECT_EQ(result.log[0].wall_ms, 0);
  EXPECT_FALSE(result.aborted);
  const auto init = initial_nets(cfg, 2);
  for (std::size_t a = 0; a < 2; ++a) EXPECT_NE(result.nets[a].flatten(), init[a].flatten());
}

TEST(Train, BudgetCountedInEpisodeSlots) {
  auto cfg = small_config(250);
  const auto result = train::train(cfg, small_problem());
  ASSERT_EQ(result.log.size(), 3u);
  EXPECT_LE(result.log.back().steps, 250);
}

TEST(Train, DeterministicGivenSeed) {
  auto cfg = small_config(300);
  cfg.seed = 17;
  const auto a = train::train(cfg, small_problem(3));
  const auto b = train::train(cfg, small_problem(3));
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].mean_reward, b.log[i].mean_reward);
    EXPECT_EQ(a.log[i].steps, b.log[i].steps);
  }
  for (std::size_t k = 0; k < a.nets.size(); ++k) EXPECT_EQ(a.nets[k].flatten(), b.nets[k].flatten());
  cfg.seed = 18;
  const auto c = train::train(cfg, small_problem(3));
  EXPECT_NE(a.nets[0].flatten(), c.nets[0].flatten());
}

TEST(Train, AllOptimizersRun) {
  for (auto opt : {LocalOptimizer::kSgd, LocalOptimizer::kAdam, LocalOptimizer::kQsgd}) {
    auto cfg = small_config(200);
    cfg.optimizer = opt;
    const auto r = train::train(cfg, small_problem());
    EXPECT_FALSE(r.aborted) << to_string(opt);
    EXPECT_EQ(r.log.size(), 2u);
  }
}

TEST(Train, WacKeepsPairIdentical) {
  auto cfg = small_config(500);
  cfg.consensus.protocol = consensus::Protocol::kWac;
  cfg.shared_init = true;
  int episodes = 0;
  train::train(cfg, small_problem(2), [&](const std::vector<nn::NetParams>& nets, const EpisodeLog&) {
    ++episodes;
    EXPECT_EQ(nets[0].flatten(), nets[1].flatten());
  });
  EXPECT_EQ(episodes, 5);
}

TEST(Train, NonFiniteLossAborts) {
  auto cfg = small_config(200);
  auto problem = small_problem();
  problem.reward.w1 = -1e308;
  problem.scenario.init_spacing_jitter = 0.5;
  const auto r = train::train(cfg, problem);
  EXPECT_TRUE(r.aborted);
  EXPECT_FALSE(r.diagnostic.empty());
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.gamma = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.actor_lr = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(local_optimizer_from_string("rmsprop"), ConfigError);
}

TEST(Evaluate, ZeroNetsPickActionZero) {
  nn::Vector uniform = nn::Vector::Constant(4, 0.25);
  EXPECT_EQ(greedy_action(uniform), 0);
  nn::Vector tie(4);
  tie << 0.1, 0.4, 0.1, 0.4;
  EXPECT_EQ(greedy_action(tie), 1);
}

TEST(Evaluate, EquilibriumWithZeroNets) {
  Problem p = small_problem(4, 600);
  p.scenario.init_spacing_jitter = 0.0;
  p.scenario.init_velocity_jitter = 0.0;
  p.scenario.perturbation.enabled = false;
  const std::vector<nn::NetParams> nets(4, nn::NetParams::zeros({15, 8, 4}));
  const auto report = evaluate(nets, p, env::ObsMode::kIa2c, 3);
  ASSERT_EQ(report.per_seed.size(), 3u);
  EXPECT_EQ(report.aggregate.ivs_mean, 20.0);
  EXPECT_EQ(report.aggregate.velocity_mean, 15.0);
  EXPECT_EQ(report.aggregate.accel_mean, 0.0);
  EXPECT_EQ(report.aggregate.collisions, 0);
  EXPECT_GT(report.aggregate.power_mean_kw, 0.0);
  EXPECT_NEAR(report.aggregate.energy_kwh, report.aggregate.power_mean_kw * 4 * 60.0 / 3600.0,
              1e-9);
}

TEST(Evaluate, DeterministicAndSeedDependent) {
  Problem p = small_problem(3, 200);
  TrainConfig cfg = small_config(1);
  const auto nets = initial_nets(cfg, 3);
  const auto a = evaluate(nets, p, env::ObsMode::kIa2c, 4);
  const auto b = evaluate(nets, p, env::ObsMode::kIa2c, 4);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(a.per_seed[i].ivs_mean, b.per_seed[i].ivs_mean);
    EXPECT_EQ(a.per_seed[i].seed, b.per_seed[i].seed);
  }
  EXPECT_NE(a.per_seed[0].seed, a.per_seed[1].seed);
}

TEST(Compare, SingleProtocol) {
  const std::vector<consensus::Protocol> only{consensus::Protocol::kNone};
  const auto runs = compare_protocols(small_config(200), small_problem(), only);
  ASSERT_EQ(runs.size(), 1u);
  EXPECT_EQ(runs[0].result.log.back().comm_bits_cum, 0u);
}

TEST(Compare, BdcUsesOneSixteenthOfWacBits) {
  const std::vector<consensus::Protocol> both{consensus::Protocol::kBdc, consensus::Protocol::kWac};
  const auto runs = compare_protocols(small_config(300), small_problem(3), both);
  ASSERT_EQ(runs.size(), 2u);
  ASSERT_EQ(runs[0].result.log.size(), runs[1].result.log.size());
  for (std::size_t i = 0; i < runs[0].result.log.size(); ++i) {
    EXPECT_EQ(16 * runs[0].result.log[i].comm_bits_cum, runs[1].result.log[i].comm_bits_cum);
  }
  EXPECT_GT(runs[0].result.log.back().comm_bits_cum, 0u);
}

TEST(LogSummary, HeadAndTail) {
  std::vector<EpisodeLog> log;
  for (int i = 1; i <= 20; ++i) log.push_back({i, 0, static_cast<double>(i), 0, 0, 0});
  EXPECT_DOUBLE_EQ(head_mean_reward(log), 1.5);
  EXPECT_DOUBLE_EQ(tail_mean_reward(log), 19.5);
  log.resize(3);
  EXPECT_DOUBLE_EQ(head_mean_reward(log), 1.0);
  EXPECT_DOUBLE_EQ(tail_mean_reward(log), 3.0);
}

TEST(TrainLearning, ShortRunsImproveOnTwoVehicles) {
  Problem problem;
  problem.scenario.n_vehicles = 2;
  int improved = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TrainConfig cfg;
    cfg.total_steps = 20000;
    cfg.seed = seed;
    problem.scenario.seed = seed;
    const auto result = train::train(cfg, problem);
    ASSERT_FALSE(result.aborted);
    if (tail_mean_reward(result.log) > head_mean_reward(result.log)) ++improved;
  }
  EXPECT_GE(improved, 4);
}
