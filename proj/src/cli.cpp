#include "cacc/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <regex>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "cacc/config.hpp"
#include "cacc/consensus.hpp"
#include "cacc/data.hpp"
#include "cacc/errors.hpp"
#include "cacc/nn.hpp"
#include "cacc/train.hpp"
#include "cacc/vehicle.hpp"

namespace cacc::cli {

namespace fs = std::filesystem;

namespace {

struct Flags {
  std::string config;
  std::string output_dir;
  std::optional<std::uint64_t> seed;
  std::string protocol;
  std::string protocols = "bdc,wac,dcea";
  std::optional<std::int64_t> steps;
  std::optional<int> n_vehicles;
  std::string obs_mode;
  std::string trace;
  std::string window;
  std::string leader_col;
  std::string grid;
  std::optional<int> eval_seeds;
  std::string checkpoint_dir;
  int rounds = 500;
  int dim = 64;
};

config::RunConfig resolve_config(const Flags& f) {
  config::RunConfig cfg = f.config.empty() ? config::RunConfig{} : config::load_config(f.config);
  if (f.seed) cfg.seeds = {*f.seed};
  if (!f.protocol.empty()) cfg.train.consensus.protocol = consensus::protocol_from_string(f.protocol);
  if (f.steps) cfg.train.total_steps = *f.steps;
  if (f.n_vehicles) cfg.scenario.n_vehicles = *f.n_vehicles;
  if (!f.obs_mode.empty()) cfg.train.obs_mode = env::obs_mode_from_string(f.obs_mode);
  if (f.eval_seeds) cfg.train.eval_seeds = *f.eval_seeds;
  if (!f.trace.empty()) cfg.replay.trace = f.trace;
  if (!f.leader_col.empty()) cfg.replay.leader_col = f.leader_col;
  if (!f.checkpoint_dir.empty()) cfg.replay.checkpoint_dir = f.checkpoint_dir;
  if (!f.window.empty()) {
    static const std::regex pattern(R"(^\s*([0-9.eE+-]+)\s*:\s*([0-9.eE+-]+)\s*$)");
    std::smatch m;
    if (!std::regex_match(f.window, m, pattern)) {
      throw ConfigError("--window must look like t0:t1, got '" + f.window + "'");
    }
    cfg.replay.t0 = std::stod(m[1]);
    cfg.replay.t1 = std::stod(m[2]);
  }
  if (!f.grid.empty()) {
    static const std::regex pattern(R"(^\s*(\d+)\s*x\s*(\d+)\s*$)");
    std::smatch m;
    if (!std::regex_match(f.grid, m, pattern)) {
      throw ConfigError("--grid must look like NVxNU, got '" + f.grid + "'");
    }
    cfg.energy_grid.velocity_points = std::stoul(m[1]);
    cfg.energy_grid.accel_points = std::stoul(m[2]);
  }
  if (!f.output_dir.empty()) cfg.output_dir = f.output_dir;
  if (cfg.output_dir.empty()) {
    const char* env_dir = std::getenv("CACC_OUTPUT_DIR");
    cfg.output_dir = env_dir && *env_dir ? env_dir : "cacc_out";
  }
  cfg.validate();
  return cfg;
}

fs::path prepare_output(const config::RunConfig& cfg) {
  const fs::path dir(cfg.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw std::runtime_error("cannot create output directory '" + dir.string() + "'");
  }
  config::save_config(dir / "run_config.json", cfg);
  return dir;
}

std::vector<nn::NetParams> load_nets(const fs::path& dir) {
  std::vector<nn::NetParams> nets;
  for (std::size_t i = 0;; ++i) {
    const fs::path p = dir / fmt::format("agent_{}.ckpt", i);
    if (!fs::exists(p)) break;
    nets.push_back(nn::load_checkpoint(p));
  }
  if (nets.empty()) throw FormatError("no agent_<i>.ckpt files in " + dir.string());
  return nets;
}

void save_nets(const fs::path& dir, const std::vector<nn::NetParams>& nets) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < nets.size(); ++i) {
    nn::save_checkpoint(nets[i], dir / fmt::format("agent_{}.ckpt", i));
  }
}

std::size_t agent_count(const config::RunConfig& cfg) {
  const auto n = static_cast<std::size_t>(cfg.scenario.n_vehicles);
  return cfg.scenario.leader_mode == env::LeaderMode::kTraceReplay ? n - 1 : n;
}

std::vector<nn::NetParams> nets_for(const config::RunConfig& cfg, std::uint64_t seed) {
  if (!cfg.replay.checkpoint_dir.empty()) return load_nets(cfg.replay.checkpoint_dir);
  return train::initial_nets(cfg.train_config(seed), agent_count(cfg));
}

int cmd_fit_energy(const Flags& flags) {
  const auto cfg = resolve_config(flags);
  const auto dir = prepare_output(cfg);
  const auto fit = vehicle::fit_energy_poly(cfg.vehicle, cfg.energy_grid);
  const double holdout = vehicle::holdout_rmse(cfg.vehicle, fit.poly, cfg.energy_grid);

  std::ostringstream header;
  std::ostringstream row;
  for (std::size_t k = 0; k < vehicle::EnergyPoly::kOrder; ++k) {
    for (std::size_t j = 0; j < vehicle::EnergyPoly::kOrder; ++j) {
      const bool first = k == 0 && j == 0;
      header << (first ? "" : ",") << 'p' << k << j;
      row << (first ? "" : ",") << fmt::format("{:.17g}", fit.poly.coeffs[k][j]);
    }
  }
  const fs::path out_path = dir / "energy_poly.csv";
  std::ofstream out(out_path);
  out << header.str() << '\n' << row.str() << '\n';
  out.flush();
  if (!out) throw std::runtime_error("failed writing " + out_path.string());

  std::cout << header.str() << '\n' << row.str() << '\n';
  std::cout << fmt::format("rmse_kw={:.6f} holdout_rmse_kw={:.6f} grid={}x{} -> {}\n",
                           fit.rmse_kw, holdout, cfg.energy_grid.velocity_points,
                           cfg.energy_grid.accel_points, out_path.string());
  return kExitOk;
}

int cmd_train(const Flags& flags) {
  const auto cfg = resolve_config(flags);
  const auto dir = prepare_output(cfg);
  int status = kExitOk;
  for (const auto seed : cfg.seeds) {
    const auto tcfg = cfg.train_config(seed);
    const fs::path ckpt_root = dir / "checkpoints" / fmt::format("seed{}", seed);
    train::EpisodeCallback on_episode;
    if (tcfg.checkpoint_every > 0) {
      on_episode = [&](const std::vector<nn::NetParams>& nets, const train::EpisodeLog& row) {
        if (row.episode % tcfg.checkpoint_every == 0) {
          save_nets(ckpt_root / fmt::format("ep{}", row.episode), nets);
        }
      };
    }
    const auto result = train::train(tcfg, cfg.problem(seed), on_episode);
    train::write_train_log(dir / fmt::format("train_log_seed{}.csv", seed), result.log);
    save_nets(ckpt_root, result.nets);
    if (result.aborted) {
      std::cerr << "training aborted (seed " << seed << "): " << result.diagnostic << '\n';
      status = kExitRuntime;
      continue;
    }
    std::cout << fmt::format(
        "train seed={} protocol={} episodes={} head_reward={:.3f} tail_reward={:.3f} "
        "comm_bits={}\n",
        seed, consensus::to_string(tcfg.consensus.protocol), result.log.size(),
        train::head_mean_reward(result.log), train::tail_mean_reward(result.log),
        result.log.empty() ? 0 : result.log.back().comm_bits_cum);
  }
  return status;
}

int cmd_eval(const Flags& flags) {
  const auto cfg = resolve_config(flags);
  const auto dir = prepare_output(cfg);
  const auto seed = cfg.seeds.front();
  const auto nets = nets_for(cfg, seed);
  const auto report = train::evaluate(nets, cfg.problem(seed), cfg.train.obs_mode,
                                      cfg.train.eval_seeds);
  train::write_eval_report(dir / "eval_report.csv", report);
  const auto& a = report.aggregate;
  std::cout << fmt::format(
      "eval seeds={} ivs_mean={:.3f} velocity_mean={:.3f} accel_mean={:.3f} power_mean_kw={:.3f} "
      "energy_kwh={:.4f} collisions={}\n",
      report.per_seed.size(), a.ivs_mean, a.velocity_mean, a.accel_mean, a.power_mean_kw,
      a.energy_kwh, a.collisions);
  return kExitOk;
}

void write_replay_summary(const fs::path& path, const std::vector<train::RolloutRow>& rows,
                          double dt) {
  struct Acc {
    std::int64_t n = 0;
    double s[4] = {0, 0, 0, 0};
    double ss[4] = {0, 0, 0, 0};
    double energy = 0.0;
    int collisions = 0;
    void add(const train::RolloutRow& r, double dt_s) {
      const double x[4] = {r.spacing, r.velocity, std::abs(r.accel), r.power_kw};
      ++n;
      for (int k = 0; k < 4; ++k) {
        s[k] += x[k];
        ss[k] += x[k] * x[k];
      }
      energy += r.power_kw * dt_s / 3600.0;
      if (r.spacing <= env::kCollisionSpacing) ++collisions;
    }
    std::string fields() const {
      std::string out = std::to_string(n);
      for (int k = 0; k < 4; ++k) {
        const double mean = n ? s[k] / static_cast<double>(n) : 0.0;
        const double var = n ? std::max(0.0, ss[k] / static_cast<double>(n) - mean * mean) : 0.0;
        out += fmt::format(",{:.6f},{:.6f}", mean, std::sqrt(var));
      }
      return out + fmt::format(",{:.6f},{}", energy, collisions);
    }
  };
  std::map<int, Acc> per_vehicle;
  Acc platoon;
  for (const auto& r : rows) {
    per_vehicle[r.vehicle].add(r, dt);
    platoon.add(r, dt);
  }
  std::ofstream out(path);
  out << "vehicle,samples,ivs_mean_m,ivs_std_m,velocity_mean_mps,velocity_std_mps,"
         "accel_mean_mps2,accel_std_mps2,power_mean_kw,power_std_kw,energy_kwh,collisions\n";
  for (const auto& [vehicle, acc] : per_vehicle) out << vehicle << ',' << acc.fields() << '\n';
  out << "platoon," << platoon.fields() << '\n';
  out.flush();
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

int cmd_replay(const Flags& flags) {
  auto cfg = resolve_config(flags);
  if (cfg.replay.trace.empty()) throw ConfigError("replay needs --trace (or replay.trace)");
  if (!fs::exists(cfg.replay.trace)) {
    throw FormatError("trace file not found: " + cfg.replay.trace);
  }
  const auto table = data::parse_trace_csv(cfg.replay.trace);
  const double dt = cfg.scenario.dt;
  const auto profile = data::extract_window(data::resample(table, dt), cfg.replay.leader_col,
                                            cfg.replay.t0, cfg.replay.t1, dt);

  cfg.scenario.leader_mode = env::LeaderMode::kTraceReplay;
  cfg.scenario.episode_steps = static_cast<int>(profile.velocity.size());
  cfg.scenario.perturbation.enabled = false;
  const auto seed = cfg.seeds.front();
  std::vector<nn::NetParams> nets;
  if (!cfg.replay.checkpoint_dir.empty()) {
    nets = load_nets(cfg.replay.checkpoint_dir);
    cfg.scenario.n_vehicles = static_cast<int>(nets.size()) + 1;
  } else {
    nets = train::initial_nets(cfg.train_config(seed), agent_count(cfg));
  }
  cfg.validate();
  const auto dir = prepare_output(cfg);
  data::write_profile_csv(dir / "leader_profile.csv", profile);

  const auto problem = cfg.problem(seed);
  env::PlatoonEnv environment(problem.scenario, problem.reward, problem.vehicle, problem.ovm,
                              cfg.train.obs_mode, profile.velocity);
  std::vector<train::RolloutRow> rows;
  const auto stats = train::run_greedy_episode(nets, environment, seed, &rows);
  train::write_rollout(dir / "rollout.csv", rows);
  write_replay_summary(dir / "replay_summary.csv", rows, dt);
  std::cout << fmt::format(
      "replay window={}:{} samples={} steps={} ivs_mean={:.3f} power_mean_kw={:.3f} "
      "energy_kwh={:.4f} collisions={}\n",
      cfg.replay.t0, cfg.replay.t1, profile.velocity.size(), stats.steps, stats.ivs_mean,
      stats.power_mean_kw, stats.energy_kwh, stats.collisions);
  return kExitOk;
}

int cmd_consensus_bench(const Flags& flags) {
  const auto cfg = resolve_config(flags);
  const auto dir = prepare_output(cfg);
  const auto n = static_cast<std::size_t>(cfg.scenario.n_vehicles);
  if (flags.rounds < 0 || flags.dim < 1) throw ConfigError("--rounds must be >= 0, --dim >= 1");
  const auto graph = consensus::NeighborGraph::line(n);
  const auto dim = static_cast<std::size_t>(flags.dim);

  Rng rng(mix_seed(cfg.seeds.front(), 0xBE7C));
  consensus::AgentVectors initial(n, std::vector<double>(dim));
  for (auto& w : initial) {
    for (auto& x : w) x = rng.uniform(-0.5, 0.5);
  }

  std::ofstream out(dir / "consensus_bench.csv");
  out << "round,protocol,spread,bits_cumulative\n";
  consensus::ConsensusConfig ccfg = cfg.train.consensus;
  for (auto protocol : {consensus::Protocol::kBdc, consensus::Protocol::kWac,
                        consensus::Protocol::kDcea}) {
    ccfg.protocol = protocol;
    auto w = initial;
    std::uint64_t bits = 0;
    const auto per_round = consensus::comm_bits(protocol, dim, graph);
    out << fmt::format("0,{},{:.9g},0\n", consensus::to_string(protocol), consensus::spread(w));
    for (int r = 1; r <= flags.rounds; ++r) {
      w = consensus::apply(ccfg, w, graph);
      bits += per_round;
      out << fmt::format("{},{},{:.9g},{}\n", r, consensus::to_string(protocol),
                         consensus::spread(w), bits);
    }
  }
  out.flush();
  if (!out) throw std::runtime_error("failed writing consensus_bench.csv");

  // Error-feedback ternary descent on 0.5 (w - 3)^2 from w = 0.
  std::ofstream q(dir / "qsgd_bench.csv");
  q << "step,w,residual,distance\n";
  std::vector<double> w{0.0};
  auto ef = consensus::EfState::zeros(1);
  q << fmt::format("0,{:.9g},{:.9g},{:.9g}\n", w[0], 0.0, std::abs(w[0] - 3.0));
  for (int t = 1; t <= 400; ++t) {
    const std::vector<double> grad{w[0] - 3.0};
    auto step = consensus::qsgd_step(w, grad, ef, 0.05, cfg.train.consensus.threshold);
    w = step.weights;
    ef = step.ef;
    q << fmt::format("{},{:.9g},{:.9g},{:.9g}\n", t, w[0], ef.residual[0], std::abs(w[0] - 3.0));
  }
  q.flush();
  if (!q) throw std::runtime_error("failed writing qsgd_bench.csv");
  std::cout << fmt::format("consensus-bench agents={} dim={} rounds={} -> {}\n", n, dim,
                           flags.rounds, (dir / "consensus_bench.csv").string());
  return kExitOk;
}

int cmd_compare(const Flags& flags) {
  const auto cfg = resolve_config(flags);
  const auto dir = prepare_output(cfg);
  std::vector<consensus::Protocol> protocols;
  std::istringstream list(flags.protocols);
  std::string name;
  while (std::getline(list, name, ',')) protocols.push_back(consensus::protocol_from_string(name));
  const auto seed = cfg.seeds.front();
  const auto runs = train::compare_protocols(cfg.train_config(seed), cfg.problem(seed), protocols);
  for (const auto& run : runs) {
    train::write_train_log(dir / fmt::format("train_log_{}.csv", consensus::to_string(run.protocol)),
                           run.result.log);
  }
  train::write_protocol_table(dir / "protocol_comparison.csv", runs);
  std::cout << fmt::format("compare protocols={} seed={} -> {}\n", flags.protocols, seed,
                           (dir / "protocol_comparison.csv").string());
  return kExitOk;
}

int cmd_sweep_size(const Flags& flags) {
  auto cfg = resolve_config(flags);
  const auto dir = prepare_output(cfg);
  const auto seed = cfg.seeds.front();
  std::ofstream out(dir / "sweep_size.csv");
  out << "n_vehicles,episodes,head_mean_reward,tail_mean_reward,comm_bits_cum,ivs_mean_m,"
         "velocity_mean_mps,accel_mean_mps2,power_mean_kw,energy_kwh,collisions\n";
  for (int n : {2, 4, 6, 8}) {
    cfg.scenario.n_vehicles = n;
    cfg.validate();
    const auto tcfg = cfg.train_config(seed);
    const auto problem = cfg.problem(seed);
    const auto result = train::train(tcfg, problem);
    if (result.aborted) throw NumericError(result.diagnostic);
    train::write_train_log(dir / fmt::format("train_log_n{}.csv", n), result.log);
    const auto report = train::evaluate(result.nets, problem, tcfg.obs_mode, tcfg.eval_seeds);
    const auto& a = report.aggregate;
    out << fmt::format("{},{},{:.6f},{:.6f},{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{}\n", n,
                       result.log.size(), train::head_mean_reward(result.log),
                       train::tail_mean_reward(result.log),
                       result.log.empty() ? 0 : result.log.back().comm_bits_cum, a.ivs_mean,
                       a.velocity_mean, a.accel_mean, a.power_mean_kw, a.energy_kwh,
                       a.collisions);
    std::cout << fmt::format("sweep n={} episodes={} tail_reward={:.3f} collisions={}\n", n,
                             result.log.size(), train::tail_mean_reward(result.log), a.collisions);
  }
  out.flush();
  if (!out) throw std::runtime_error("failed writing sweep_size.csv");
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Multi-agent CACC platoon training and analysis"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags f;
  app.add_option("--config", f.config, "JSON run config");
  app.add_option("--output-dir", f.output_dir, "Output directory (else config, else $CACC_OUTPUT_DIR)");
  app.add_option("--seed", f.seed, "Single seed overriding config seeds");
  app.add_option("--protocol", f.protocol, "Consensus protocol: none|bdc|wac|dcea");
  app.add_option("--steps", f.steps, "Total training env steps");
  app.add_option("--n-vehicles", f.n_vehicles, "Platoon size");
  app.add_option("--obs-mode", f.obs_mode, "Observation mode: ia2c|fprint");
  app.add_option("--trace", f.trace, "Trace CSV for replay");
  app.add_option("--window", f.window, "Replay window t0:t1 in seconds");
  app.add_option("--leader-col", f.leader_col, "Trace column replayed as leader");
  app.add_option("--grid", f.grid, "Energy-fit grid NVxNU");
  app.add_option("--eval-seeds", f.eval_seeds, "Number of evaluation seeds");
  app.add_option("--checkpoint-dir", f.checkpoint_dir, "Directory with agent_<i>.ckpt files");

  auto* fit = app.add_subcommand("fit-energy", "Fit the polynomial power surrogate");
  auto* train_cmd = app.add_subcommand("train", "Train agents");
  auto* eval = app.add_subcommand("eval", "Greedy evaluation over seeds");
  auto* replay = app.add_subcommand("replay", "Follow a replayed leader trace");
  auto* bench = app.add_subcommand("consensus-bench", "Consensus/quantizer experiments");
  bench->add_option("--rounds", f.rounds, "Consensus rounds");
  bench->add_option("--dim", f.dim, "Parameters per agent");
  auto* compare = app.add_subcommand("compare", "Train once per protocol and compare");
  compare->add_option("--protocols", f.protocols, "Comma-separated protocol list");
  auto* sweep = app.add_subcommand("sweep-size", "Train and evaluate platoon sizes 2,4,6,8");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (fit->parsed()) return cmd_fit_energy(f);
    if (train_cmd->parsed()) return cmd_train(f);
    if (eval->parsed()) return cmd_eval(f);
    if (replay->parsed()) return cmd_replay(f);
    if (bench->parsed()) return cmd_consensus_bench(f);
    if (compare->parsed()) return cmd_compare(f);
    if (sweep->parsed()) return cmd_sweep_size(f);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace cacc::cli
