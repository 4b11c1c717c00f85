#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cacc/env.hpp"
#include "cacc/ovm.hpp"
#include "cacc/train.hpp"
#include "cacc/vehicle.hpp"

namespace cacc::config {

struct ReplayConfig {
  std::string trace;              // path to a wide trace CSV
  double t0 = 316.0;              // s
  double t1 = 376.0;              // s
  std::string leader_col = "v1";
  std::string checkpoint_dir;     // optional trained nets
};

/// Complete description of a run. Loaded from a JSON file whose sections
/// mirror the struct fields; every key is optional and unknown keys are
/// rejected.
struct RunConfig {
  env::ScenarioConfig scenario;
  train::TrainConfig train;
  env::RewardWeights reward;
  vehicle::VehicleParams vehicle;
  ovm::OvmParams ovm;
  vehicle::GridSpec energy_grid;
  ReplayConfig replay;
  std::string output_dir;  // empty: fall back to $CACC_OUTPUT_DIR, then "cacc_out"
  std::vector<std::uint64_t> seeds{1, 2, 3};

  void validate() const;

  /// Problem for one seed (scenario.seed set to `seed`).
  train::Problem problem(std::uint64_t seed) const;
  /// Training config for one seed.
  train::TrainConfig train_config(std::uint64_t seed) const;
};

nlohmann::json to_json(const RunConfig& cfg);

/// Throws ConfigError naming the offending key path (e.g. "train.gamma").
RunConfig from_json(const nlohmann::json& j);

RunConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const RunConfig& cfg);

}  // namespace cacc::config
