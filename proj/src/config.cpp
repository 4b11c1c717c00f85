#include "cacc/config.hpp"

#include <fstream>
#include <set>

#include "cacc/errors.hpp"

namespace cacc::config {

using nlohmann::json;

namespace {

// Reads keys of one JSON object, rejecting unknown ones on finish().
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where("") + " must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + " has the wrong type");
    }
  }

  template <typename Enum, typename Parse>
  void read_enum(const char* key, Enum& out, Parse parse) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if (!j_.at(key).is_string()) throw ConfigError(where(key) + " must be a string");
    out = parse(j_.at(key).get<std::string>());
  }

  Section child(const char* key) {
    seen_.insert(key);
    static const json kEmpty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : kEmpty, where(key));
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError("unknown config key " + where(item.key()));
    }
  }

  std::string where(const std::string& key) const {
    if (path_.empty()) return key.empty() ? "config" : key;
    return key.empty() ? path_ : path_ + "." + key;
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

void RunConfig::validate() const {
  vehicle.validate();
  ovm.validate();
  scenario.validate(ovm);
  reward.validate();
  train.validate();
  if (seeds.empty()) throw ConfigError("seeds must contain at least one seed");
  if (energy_grid.velocity_points < 1 || energy_grid.accel_points < 1) {
    throw ConfigError("energy_grid point counts must be >= 1");
  }
}

train::Problem RunConfig::problem(std::uint64_t seed) const {
  train::Problem p{scenario, reward, vehicle, ovm};
  p.scenario.seed = seed;
  return p;
}

train::TrainConfig RunConfig::train_config(std::uint64_t seed) const {
  train::TrainConfig t = train;
  t.seed = seed;
  return t;
}

json to_json(const RunConfig& c) {
  const auto& s = c.scenario;
  const auto& t = c.train;
  return json{
      {"output_dir", c.output_dir},
      {"seeds", c.seeds},
      {"scenario",
       {{"n_vehicles", s.n_vehicles},
        {"d_star", s.d_star},
        {"v_star", s.v_star},
        {"dt", s.dt},
        {"episode_steps", s.episode_steps},
        {"leader_mode", env::to_string(s.leader_mode)},
        {"perturbation",
         {{"enabled", s.perturbation.enabled},
          {"start", s.perturbation.start},
          {"depth", s.perturbation.depth},
          {"duration", s.perturbation.duration}}},
        {"init_spacing_jitter", s.init_spacing_jitter},
        {"init_velocity_jitter", s.init_velocity_jitter}}},
      {"train",
       {{"total_steps", t.total_steps},
        {"gamma", t.gamma},
        {"actor_lr", t.actor_lr},
        {"critic_lr", t.critic_lr},
        {"entropy_coeff", t.entropy_coeff},
        {"grad_clip", t.grad_clip},
        {"obs_mode", env::to_string(t.obs_mode)},
        {"eval_seeds", t.eval_seeds},
        {"checkpoint_every", t.checkpoint_every},
        {"hidden", t.hidden},
        {"shared_init", t.shared_init},
        {"optimizer", train::to_string(t.optimizer)},
        {"reward_scale", t.reward_scale},
        {"record_wall_time", t.record_wall_time},
        {"consensus",
         {{"protocol", consensus::to_string(t.consensus.protocol)},
          {"epsilon", t.consensus.epsilon},
          {"period", t.consensus.period},
          {"threshold", t.consensus.threshold}}}}},
      {"reward",
       {{"w1", c.reward.w1},
        {"w2", c.reward.w2},
        {"w3", c.reward.w3},
        {"w4", c.reward.w4},
        {"w5", c.reward.w5},
        {"d_safe", c.reward.d_safe},
        {"collision_penalty", c.reward.collision_penalty},
        {"power_norm", c.reward.power_norm}}},
      {"vehicle",
       {{"mass", c.vehicle.mass},
        {"rolling_coeff", c.vehicle.rolling_coeff},
        {"air_density", c.vehicle.air_density},
        {"drag_coeff", c.vehicle.drag_coeff},
        {"frontal_area", c.vehicle.frontal_area},
        {"gravity", c.vehicle.gravity},
        {"wheel_radius", c.vehicle.wheel_radius},
        {"gear_ratio", c.vehicle.gear_ratio},
        {"motor_efficiency", c.vehicle.motor_efficiency}}},
      {"ovm",
       {{"alpha", c.ovm.alpha},
        {"beta", c.ovm.beta},
        {"d_stop", c.ovm.d_stop},
        {"d_go", c.ovm.d_go},
        {"v_max", c.ovm.v_max}}},
      {"energy_grid",
       {{"velocity_points", c.energy_grid.velocity_points},
        {"accel_points", c.energy_grid.accel_points}}},
      {"replay",
       {{"trace", c.replay.trace},
        {"t0", c.replay.t0},
        {"t1", c.replay.t1},
        {"leader_col", c.replay.leader_col},
        {"checkpoint_dir", c.replay.checkpoint_dir}}},
  };
}

RunConfig from_json(const json& j) {
  RunConfig c;
  Section root(j, "");
  root.read("output_dir", c.output_dir);
  root.read("seeds", c.seeds);

  {
    auto s = root.child("scenario");
    auto& sc = c.scenario;
    s.read("n_vehicles", sc.n_vehicles);
    s.read("d_star", sc.d_star);
    s.read("v_star", sc.v_star);
    s.read("dt", sc.dt);
    s.read("episode_steps", sc.episode_steps);
    s.read_enum("leader_mode", sc.leader_mode, env::leader_mode_from_string);
    {
      auto p = s.child("perturbation");
      p.read("enabled", sc.perturbation.enabled);
      p.read("start", sc.perturbation.start);
      p.read("depth", sc.perturbation.depth);
      p.read("duration", sc.perturbation.duration);
      p.finish();
    }
    s.read("init_spacing_jitter", sc.init_spacing_jitter);
    s.read("init_velocity_jitter", sc.init_velocity_jitter);
    s.finish();
  }
  {
    auto s = root.child("train");
    auto& t = c.train;
    s.read("total_steps", t.total_steps);
    s.read("gamma", t.gamma);
    s.read("actor_lr", t.actor_lr);
    s.read("critic_lr", t.critic_lr);
    s.read("entropy_coeff", t.entropy_coeff);
    s.read("grad_clip", t.grad_clip);
    s.read_enum("obs_mode", t.obs_mode, env::obs_mode_from_string);
    s.read("eval_seeds", t.eval_seeds);
    s.read("checkpoint_every", t.checkpoint_every);
    s.read("hidden", t.hidden);
    s.read("shared_init", t.shared_init);
    s.read_enum("optimizer", t.optimizer, train::local_optimizer_from_string);
    s.read("reward_scale", t.reward_scale);
    s.read("record_wall_time", t.record_wall_time);
    {
      auto k = s.child("consensus");
      k.read_enum("protocol", t.consensus.protocol, consensus::protocol_from_string);
      k.read("epsilon", t.consensus.epsilon);
      k.read("period", t.consensus.period);
      k.read("threshold", t.consensus.threshold);
      k.finish();
    }
    s.finish();
  }
  {
    auto s = root.child("reward");
    auto& r = c.reward;
    s.read("w1", r.w1);
    s.read("w2", r.w2);
    s.read("w3", r.w3);
    s.read("w4", r.w4);
    s.read("w5", r.w5);
    s.read("d_safe", r.d_safe);
    s.read("collision_penalty", r.collision_penalty);
    s.read("power_norm", r.power_norm);
    s.finish();
  }
  {
    auto s = root.child("vehicle");
    auto& v = c.vehicle;
    s.read("mass", v.mass);
    s.read("rolling_coeff", v.rolling_coeff);
    s.read("air_density", v.air_density);
    s.read("drag_coeff", v.drag_coeff);
    s.read("frontal_area", v.frontal_area);
    s.read("gravity", v.gravity);
    s.read("wheel_radius", v.wheel_radius);
    s.read("gear_ratio", v.gear_ratio);
    s.read("motor_efficiency", v.motor_efficiency);
    s.finish();
  }
  {
    auto s = root.child("ovm");
    s.read("alpha", c.ovm.alpha);
    s.read("beta", c.ovm.beta);
    s.read("d_stop", c.ovm.d_stop);
    s.read("d_go", c.ovm.d_go);
    s.read("v_max", c.ovm.v_max);
    s.finish();
  }
  {
    auto s = root.child("energy_grid");
    s.read("velocity_points", c.energy_grid.velocity_points);
    s.read("accel_points", c.energy_grid.accel_points);
    s.finish();
  }
  {
    auto s = root.child("replay");
    s.read("trace", c.replay.trace);
    s.read("t0", c.replay.t0);
    s.read("t1", c.replay.t1);
    s.read("leader_col", c.replay.leader_col);
    s.read("checkpoint_dir", c.replay.checkpoint_dir);
    s.finish();
  }
  root.finish();
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

void save_config(const std::filesystem::path& path, const RunConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << to_json(cfg).dump(2) << '\n';
  out.flush();
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace cacc::config
