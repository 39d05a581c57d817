#include "marlsim/serialize.hpp"

#include "marlsim/errors.hpp"

namespace marlsim {

namespace {

const Json& at(const Json& j, const std::string& key, const std::string& path) {
  if (!j.is_object()) throw ParseError(path + ": expected an object");
  auto it = j.find(key);
  if (it == j.end()) throw ParseError(path + "." + key + ": missing");
  return *it;
}

double num(const Json& j, const std::string& key, const std::string& path) {
  const Json& v = at(j, key, path);
  if (!v.is_number()) throw ParseError(path + "." + key + ": expected a number");
  return v.get<double>();
}

std::int64_t integer(const Json& j, const std::string& key, const std::string& path) {
  const Json& v = at(j, key, path);
  if (!v.is_number_integer()) throw ParseError(path + "." + key + ": expected an integer");
  return v.get<std::int64_t>();
}

std::size_t count(const Json& j, const std::string& key, const std::string& path) {
  const std::int64_t v = integer(j, key, path);
  if (v < 0) throw ParseError(path + "." + key + ": expected a non-negative integer");
  return static_cast<std::size_t>(v);
}

std::string str(const Json& j, const std::string& key, const std::string& path) {
  const Json& v = at(j, key, path);
  if (!v.is_string()) throw ParseError(path + "." + key + ": expected a string");
  return v.get<std::string>();
}

bool boolean(const Json& j, const std::string& key, const std::string& path) {
  const Json& v = at(j, key, path);
  if (!v.is_boolean()) throw ParseError(path + "." + key + ": expected true or false");
  return v.get<bool>();
}

const Json& array(const Json& j, const std::string& key, const std::string& path) {
  const Json& v = at(j, key, path);
  if (!v.is_array()) throw ParseError(path + "." + key + ": expected an array");
  return v;
}

std::vector<double> doubles(const Json& j, const std::string& key, const std::string& path, std::size_t expected) {
  const Json& v = array(j, key, path);
  if (v.size() != expected) {
    throw ParseError(path + "." + key + ": expected " + std::to_string(expected) + " values, got " +
                     std::to_string(v.size()));
  }
  std::vector<double> out;
  out.reserve(expected);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) throw ParseError(path + "." + key + "[" + std::to_string(i) + "]: expected a number");
    out.push_back(v[i].get<double>());
  }
  return out;
}

std::vector<std::uint8_t> flags(const Json& j, const std::string& key, const std::string& path, std::size_t expected) {
  std::vector<std::uint8_t> out;
  for (double d : doubles(j, key, path, expected)) {
    if (d != 0.0 && d != 1.0) throw ParseError(path + "." + key + ": expected 0 or 1 entries");
    out.push_back(static_cast<std::uint8_t>(d));
  }
  return out;
}

std::string index_path(const std::string& path, const std::string& key, std::size_t i) {
  return path + "." + key + "[" + std::to_string(i) + "]";
}

Json tensors_to_json(const std::vector<Tensor2>& ts, const std::vector<std::vector<double>>& bs) {
  Json layers = Json::array();
  for (std::size_t l = 0; l < ts.size(); ++l) {
    layers.push_back({{"shape", {ts[l].rows, ts[l].cols}}, {"weights", ts[l].data}, {"bias", bs[l]}});
  }
  return layers;
}

void tensors_from_json(const Json& j, const std::string& key, const std::string& path, const MlpParams& shape,
                       std::vector<Tensor2>& ts, std::vector<std::vector<double>>& bs) {
  const Json& layers = array(j, key, path);
  if (layers.size() != shape.num_layers()) {
    throw ParseError(path + "." + key + ": expected " + std::to_string(shape.num_layers()) + " layers, got " +
                     std::to_string(layers.size()));
  }
  ts.clear();
  bs.clear();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string lp = index_path(path, key, l);
    const std::size_t rows = shape.weights[l].rows, cols = shape.weights[l].cols;
    const Json& sh = array(layers[l], "shape", lp);
    if (sh.size() != 2 || !sh[0].is_number_integer() || !sh[1].is_number_integer() ||
        sh[0].get<std::size_t>() != rows || sh[1].get<std::size_t>() != cols) {
      throw ParseError(lp + ".shape: expected [" + std::to_string(rows) + ", " + std::to_string(cols) + "]");
    }
    ts.emplace_back(rows, cols, doubles(layers[l], "weights", lp, rows * cols));
    bs.push_back(doubles(layers[l], "bias", lp, rows));
  }
}

}  // namespace

Json params_to_json(const MlpParams& p) {
  return {{"layer_sizes", p.layer_sizes},
          {"output_activation", p.output_activation == Activation::kTanh ? "tanh" : "linear"},
          {"layers", tensors_to_json(p.weights, p.biases)}};
}

MlpParams params_from_json(const Json& j, const std::string& path) {
  const Json& sizes = array(j, "layer_sizes", path);
  std::vector<std::size_t> layer_sizes;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (!sizes[i].is_number_integer() || sizes[i].get<std::int64_t>() < 1) {
      throw ParseError(index_path(path, "layer_sizes", i) + ": expected a positive integer");
    }
    layer_sizes.push_back(sizes[i].get<std::size_t>());
  }
  if (layer_sizes.size() < 2) throw ParseError(path + ".layer_sizes: need at least 2 entries");
  const std::string act = str(j, "output_activation", path);
  if (act != "tanh" && act != "linear") throw ParseError(path + ".output_activation: expected tanh or linear");
  MlpParams p = init_params(layer_sizes, act == "tanh" ? Activation::kTanh : Activation::kLinear, 0);
  tensors_from_json(j, "layers", path, p, p.weights, p.biases);
  return p;
}

Json adam_to_json(const AdamState& s) {
  return {{"step", s.step_count}, {"m", tensors_to_json(s.m_weights, s.m_biases)},
          {"v", tensors_to_json(s.v_weights, s.v_biases)}};
}

AdamState adam_from_json(const Json& j, const MlpParams& shape, const std::string& path) {
  AdamState s;
  s.step_count = integer(j, "step", path);
  if (s.step_count < 0) throw ParseError(path + ".step: expected a non-negative integer");
  tensors_from_json(j, "m", path, shape, s.m_weights, s.m_biases);
  tensors_from_json(j, "v", path, shape, s.v_weights, s.v_biases);
  return s;
}

Json episode_to_json(const EpisodeMetrics& e) {
  return {{"episode", e.episode_id},
          {"n_agents", e.n_agents},
          {"completion", e.completion},
          {"time", e.time},
          {"humanness", e.humanness},
          {"rules", e.rules},
          {"goals", e.goals},
          {"sum_obstacle_distance", e.sum_obstacle_distance},
          {"sum_angular_jerk", e.sum_angular_jerk},
          {"sum_linear_jerk", e.sum_linear_jerk},
          {"sum_lane_offset", e.sum_lane_offset}};
}

EpisodeMetrics episode_from_json(const Json& j, const std::string& path) {
  EpisodeMetrics m;
  m.episode_id = integer(j, "episode", path);
  m.n_agents = count(j, "n_agents", path);
  m.completion = static_cast<int>(integer(j, "completion", path));
  m.time = static_cast<int>(integer(j, "time", path));
  m.humanness = num(j, "humanness", path);
  m.rules = static_cast<int>(integer(j, "rules", path));
  m.goals = static_cast<int>(integer(j, "goals", path));
  m.sum_obstacle_distance = num(j, "sum_obstacle_distance", path);
  m.sum_angular_jerk = num(j, "sum_angular_jerk", path);
  m.sum_linear_jerk = num(j, "sum_linear_jerk", path);
  m.sum_lane_offset = num(j, "sum_lane_offset", path);
  return m;
}

Json maddpg_agent_to_json(const MaddpgAgent& a) {
  return {{"actor", params_to_json(a.actor)},
          {"target_actor", params_to_json(a.target_actor)},
          {"critic", params_to_json(a.critic)},
          {"target_critic", params_to_json(a.target_critic)},
          {"actor_opt", adam_to_json(a.actor_opt)},
          {"critic_opt", adam_to_json(a.critic_opt)},
          {"noise_sigma", a.noise_sigma}};
}

MaddpgAgent maddpg_agent_from_json(const Json& j, const std::string& path) {
  MaddpgAgent a;
  a.actor = params_from_json(at(j, "actor", path), path + ".actor");
  a.target_actor = params_from_json(at(j, "target_actor", path), path + ".target_actor");
  a.critic = params_from_json(at(j, "critic", path), path + ".critic");
  a.target_critic = params_from_json(at(j, "target_critic", path), path + ".target_critic");
  if (!a.target_actor.same_shape(a.actor)) throw ParseError(path + ".target_actor: shape differs from actor");
  if (!a.target_critic.same_shape(a.critic)) throw ParseError(path + ".target_critic: shape differs from critic");
  a.actor_opt = adam_from_json(at(j, "actor_opt", path), a.actor, path + ".actor_opt");
  a.critic_opt = adam_from_json(at(j, "critic_opt", path), a.critic, path + ".critic_opt");
  a.noise_sigma = num(j, "noise_sigma", path);
  return a;
}

Json actor_to_json(const StochasticActor& a) {
  return {{"mean", params_to_json(a.mean)},
          {"log_std", a.log_std},
          {"mean_opt", adam_to_json(a.mean_opt)},
          {"log_std_m", a.log_std_m},
          {"log_std_v", a.log_std_v}};
}

StochasticActor actor_from_json(const Json& j, const std::string& path) {
  StochasticActor a;
  a.mean = params_from_json(at(j, "mean", path), path + ".mean");
  const std::size_t dims = a.mean.output_size();
  a.log_std = doubles(j, "log_std", path, dims);
  for (double ls : a.log_std) {
    if (ls < kMinLogStd || ls > kMaxLogStd) throw ParseError(path + ".log_std: value outside [-5, 1]");
  }
  a.mean_opt = adam_from_json(at(j, "mean_opt", path), a.mean, path + ".mean_opt");
  a.log_std_m = doubles(j, "log_std_m", path, dims);
  a.log_std_v = doubles(j, "log_std_v", path, dims);
  return a;
}

Json rollout_step_to_json(const RolloutStep& s) {
  std::vector<int> active(s.active.begin(), s.active.end()), dones(s.dones.begin(), s.dones.end());
  return {{"n_agents", s.obs.n_agents}, {"obs", s.obs.data},         {"next_obs", s.next_obs.data},
          {"actions", s.actions},       {"log_probs", s.log_probs}, {"rewards", s.rewards},
          {"active", active},           {"dones", dones},           {"episode_end", s.episode_end}};
}

RolloutStep rollout_step_from_json(const Json& j, const std::string& path) {
  RolloutStep s;
  const std::size_t n = count(j, "n_agents", path);
  s.obs.n_agents = n;
  s.obs.data = doubles(j, "obs", path, n * ObsLayout::kWidth);
  s.next_obs.n_agents = n;
  s.next_obs.data = doubles(j, "next_obs", path, n * ObsLayout::kWidth);
  s.actions = doubles(j, "actions", path, n * kActionDim);
  s.log_probs = doubles(j, "log_probs", path, n);
  s.rewards = doubles(j, "rewards", path, n);
  s.active = flags(j, "active", path, n);
  s.dones = flags(j, "dones", path, n);
  s.episode_end = boolean(j, "episode_end", path);
  return s;
}

Json run_config_to_json(const RunConfig& c) {
  Json settings = Json::object();
  for (const auto& [k, v] : effective_config(c)) {
    if (k.rfind("run.", 0) != 0) settings[k] = v;
  }
  return {{"algo", algo_name(c.algo)},
          {"scenario_name", c.scenario_name},
          {"scenario", dump_scenario(c.scenario)},
          {"agents", c.agents},
          {"seed", c.seed},
          {"episodes", c.episodes},
          {"env_steps", c.env_steps},
          {"checkpoint_every", c.checkpoint_every},
          {"trace", c.trace},
          {"settings", settings}};
}

RunConfig run_config_from_json(const Json& j, const std::string& path) {
  RunConfig c;
  try {
    c.algo = parse_algo(str(j, "algo", path));
  } catch (const ConfigError& e) {
    throw ParseError(path + ".algo: " + e.what());
  }
  c.scenario_name = str(j, "scenario_name", path);
  try {
    c.scenario = load_scenario(str(j, "scenario", path));
  } catch (const std::exception& e) {
    throw ParseError(path + ".scenario: " + e.what());
  }
  c.agents = count(j, "agents", path);
  const Json& seed = at(j, "seed", path);
  if (!seed.is_number_unsigned() && !seed.is_number_integer()) throw ParseError(path + ".seed: expected an integer");
  c.seed = seed.get<std::uint64_t>();
  c.episodes = integer(j, "episodes", path);
  c.env_steps = integer(j, "env_steps", path);
  c.checkpoint_every = integer(j, "checkpoint_every", path);
  c.trace = boolean(j, "trace", path);
  const Json& settings = at(j, "settings", path);
  if (!settings.is_object()) throw ParseError(path + ".settings: expected an object");
  for (const auto& [k, v] : settings.items()) {
    if (!v.is_string()) throw ParseError(path + ".settings." + k + ": expected a string");
    try {
      apply_override(c, k, v.get<std::string>());
    } catch (const ConfigError& e) {
      throw ParseError(path + ".settings." + k + ": " + e.what());
    }
  }
  return c;
}

}  // namespace marlsim
