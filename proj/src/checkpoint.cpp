#include "marlsim/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "marlsim/errors.hpp"
#include "marlsim/serialize.hpp"

namespace fs = std::filesystem;

namespace marlsim {

namespace {

constexpr const char* kFormat = "marlsim.checkpoint";

Json header(const RunConfig& config, std::int64_t episode, std::int64_t env_steps) {
  return {{"format", kFormat},
          {"version", kCheckpointVersion},
          {"algo", algo_name(config.algo)},
          {"config_digest", config_digest(config)},
          {"scenario_digest", scenario_digest(config.scenario)},
          {"config", run_config_to_json(config)},
          {"episode", episode},
          {"env_steps", env_steps}};
}

void write_atomically(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(file.parent_path(), ec);
    if (ec) throw IoError("cannot create " + file.parent_path().string() + ": " + ec.message());
  }
  const fs::path tmp = file.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + tmp.string());
    os << text;
    os.flush();
    if (!os) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, file, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + file.string() + ": " + ec.message());
}

Json history_json(const std::vector<EpisodeMetrics>& history) {
  Json out = Json::array();
  for (const auto& m : history) out.push_back(episode_to_json(m));
  return out;
}

std::vector<EpisodeMetrics> history_from(const Json& doc) {
  auto it = doc.find("history");
  if (it == doc.end() || !it->is_array()) throw ParseError("history: expected an array");
  std::vector<EpisodeMetrics> out;
  for (std::size_t i = 0; i < it->size(); ++i) {
    out.push_back(episode_from_json((*it)[i], "history[" + std::to_string(i) + "]"));
  }
  return out;
}

Json read_document(const fs::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + file.string());
  std::stringstream ss;
  ss << is.rdbuf();
  Json doc;
  try {
    doc = Json::parse(ss.str());
  } catch (const Json::parse_error& e) {
    throw ParseError("checkpoint " + file.string() + ": " + e.what());
  }
  if (!doc.is_object() || doc.value("format", "") != kFormat) {
    throw ParseError("format: " + file.string() + " is not a checkpoint");
  }
  auto v = doc.find("version");
  if (v == doc.end() || !v->is_number_integer()) throw ParseError("version: missing");
  if (v->get<int>() != kCheckpointVersion) {
    throw ParseError("version: checkpoint version " + std::to_string(v->get<int>()) + " is not supported (expected " +
                     std::to_string(kCheckpointVersion) + ")");
  }
  return doc;
}

const Json& field(const Json& doc, const std::string& key) {
  auto it = doc.find(key);
  if (it == doc.end()) throw ParseError(key + ": missing");
  return *it;
}

std::int64_t int_field(const Json& doc, const std::string& key) {
  const Json& v = field(doc, key);
  if (!v.is_number_integer()) throw ParseError(key + ": expected an integer");
  return v.get<std::int64_t>();
}

CheckpointMeta meta_from(const Json& doc) {
  CheckpointMeta m;
  m.version = kCheckpointVersion;
  try {
    m.algo = parse_algo(field(doc, "algo").get<std::string>());
  } catch (const std::exception& e) {
    throw ParseError(std::string("algo: ") + e.what());
  }
  if (!field(doc, "config_digest").is_string()) throw ParseError("config_digest: expected a string");
  if (!field(doc, "scenario_digest").is_string()) throw ParseError("scenario_digest: expected a string");
  m.config_digest = field(doc, "config_digest").get<std::string>();
  m.scenario_digest = field(doc, "scenario_digest").get<std::string>();
  m.config = run_config_from_json(field(doc, "config"), "config");
  if (m.config.algo != m.algo) throw ParseError("config.algo: does not match the checkpoint's algo");
  m.episode = int_field(doc, "episode");
  m.env_steps = int_field(doc, "env_steps");
  return m;
}

std::vector<MaddpgAgent> maddpg_agents_from(const Json& doc, std::size_t expected) {
  const Json& arr = field(doc, "agents");
  if (!arr.is_array() || arr.size() != expected) {
    throw ParseError("agents: expected " + std::to_string(expected) + " entries");
  }
  std::vector<MaddpgAgent> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    out.push_back(maddpg_agent_from_json(arr[i], "agents[" + std::to_string(i) + "]"));
  }
  return out;
}

std::vector<StochasticActor> actors_from(const Json& doc, std::size_t expected) {
  const Json& arr = field(doc, "actors");
  if (!arr.is_array() || arr.size() != expected) {
    throw ParseError("actors: expected " + std::to_string(expected) + " entries");
  }
  std::vector<StochasticActor> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    out.push_back(actor_from_json(arr[i], "actors[" + std::to_string(i) + "]"));
  }
  return out;
}

void check_shapes(const std::vector<MaddpgAgent>& loaded, const Maddpg& learner) {
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    if (!loaded[i].actor.same_shape(learner.agents()[i].actor)) {
      throw ParseError("agents[" + std::to_string(i) + "].actor: shape does not match the config");
    }
    if (!loaded[i].critic.same_shape(learner.agents()[i].critic)) {
      throw ParseError("agents[" + std::to_string(i) + "].critic: shape does not match the config");
    }
  }
}

void load_mappo_into(const Json& doc, Mappo& learner) {
  auto actors = actors_from(doc, learner.n_agents());
  for (std::size_t i = 0; i < actors.size(); ++i) {
    if (!actors[i].mean.same_shape(learner.actors()[i].mean)) {
      throw ParseError("actors[" + std::to_string(i) + "].mean: shape does not match the config");
    }
  }
  MlpParams value = params_from_json(field(doc, "value_net"), "value_net");
  if (!value.same_shape(learner.value_net())) throw ParseError("value_net: shape does not match the config");
  AdamState value_opt = adam_from_json(field(doc, "value_opt"), value, "value_opt");
  learner.actors() = std::move(actors);
  learner.value_net() = std::move(value);
  learner.value_opt() = std::move(value_opt);
}

}  // namespace

fs::path replay_sidecar(const fs::path& checkpoint) {
  fs::path p = checkpoint;
  p.replace_extension(".replay");
  return p;
}

void save_checkpoint(const fs::path& file, const RunConfig& config, const MaddpgTrainer& trainer) {
  Json doc = header(config, trainer.episode(), trainer.env_steps());
  Json agents = Json::array();
  for (const auto& a : trainer.learner().agents()) agents.push_back(maddpg_agent_to_json(a));
  doc["agents"] = agents;
  const BufferStats st = trainer.buffer().stats();
  doc["buffer"] = {{"size", st.size},          {"capacity", st.capacity},       {"max_priority", st.max_priority},
                   {"max_td_seen", st.max_td_seen}, {"inserted", st.inserted}, {"stale_skips", st.stale_skips}};
  doc["replay_file"] = replay_sidecar(file).filename().string();
  doc["rng"] = trainer.rng().state();
  doc["history"] = history_json(trainer.history());

  std::ostringstream replay(std::ios::binary);
  trainer.buffer().save(replay);
  write_atomically(replay_sidecar(file), replay.str());
  write_atomically(file, doc.dump(1) + "\n");
}

void save_checkpoint(const fs::path& file, const RunConfig& config, const MappoTrainer& trainer) {
  Json doc = header(config, trainer.episode(), trainer.env_steps());
  Json actors = Json::array();
  for (const auto& a : trainer.learner().actors()) actors.push_back(actor_to_json(a));
  doc["actors"] = actors;
  doc["value_net"] = params_to_json(trainer.learner().value_net());
  doc["value_opt"] = adam_to_json(trainer.learner().value_opt());
  Json rollout = Json::array();
  for (const auto& s : trainer.rollout()) rollout.push_back(rollout_step_to_json(s));
  doc["rollout"] = rollout;
  doc["updates"] = trainer.updates();
  doc["rng"] = trainer.rng().state();
  doc["history"] = history_json(trainer.history());
  write_atomically(file, doc.dump(1) + "\n");
}

CheckpointMeta read_checkpoint_meta(const fs::path& file) { return meta_from(read_document(file)); }

void restore_checkpoint(const fs::path& file, MaddpgTrainer& trainer) {
  const Json doc = read_document(file);
  const CheckpointMeta meta = meta_from(doc);
  if (meta.algo != Algo::kMaddpg) throw ParseError("algo: checkpoint is not a maddpg run");
  auto agents = maddpg_agents_from(doc, trainer.n_agents());
  check_shapes(agents, trainer.learner());
  if (!field(doc, "rng").is_string()) throw ParseError("rng: expected a string");
  Rng rng;
  try {
    rng.set_state(field(doc, "rng").get<std::string>());
  } catch (const std::exception& e) {
    throw ParseError(std::string("rng: ") + e.what());
  }
  auto history = history_from(doc);

  const fs::path sidecar = file.parent_path() / field(doc, "replay_file").get<std::string>();
  std::ifstream is(sidecar, std::ios::binary);
  if (!is) throw IoError("cannot open replay sidecar " + sidecar.string());
  trainer.buffer().load(is);

  trainer.learner().agents() = std::move(agents);
  trainer.rng() = rng;
  trainer.restore(meta.episode, meta.env_steps, std::move(history));
}

void restore_checkpoint(const fs::path& file, MappoTrainer& trainer) {
  const Json doc = read_document(file);
  const CheckpointMeta meta = meta_from(doc);
  if (meta.algo != Algo::kMappo) throw ParseError("algo: checkpoint is not a mappo run");
  load_mappo_into(doc, trainer.learner());
  if (!field(doc, "rng").is_string()) throw ParseError("rng: expected a string");
  try {
    trainer.rng().set_state(field(doc, "rng").get<std::string>());
  } catch (const std::exception& e) {
    throw ParseError(std::string("rng: ") + e.what());
  }
  const Json& rollout = field(doc, "rollout");
  if (!rollout.is_array()) throw ParseError("rollout: expected an array");
  std::vector<RolloutStep> steps;
  for (std::size_t i = 0; i < rollout.size(); ++i) {
    steps.push_back(rollout_step_from_json(rollout[i], "rollout[" + std::to_string(i) + "]"));
    if (steps.back().obs.n_agents != trainer.n_agents()) {
      throw ParseError("rollout[" + std::to_string(i) + "].n_agents: does not match the run");
    }
  }
  trainer.rollout() = std::move(steps);
  trainer.restore(meta.episode, meta.env_steps, int_field(doc, "updates"), history_from(doc));
}

Maddpg load_maddpg_learner(const fs::path& file) {
  const Json doc = read_document(file);
  const CheckpointMeta meta = meta_from(doc);
  if (meta.algo != Algo::kMaddpg) throw ParseError("algo: checkpoint is not a maddpg run");
  Maddpg learner(meta.config.agents, meta.config.maddpg, meta.config.seed);
  auto agents = maddpg_agents_from(doc, learner.n_agents());
  check_shapes(agents, learner);
  learner.agents() = std::move(agents);
  return learner;
}

Mappo load_mappo_learner(const fs::path& file) {
  const Json doc = read_document(file);
  const CheckpointMeta meta = meta_from(doc);
  if (meta.algo != Algo::kMappo) throw ParseError("algo: checkpoint is not a mappo run");
  Mappo learner(meta.config.agents, meta.config.ppo, meta.config.seed);
  load_mappo_into(doc, learner);
  return learner;
}

}  // namespace marlsim
