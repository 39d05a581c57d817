#include "marlsim/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <sstream>

#include "marlsim/errors.hpp"

namespace marlsim {

namespace {

std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}
std::string fmt(std::int64_t v) { return std::to_string(v); }
std::string fmt(std::size_t v) { return std::to_string(v); }
std::string fmt(int v) { return std::to_string(v); }
std::string fmt(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const char* end = text.data() + text.size();
  auto res = std::from_chars(text.data(), end, value);
  if (text.empty() || res.ec != std::errc() || res.ptr != end) {
    throw ConfigError(std::string(key) + ": cannot parse '" + std::string(text) + "'");
  }
  return value;
}

std::vector<std::size_t> parse_sizes(std::string_view key, std::string_view text) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::string_view part = text.substr(start, comma == std::string_view::npos ? text.npos : comma - start);
    out.push_back(parse_number<std::size_t>(key, part));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

struct Entry {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

template <typename T>
Entry field(std::string key, T RunConfig::*group, auto member) {
  Entry e;
  e.key = key;
  e.get = [group, member](const RunConfig& c) { return fmt((c.*group).*member); };
  e.set = [key, group, member](RunConfig& c, std::string_view v) {
    using V = std::remove_cvref_t<decltype((c.*group).*member)>;
    if constexpr (std::is_same_v<V, std::vector<std::size_t>>) {
      (c.*group).*member = parse_sizes(key, v);
    } else {
      (c.*group).*member = parse_number<V>(key, v);
    }
  };
  return e;
}

template <typename T>
Entry per_field(std::string key, T PerConfig::*member) {
  Entry e;
  e.key = key;
  e.get = [member](const RunConfig& c) { return fmt(c.maddpg.per.*member); };
  e.set = [key, member](RunConfig& c, std::string_view v) { c.maddpg.per.*member = parse_number<T>(key, v); };
  return e;
}

Entry weight(std::string key, double EventWeights::*member) {
  Entry e;
  e.key = key;
  e.get = [member](const RunConfig& c) { return fmt(c.maddpg.event_weights.*member); };
  e.set = [key, member](RunConfig& c, std::string_view v) {
    c.maddpg.event_weights.*member = parse_number<double>(key, v);
  };
  return e;
}

const std::vector<Entry>& maddpg_entries() {
  static const std::vector<Entry> entries = {
      field("maddpg.gamma", &RunConfig::maddpg, &MaddpgConfig::gamma),
      field("maddpg.tau", &RunConfig::maddpg, &MaddpgConfig::tau),
      field("maddpg.actor_lr", &RunConfig::maddpg, &MaddpgConfig::actor_lr),
      field("maddpg.critic_lr", &RunConfig::maddpg, &MaddpgConfig::critic_lr),
      field("maddpg.batch", &RunConfig::maddpg, &MaddpgConfig::batch),
      field("maddpg.warmup_steps", &RunConfig::maddpg, &MaddpgConfig::warmup_steps),
      field("maddpg.sigma_0", &RunConfig::maddpg, &MaddpgConfig::sigma_0),
      field("maddpg.sigma_min", &RunConfig::maddpg, &MaddpgConfig::sigma_min),
      field("maddpg.sigma_decay", &RunConfig::maddpg, &MaddpgConfig::sigma_decay),
      field("maddpg.updates_per_env_step", &RunConfig::maddpg, &MaddpgConfig::updates_per_env_step),
      field("maddpg.update_every", &RunConfig::maddpg, &MaddpgConfig::update_every),
      field("maddpg.hidden", &RunConfig::maddpg, &MaddpgConfig::hidden),
      field("maddpg.finetune_fraction", &RunConfig::maddpg, &MaddpgConfig::finetune_fraction),
      per_field("per.capacity", &PerConfig::capacity),
      per_field("per.alpha", &PerConfig::alpha),
      per_field("per.beta_start", &PerConfig::beta_start),
      per_field("per.beta_end", &PerConfig::beta_end),
      per_field("per.eps", &PerConfig::eps),
      weight("events.accident", &EventWeights::accident),
      weight("events.rule", &EventWeights::rule),
      weight("events.jerk", &EventWeights::jerk),
      weight("events.speed", &EventWeights::speed),
      weight("events.completion", &EventWeights::completion),
      weight("events.jerk_norm", &EventWeights::jerk_norm),
  };
  return entries;
}

const std::vector<Entry>& ppo_entries() {
  static const std::vector<Entry> entries = {
      field("ppo.gamma", &RunConfig::ppo, &PpoConfig::gamma),
      field("ppo.gae_lambda", &RunConfig::ppo, &PpoConfig::gae_lambda),
      field("ppo.clip_eps", &RunConfig::ppo, &PpoConfig::clip_eps),
      field("ppo.epochs", &RunConfig::ppo, &PpoConfig::epochs),
      field("ppo.minibatches", &RunConfig::ppo, &PpoConfig::minibatches),
      field("ppo.value_coef", &RunConfig::ppo, &PpoConfig::value_coef),
      field("ppo.entropy_coef", &RunConfig::ppo, &PpoConfig::entropy_coef),
      field("ppo.horizon", &RunConfig::ppo, &PpoConfig::horizon),
      field("ppo.lr", &RunConfig::ppo, &PpoConfig::lr),
      field("ppo.hidden", &RunConfig::ppo, &PpoConfig::hidden),
      field("ppo.init_log_std", &RunConfig::ppo, &PpoConfig::init_log_std),
  };
  return entries;
}

const Entry* find_entry(std::string_view key) {
  for (const auto* table : {&maddpg_entries(), &ppo_entries()}) {
    for (const Entry& e : *table) {
      if (e.key == key) return &e;
    }
  }
  return nullptr;
}

}  // namespace

Algo parse_algo(std::string_view name) {
  if (name == "maddpg") return Algo::kMaddpg;
  if (name == "mappo") return Algo::kMappo;
  throw ConfigError("unknown algo '" + std::string(name) + "' (expected maddpg or mappo)");
}

std::string algo_name(Algo algo) { return algo == Algo::kMaddpg ? "maddpg" : "mappo"; }

void apply_override(RunConfig& config, std::string_view key, std::string_view value) {
  if (key == "run.checkpoint_every") {
    config.checkpoint_every = parse_number<std::int64_t>(key, value);
    return;
  }
  const Entry* e = find_entry(key);
  if (!e) throw ConfigError("unknown override key '" + std::string(key) + "'");
  e->set(config, value);
}

void apply_override(RunConfig& config, std::string_view assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "' is not of the form key=value");
  }
  apply_override(config, assignment.substr(0, eq), assignment.substr(eq + 1));
}

std::vector<std::string> override_keys() {
  std::vector<std::string> keys{"run.checkpoint_every"};
  for (const auto* table : {&maddpg_entries(), &ppo_entries()}) {
    for (const Entry& e : *table) keys.push_back(e.key);
  }
  return keys;
}

std::vector<std::pair<std::string, std::string>> effective_config(const RunConfig& c) {
  std::vector<std::pair<std::string, std::string>> out = {
      {"run.algo", algo_name(c.algo)},
      {"run.scenario", c.scenario_name},
      {"run.scenario_digest", scenario_digest(c.scenario)},
      {"run.agents", fmt(c.agents)},
      {"run.seed", std::to_string(c.seed)},
      {"run.episodes", fmt(c.episodes)},
      {"run.env_steps", fmt(c.env_steps)},
      {"run.checkpoint_every", fmt(c.checkpoint_every)},
      {"run.trace", c.trace ? "true" : "false"},
  };
  const auto& table = c.algo == Algo::kMaddpg ? maddpg_entries() : ppo_entries();
  for (const Entry& e : table) out.emplace_back(e.key, e.get(c));
  return out;
}

std::string config_echo(const RunConfig& config) {
  std::string out;
  for (const auto& [k, v] : effective_config(config)) out += k + " = " + v + "\n";
  return out;
}

std::string fnv1a_hex(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : data) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_digest(const RunConfig& config) { return fnv1a_hex(config_echo(config)); }

std::string scenario_digest(const Scenario& scenario) { return fnv1a_hex(dump_scenario(scenario)); }

void validate_run_config(const RunConfig& c) {
  if (c.agents < 1 || c.agents > c.scenario.spawns.size()) {
    throw ConfigError("agents must be between 1 and " + std::to_string(c.scenario.spawns.size()) +
                      " for scenario '" + c.scenario_name + "'");
  }
  if (c.checkpoint_every < 1) throw ConfigError("run.checkpoint_every must be >= 1");
  if (c.algo == Algo::kMaddpg) {
    if (c.episodes < 0) throw ConfigError("maddpg needs an episode budget (--episodes)");
    if (c.env_steps >= 0) throw ConfigError("maddpg budgets are in episodes; drop --steps");
    c.maddpg.validate();
  } else {
    if (c.episodes < 0 && c.env_steps < 0) throw ConfigError("mappo needs --episodes or --steps");
    c.ppo.validate();
  }
}

}  // namespace marlsim
