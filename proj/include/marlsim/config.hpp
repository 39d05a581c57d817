#ifndef MARLSIM_CONFIG_HPP_
#define MARLSIM_CONFIG_HPP_

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "marlsim/maddpg.hpp"
#include "marlsim/mappo.hpp"
#include "marlsim/scenario.hpp"

namespace marlsim {

enum class Algo { kMaddpg, kMappo };

Algo parse_algo(std::string_view name);  // ConfigError "unknown algo" otherwise
std::string algo_name(Algo algo);

struct RunConfig {
  Algo algo = Algo::kMaddpg;
  std::string scenario_name = "merge";
  Scenario scenario;
  std::size_t agents = 2;
  std::uint64_t seed = 1;
  std::int64_t episodes = -1;   // negative: not set
  std::int64_t env_steps = -1;  // negative: not set
  std::int64_t checkpoint_every = 100;
  bool trace = true;
  MaddpgConfig maddpg;
  PpoConfig ppo;
};

// Dotted keys such as "maddpg.batch" or "ppo.clip_eps". Unknown keys are a ConfigError.
void apply_override(RunConfig& config, std::string_view key, std::string_view value);
// Parses "key=value".
void apply_override(RunConfig& config, std::string_view assignment);
std::vector<std::string> override_keys();

// Every effective setting for the run's algorithm, in a fixed order.
std::vector<std::pair<std::string, std::string>> effective_config(const RunConfig& config);
std::string config_echo(const RunConfig& config);
std::string config_digest(const RunConfig& config);
std::string scenario_digest(const Scenario& scenario);

// 64-bit FNV-1a as 16 hex digits.
std::string fnv1a_hex(std::string_view data);

// Range checks plus the algorithm's own validation.
void validate_run_config(const RunConfig& config);

}  // namespace marlsim

#endif  // MARLSIM_CONFIG_HPP_
