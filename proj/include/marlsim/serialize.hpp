#ifndef MARLSIM_SERIALIZE_HPP_
#define MARLSIM_SERIALIZE_HPP_

#include <string>

#include "json.hpp"
#include "marlsim/config.hpp"
#include "marlsim/maddpg.hpp"
#include "marlsim/mappo.hpp"
#include "marlsim/metrics.hpp"
#include "marlsim/net.hpp"

namespace marlsim {

using Json = nlohmann::json;

// Readers throw ParseError naming the failing field, e.g.
// "agents[0].critic.layers[1].weights: expected 16384 values, got 12".

Json params_to_json(const MlpParams& p);
MlpParams params_from_json(const Json& j, const std::string& path);

Json adam_to_json(const AdamState& s);
AdamState adam_from_json(const Json& j, const MlpParams& shape, const std::string& path);

Json episode_to_json(const EpisodeMetrics& m);
EpisodeMetrics episode_from_json(const Json& j, const std::string& path);

Json maddpg_agent_to_json(const MaddpgAgent& a);
MaddpgAgent maddpg_agent_from_json(const Json& j, const std::string& path);

Json actor_to_json(const StochasticActor& a);
StochasticActor actor_from_json(const Json& j, const std::string& path);

Json rollout_step_to_json(const RolloutStep& s);
RolloutStep rollout_step_from_json(const Json& j, const std::string& path);

Json run_config_to_json(const RunConfig& c);
RunConfig run_config_from_json(const Json& j, const std::string& path);

}  // namespace marlsim

#endif  // MARLSIM_SERIALIZE_HPP_
