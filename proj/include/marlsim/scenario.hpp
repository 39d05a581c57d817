#ifndef MARLSIM_SCENARIO_HPP_
#define MARLSIM_SCENARIO_HPP_

#include <string>
#include <string_view>
#include <vector>

#include "marlsim/geometry.hpp"

namespace marlsim {

using LaneId = int;

struct Lane {
  LaneId id = 0;
  std::vector<Vec2> centerline;
  double width = 3.5;
  std::vector<LaneId> successors;
  double speed_limit = 13.9;
};

struct SpawnSpec {
  LaneId lane = 0;
  double s = 0.0;      // m along the lane
  double speed = 0.0;  // m/s
};

struct GoalSpec {
  LaneId lane = 0;
  double s = 0.0;
  double radius = 3.0;
};

// Spawn i pairs with goal i: agent i starts at spawns[i] and drives to goals[i].
struct Scenario {
  std::string name;
  std::vector<Lane> lanes;
  std::vector<SpawnSpec> spawns;
  std::vector<GoalSpec> goals;
  double dt = 0.1;
  int max_steps = 300;

  const Lane& lane(LaneId id) const;
  bool has_lane(LaneId id) const;
};

// Parses the JSON scenario format and validates every invariant.
// Throws ParseError (with line) or ValidationError (naming the invariant).
Scenario load_scenario(std::string_view source);

// Names accepted by builtin_scenario().
std::vector<std::string> builtin_scenario_names();
bool is_builtin_scenario(std::string_view name);
Scenario builtin_scenario(std::string_view name);

// Resolve a built-in name or read a scenario file.
Scenario resolve_scenario(const std::string& name_or_path);

std::string dump_scenario(const Scenario& scenario);

void validate_scenario(const Scenario& scenario);

}  // namespace marlsim

#endif  // MARLSIM_SCENARIO_HPP_
