#ifndef MARLSIM_SIM_HPP_
#define MARLSIM_SIM_HPP_

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "marlsim/geometry.hpp"
#include "marlsim/scenario.hpp"

namespace marlsim {

// Vehicle and sensing constants shared by the simulator and the learners.
struct VehicleLimits {
  static constexpr double kMaxAccel = 4.0;     // m/s^2
  static constexpr double kMaxYawRate = 0.5;   // rad/s
  static constexpr double kMaxSpeed = 20.0;    // m/s
  static constexpr double kDiscRadius = 1.4;   // m
  static constexpr double kOffRoadSlack = 0.5; // m beyond the lane half-width
  static constexpr double kWrongWayTol = 0.5;  // m/s
  static constexpr double kSpeedTol = 0.5;     // m/s
  static constexpr double kObstacleCap = 50.0; // m, reported when nothing is nearby
};

struct ObsLayout {
  static constexpr int kNeighbors = 3;
  static constexpr int kWaypoints = 5;
  static constexpr double kNeighborRange = 50.0; // m
  static constexpr double kLookahead = 25.0;     // m
  static constexpr double kWaypointSpacing = 5.0;
  static constexpr int kEgoBegin = 0;
  static constexpr int kNeighborBegin = 4;
  static constexpr int kWaypointBegin = kNeighborBegin + 3 * kNeighbors;
  static constexpr int kWidth = kWaypointBegin + 2 * kWaypoints;
};
static_assert(ObsLayout::kWidth == 23);

struct VehicleState {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;  // (-pi, pi]
  double speed = 0.0;
  double accel = 0.0;    // last applied
  double yaw_rate = 0.0; // last applied
  LaneId lane_id = 0;
  double arclength = 0.0;
  double route_s = 0.0;  // progress along the agent's precomputed route
  bool crashed = false;
  bool off_road = false; // crash cause
  bool reached_goal = false;

  bool alive() const { return !crashed && !reached_goal; }
  Vec2 position() const { return {x, y}; }
};

struct AgentAction {
  double accel_cmd = 0.0;
  double yaw_cmd = 0.0;
};

struct AgentEvents {
  bool collision = false;  // includes leaving the road
  bool off_road = false;
  bool wrong_way = false;
  bool speed_over_limit = false;
  bool lane_change_violation = false;
  bool goal_reached = false;
  double linear_jerk = 0.0;
  double angular_jerk = 0.0;
  double lane_center_offset = 0.0;
  double min_obstacle_distance = 0.0;

  int rule_violations() const {
    return static_cast<int>(wrong_way) + static_cast<int>(speed_over_limit) +
           static_cast<int>(lane_change_violation);
  }
  bool operator==(const AgentEvents&) const = default;
};

using StepEvents = std::vector<AgentEvents>;

// Row-major n_agents x ObsLayout::kWidth.
struct JointObservation {
  std::size_t n_agents = 0;
  std::vector<double> data;

  std::span<const double> agent(std::size_t i) const {
    return std::span<const double>(data).subspan(i * ObsLayout::kWidth, ObsLayout::kWidth);
  }
  bool operator==(const JointObservation&) const = default;
};

struct SimState {
  std::vector<VehicleState> vehicles;
  int step = 0;
  bool done = false;
  std::uint64_t seed = 0;
};

struct StepResult {
  JointObservation obs;
  std::vector<double> rewards;
  StepEvents events;
  bool done = false;
};

struct Route {
  std::vector<LaneId> lanes;
  Polyline path;       // starts at the spawn point
  double goal_s = 0.0; // route coordinate of the goal point
  Vec2 goal{};
  double goal_radius = 3.0;
};

// Immutable map view with precomputed routes and lane adjacency. Cheap to
// share between rollout workers; all mutable data lives in SimState.
class World {
 public:
  explicit World(Scenario scenario);

  const Scenario& scenario() const { return scenario_; }
  std::size_t max_agents() const { return scenario_.spawns.size(); }
  const Route& route(std::size_t agent) const { return routes_.at(agent); }
  bool adjacent(LaneId a, LaneId b) const;
  bool is_successor(LaneId from, LaneId to) const;

  std::pair<SimState, JointObservation> reset(std::size_t n_agents, std::uint64_t seed) const;
  StepResult step(SimState& state, std::span<const AgentAction> actions) const;
  JointObservation observe(const SimState& state) const;
  StepEvents detect_events(const SimState& before, const SimState& after) const;

  // World-frame waypoints fed to agent i's observation; nullopt when past the route end.
  std::vector<std::optional<Vec2>> waypoints(const SimState& state, std::size_t agent) const;

  // Route progress as a fraction of the spawn-to-goal distance.
  double completion_fraction(const VehicleState& v, std::size_t agent) const;

 private:
  std::size_t lane_index(LaneId id) const;
  void match_lane(VehicleState& v, std::size_t agent) const;
  bool off_road(Vec2 p) const;

  Scenario scenario_;
  std::vector<Polyline> lane_paths_;
  std::vector<std::vector<bool>> adjacency_;
  std::vector<Route> routes_;
};

}  // namespace marlsim

#endif  // MARLSIM_SIM_HPP_
