#include "marlsim/sim.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <numbers>
#include <string>

#include "marlsim/errors.hpp"

namespace marlsim {

namespace {

using L = VehicleLimits;

double clamp_unit(double v) { return std::clamp(v, -1.0, 1.0); }

// Shortest successor chain by lane count; lower ids expanded first.
std::vector<LaneId> find_route(const Scenario& sc, LaneId from, LaneId to) {
  std::map<LaneId, LaneId> parent;
  std::deque<LaneId> open{from};
  parent[from] = from;
  while (!open.empty()) {
    const LaneId cur = open.front();
    open.pop_front();
    if (cur == to) break;
    auto next = sc.lane(cur).successors;
    std::sort(next.begin(), next.end());
    for (LaneId n : next) {
      if (parent.emplace(n, cur).second) open.push_back(n);
    }
  }
  if (!parent.count(to)) throw ValidationError("no route between lanes");
  std::vector<LaneId> chain{to};
  while (chain.back() != from) chain.push_back(parent.at(chain.back()));
  std::reverse(chain.begin(), chain.end());
  return chain;
}

void append_points(std::vector<Vec2>& out, const std::vector<Vec2>& pts) {
  for (const auto& p : pts) {
    if (out.empty() || distance(out.back(), p) > 1e-9) out.push_back(p);
  }
}

}  // namespace

World::World(Scenario scenario) : scenario_(std::move(scenario)) {
  validate_scenario(scenario_);
  for (const auto& lane : scenario_.lanes) lane_paths_.emplace_back(lane.centerline);

  const std::size_t n = scenario_.lanes.size();
  adjacency_.assign(n, std::vector<bool>(n, false));
  auto side_by_side = [&](std::size_t a, std::size_t b) {
    const Polyline& pa = lane_paths_[a];
    const Polyline& pb = lane_paths_[b];
    const double reach = 0.5 * (scenario_.lanes[a].width + scenario_.lanes[b].width) + 0.25;
    for (double s = 0.0; s <= pa.length(); s += 2.0) {
      const Projection pr = pb.project(pa.point_at(s));
      if (pr.s <= 0.0 || pr.s >= pb.length()) continue;
      if (pr.distance > reach) continue;
      if (std::cos(wrap_angle(pa.heading_at(s) - pr.heading)) > std::cos(0.5)) return true;
    }
    return false;
  };
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      const bool adj = side_by_side(a, b) || side_by_side(b, a);
      adjacency_[a][b] = adjacency_[b][a] = adj;
    }
  }

  for (std::size_t i = 0; i < scenario_.spawns.size(); ++i) {
    const SpawnSpec& sp = scenario_.spawns[i];
    const GoalSpec& g = scenario_.goals[i];
    Route r;
    r.lanes = find_route(scenario_, sp.lane, g.lane);
    std::vector<Vec2> pts;
    double entry = sp.s;
    for (std::size_t k = 0; k < r.lanes.size(); ++k) {
      const Polyline& path = lane_paths_[lane_index(r.lanes[k])];
      if (k > 0) entry = path.project(pts.back()).s;
      if (path.length() - entry > 1e-6) append_points(pts, path.slice(entry, path.length()).points());
    }
    r.path = Polyline(std::move(pts));
    r.goal = lane_paths_[lane_index(g.lane)].point_at(g.s);
    r.goal_s = r.path.project(r.goal).s;
    r.goal_radius = g.radius;
    routes_.push_back(std::move(r));
  }
}

std::size_t World::lane_index(LaneId id) const {
  for (std::size_t i = 0; i < scenario_.lanes.size(); ++i) {
    if (scenario_.lanes[i].id == id) return i;
  }
  throw ValidationError("unknown lane id " + std::to_string(id));
}

bool World::adjacent(LaneId a, LaneId b) const { return adjacency_[lane_index(a)][lane_index(b)]; }

bool World::is_successor(LaneId from, LaneId to) const {
  const auto& succ = scenario_.lane(from).successors;
  return std::find(succ.begin(), succ.end(), to) != succ.end();
}

bool World::off_road(Vec2 p) const {
  for (std::size_t i = 0; i < lane_paths_.size(); ++i) {
    if (lane_paths_[i].project(p).distance <= 0.5 * scenario_.lanes[i].width + L::kOffRoadSlack) return false;
  }
  return true;
}

void World::match_lane(VehicleState& v, std::size_t agent) const {
  const Vec2 p = v.position();
  std::size_t cur = lane_index(v.lane_id);
  Projection pr = lane_paths_[cur].project(p);
  const auto& succ = scenario_.lanes[cur].successors;
  if (pr.past_end && !succ.empty()) {
    // Prefer the route's next lane, then the closest successor.
    const auto& route_lanes = routes_[agent].lanes;
    std::optional<LaneId> pick;
    const auto at = std::find(route_lanes.begin(), route_lanes.end(), v.lane_id);
    if (at != route_lanes.end() && at + 1 != route_lanes.end() && is_successor(v.lane_id, *(at + 1))) {
      pick = *(at + 1);
    } else {
      double best = std::numeric_limits<double>::infinity();
      auto sorted = succ;
      std::sort(sorted.begin(), sorted.end());
      for (LaneId s : sorted) {
        const double d = lane_paths_[lane_index(s)].project(p).distance;
        if (d < best) {
          best = d;
          pick = s;
        }
      }
    }
    cur = lane_index(*pick);
    pr = lane_paths_[cur].project(p);
  } else if (pr.distance > 0.5 * scenario_.lanes[cur].width) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < lane_paths_.size(); ++i) {
      if (i == cur) continue;
      const Projection cand = lane_paths_[i].project(p);
      if (cand.distance <= 0.5 * scenario_.lanes[i].width && cand.distance < best) {
        best = cand.distance;
        cur = i;
        pr = cand;
      }
    }
  }
  v.lane_id = scenario_.lanes[cur].id;
  v.arclength = pr.s;
  v.route_s = routes_[agent].path.project(p).s;
}

std::pair<SimState, JointObservation> World::reset(std::size_t n_agents, std::uint64_t seed) const {
  if (n_agents < 1 || n_agents > max_agents()) {
    throw std::invalid_argument("n_agents must be in [1, " + std::to_string(max_agents()) + "], got " +
                                std::to_string(n_agents));
  }
  SimState state;
  state.seed = seed;
  for (std::size_t i = 0; i < n_agents; ++i) {
    const SpawnSpec& sp = scenario_.spawns[i];
    const Polyline& path = lane_paths_[lane_index(sp.lane)];
    VehicleState v;
    const Vec2 p = path.point_at(sp.s);
    v.x = p.x;
    v.y = p.y;
    v.heading = wrap_angle(path.heading_at(sp.s));
    v.speed = std::clamp(sp.speed, 0.0, L::kMaxSpeed);
    v.lane_id = sp.lane;
    v.arclength = sp.s;
    v.route_s = routes_[i].path.project(p).s;
    state.vehicles.push_back(v);
  }
  JointObservation obs = observe(state);
  return {std::move(state), std::move(obs)};
}

StepResult World::step(SimState& state, std::span<const AgentAction> actions) const {
  if (state.done) throw StateError("step called after the episode is done");
  const std::size_t n = state.vehicles.size();
  if (actions.size() != n) throw std::invalid_argument("expected one action per agent");
  const SimState before = state;
  const double dt = scenario_.dt;

  for (std::size_t i = 0; i < n; ++i) {
    VehicleState& v = state.vehicles[i];
    if (!v.alive()) continue;
    const AgentAction& act = actions[i];
    if (!std::isfinite(act.accel_cmd) || !std::isfinite(act.yaw_cmd)) {
      throw std::invalid_argument("non-finite action for agent " + std::to_string(i));
    }
    const double a = std::clamp(act.accel_cmd, -L::kMaxAccel, L::kMaxAccel);
    const double w = std::clamp(act.yaw_cmd, -L::kMaxYawRate, L::kMaxYawRate);
    v.speed = std::clamp(v.speed + a * dt, 0.0, L::kMaxSpeed);
    v.heading = wrap_angle(v.heading + w * dt);
    v.x += v.speed * std::cos(v.heading) * dt;
    v.y += v.speed * std::sin(v.heading) * dt;
    v.accel = a;
    v.yaw_rate = w;
    match_lane(v, i);
    if (off_road(v.position())) {
      v.crashed = true;
      v.off_road = true;
    }
  }

  // Pairwise disc overlap among vehicles that moved this step.
  for (std::size_t i = 0; i < n; ++i) {
    if (!before.vehicles[i].alive()) continue;
    for (std::size_t j = i + 1; j < n; ++j) {
      if (!before.vehicles[j].alive()) continue;
      if (distance(state.vehicles[i].position(), state.vehicles[j].position()) < 2.0 * L::kDiscRadius) {
        state.vehicles[i].crashed = true;
        state.vehicles[j].crashed = true;
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    VehicleState& v = state.vehicles[i];
    if (!before.vehicles[i].alive() || v.crashed) continue;
    if (distance(v.position(), routes_[i].goal) < routes_[i].goal_radius) v.reached_goal = true;
  }

  StepResult out;
  out.events = detect_events(before, state);
  out.rewards.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!before.vehicles[i].alive()) continue;
    const AgentEvents& e = out.events[i];
    const double progress =
        std::clamp((state.vehicles[i].route_s - before.vehicles[i].route_s) / (dt * L::kMaxSpeed), -1.0, 1.0);
    double r = progress;
    if (e.goal_reached) r += 10.0;
    if (e.collision) r -= 10.0;
    if (e.rule_violations() > 0) r -= 1.0;
    r -= 0.1 * (std::abs(e.linear_jerk) + std::abs(e.angular_jerk)) * dt;
    out.rewards[i] = r;
  }

  ++state.step;
  const bool all_terminal =
      std::none_of(state.vehicles.begin(), state.vehicles.end(), [](const VehicleState& v) { return v.alive(); });
  state.done = all_terminal || state.step >= scenario_.max_steps;
  out.done = state.done;
  out.obs = observe(state);
  return out;
}

StepEvents World::detect_events(const SimState& before, const SimState& after) const {
  const std::size_t n = after.vehicles.size();
  if (before.vehicles.size() != n) throw std::invalid_argument("states have different agent counts");
  const double dt = scenario_.dt;
  StepEvents events(n);
  for (std::size_t i = 0; i < n; ++i) {
    const VehicleState& b = before.vehicles[i];
    const VehicleState& a = after.vehicles[i];
    if (!b.alive()) continue;
    AgentEvents& e = events[i];
    e.collision = a.crashed && !b.crashed;
    e.off_road = a.off_road && !b.off_road;
    e.goal_reached = a.reached_goal && !b.reached_goal;

    const Lane& lane = scenario_.lane(a.lane_id);
    const Projection pr = lane_paths_[lane_index(a.lane_id)].project(a.position());
    e.wrong_way = a.speed * std::cos(a.heading - pr.heading) < -L::kWrongWayTol;
    e.speed_over_limit = a.speed > lane.speed_limit + L::kSpeedTol;
    e.lane_change_violation =
        a.lane_id != b.lane_id && !is_successor(b.lane_id, a.lane_id) && !adjacent(b.lane_id, a.lane_id);
    e.linear_jerk = (a.accel - b.accel) / dt;
    e.angular_jerk = (a.yaw_rate - b.yaw_rate) / dt;
    e.lane_center_offset = pr.distance;

    double nearest = L::kObstacleCap;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || !before.vehicles[j].alive()) continue;
      const double gap = distance(a.position(), after.vehicles[j].position()) - 2.0 * L::kDiscRadius;
      nearest = std::min(nearest, std::max(0.0, gap));
    }
    e.min_obstacle_distance = nearest;
  }
  return events;
}

std::vector<std::optional<Vec2>> World::waypoints(const SimState& state, std::size_t agent) const {
  const Route& r = routes_.at(agent);
  const double s0 = state.vehicles.at(agent).route_s;
  std::vector<std::optional<Vec2>> out;
  for (int k = 1; k <= ObsLayout::kWaypoints; ++k) {
    const double s = s0 + ObsLayout::kWaypointSpacing * k;
    if (s > r.path.length()) {
      out.emplace_back(std::nullopt);
    } else {
      out.emplace_back(r.path.point_at(s));
    }
  }
  return out;
}

double World::completion_fraction(const VehicleState& v, std::size_t agent) const {
  const Route& r = routes_.at(agent);
  return r.goal_s > 0.0 ? v.route_s / r.goal_s : 1.0;
}

JointObservation World::observe(const SimState& state) const {
  const std::size_t n = state.vehicles.size();
  JointObservation obs;
  obs.n_agents = n;
  obs.data.assign(n * ObsLayout::kWidth, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const VehicleState& v = state.vehicles[i];
    double* f = obs.data.data() + i * ObsLayout::kWidth;
    const std::size_t li = lane_index(v.lane_id);
    const Projection pr = lane_paths_[li].project(v.position());
    const double half_width = 0.5 * scenario_.lanes[li].width;
    const Route& r = routes_[i];

    f[0] = clamp_unit(v.speed / L::kMaxSpeed);
    f[1] = clamp_unit(wrap_angle(v.heading - pr.heading) / std::numbers::pi);
    f[2] = clamp_unit(pr.lateral / half_width);
    f[3] = clamp_unit(r.goal_s > 0.0 ? (r.goal_s - v.route_s) / r.goal_s : 0.0);

    // K nearest live neighbours, distance then index.
    std::vector<std::pair<double, std::size_t>> others;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || !state.vehicles[j].alive()) continue;
      others.emplace_back(distance(v.position(), state.vehicles[j].position()), j);
    }
    std::sort(others.begin(), others.end());
    for (std::size_t k = 0; k < others.size() && k < static_cast<std::size_t>(ObsLayout::kNeighbors); ++k) {
      const VehicleState& o = state.vehicles[others[k].second];
      const Vec2 rel = to_ego_frame(v.position(), v.heading, o.position());
      double* nb = f + ObsLayout::kNeighborBegin + 3 * k;
      nb[0] = clamp_unit(rel.x / ObsLayout::kNeighborRange);
      nb[1] = clamp_unit(rel.y / ObsLayout::kNeighborRange);
      nb[2] = clamp_unit((o.speed - v.speed) / L::kMaxSpeed);
    }

    const auto wps = waypoints(state, i);
    for (std::size_t k = 0; k < wps.size(); ++k) {
      if (!wps[k]) continue;
      const Vec2 rel = to_ego_frame(v.position(), v.heading, *wps[k]);
      f[ObsLayout::kWaypointBegin + 2 * k] = clamp_unit(rel.x / ObsLayout::kLookahead);
      f[ObsLayout::kWaypointBegin + 2 * k + 1] = clamp_unit(rel.y / ObsLayout::kLookahead);
    }
  }
  return obs;
}

}  // namespace marlsim
