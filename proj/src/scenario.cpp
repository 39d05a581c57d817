#include "marlsim/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "marlsim/errors.hpp"

namespace marlsim {

using nlohmann::json;

const Lane& Scenario::lane(LaneId id) const {
  for (const auto& l : lanes) {
    if (l.id == id) return l;
  }
  throw ValidationError("unknown lane id " + std::to_string(id));
}

bool Scenario::has_lane(LaneId id) const {
  return std::any_of(lanes.begin(), lanes.end(), [id](const Lane& l) { return l.id == id; });
}

namespace {

double lane_length(const Lane& lane) {
  double len = 0.0;
  for (std::size_t i = 1; i < lane.centerline.size(); ++i) {
    len += distance(lane.centerline[i - 1], lane.centerline[i]);
  }
  return len;
}

bool has_route(const Scenario& sc, LaneId from, LaneId to) {
  std::set<LaneId> seen{from};
  std::deque<LaneId> open{from};
  while (!open.empty()) {
    const LaneId cur = open.front();
    open.pop_front();
    if (cur == to) return true;
    for (LaneId next : sc.lane(cur).successors) {
      if (seen.insert(next).second) open.push_back(next);
    }
  }
  return false;
}

const json& field(const json& obj, const char* key, const std::string& path) {
  if (!obj.is_object()) throw ParseError(path + ": expected an object");
  const auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(path + "." + key + ": missing field");
  return *it;
}

double number(const json& obj, const char* key, const std::string& path) {
  const json& v = field(obj, key, path);
  if (!v.is_number()) throw ParseError(path + "." + key + ": expected a number");
  return v.get<double>();
}

double number_or(const json& obj, const char* key, const std::string& path, double fallback) {
  return obj.contains(key) ? number(obj, key, path) : fallback;
}

int integer(const json& obj, const char* key, const std::string& path) {
  const json& v = field(obj, key, path);
  if (!v.is_number_integer()) throw ParseError(path + "." + key + ": expected an integer");
  return v.get<int>();
}

const json& array(const json& obj, const char* key, const std::string& path) {
  const json& v = field(obj, key, path);
  if (!v.is_array()) throw ParseError(path + "." + key + ": expected an array");
  return v;
}

int line_of(std::string_view source, std::size_t byte) {
  byte = std::min(byte, source.size());
  return 1 + static_cast<int>(std::count(source.begin(), source.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

}  // namespace

void validate_scenario(const Scenario& sc) {
  if (sc.lanes.empty()) throw ValidationError("scenario has no lanes");
  if (!(sc.dt > 0.0)) throw ValidationError("dt must be > 0");
  if (sc.max_steps < 1) throw ValidationError("max_steps must be >= 1");
  std::set<LaneId> ids;
  for (const auto& lane : sc.lanes) {
    const std::string tag = "lane " + std::to_string(lane.id);
    if (!ids.insert(lane.id).second) throw ValidationError("duplicate " + tag);
    if (lane.centerline.size() < 2) throw ValidationError(tag + ": centerline needs >= 2 points");
    for (std::size_t i = 1; i < lane.centerline.size(); ++i) {
      if (lane.centerline[i] == lane.centerline[i - 1]) {
        throw ValidationError(tag + ": consecutive centerline points must be distinct");
      }
    }
    for (const auto& p : lane.centerline) {
      if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw ValidationError(tag + ": non-finite point");
    }
    if (!(lane.width >= 2.0)) throw ValidationError(tag + ": width must be >= 2.0 m");
    if (!(lane.speed_limit > 0.0)) throw ValidationError(tag + ": speed_limit must be > 0");
  }
  for (const auto& lane : sc.lanes) {
    for (LaneId next : lane.successors) {
      if (!ids.count(next)) {
        throw ValidationError("lane " + std::to_string(lane.id) + ": unknown successor " + std::to_string(next));
      }
    }
  }
  if (sc.spawns.empty()) throw ValidationError("scenario has no spawns");
  if (sc.goals.size() != sc.spawns.size()) throw ValidationError("goals must pair one-to-one with spawns");
  for (std::size_t i = 0; i < sc.spawns.size(); ++i) {
    const auto& sp = sc.spawns[i];
    const auto& g = sc.goals[i];
    if (!ids.count(sp.lane)) throw ValidationError("spawn " + std::to_string(i) + ": unknown lane");
    if (!ids.count(g.lane)) throw ValidationError("goal " + std::to_string(i) + ": unknown lane");
    if (sp.s < 0.0 || sp.s > lane_length(sc.lane(sp.lane))) throw ValidationError("spawn beyond lane");
    if (g.s < 0.0 || g.s > lane_length(sc.lane(g.lane))) throw ValidationError("goal beyond lane");
    if (!(sp.speed >= 0.0)) throw ValidationError("spawn " + std::to_string(i) + ": speed must be >= 0");
    if (!(g.radius > 0.0)) throw ValidationError("goal " + std::to_string(i) + ": radius must be > 0");
    if (!has_route(sc, sp.lane, g.lane)) {
      throw ValidationError("no route from spawn " + std::to_string(i) + " to its goal");
    }
    if (sp.lane == g.lane && g.s <= sp.s) {
      throw ValidationError("goal " + std::to_string(i) + " lies behind its spawn");
    }
  }
}

Scenario load_scenario(std::string_view source) {
  json doc;
  try {
    doc = json::parse(source);
  } catch (const json::parse_error& e) {
    throw ParseError(e.what(), line_of(source, e.byte));
  }
  Scenario sc;
  const std::string root = "scenario";
  const json& name = field(doc, "name", root);
  if (!name.is_string()) throw ParseError("scenario.name: expected a string");
  sc.name = name.get<std::string>();

  const json& lanes = array(doc, "lanes", root);
  for (std::size_t i = 0; i < lanes.size(); ++i) {
    const std::string path = "lanes[" + std::to_string(i) + "]";
    const json& lj = lanes[i];
    Lane lane;
    lane.id = integer(lj, "id", path);
    lane.width = number(lj, "width", path);
    lane.speed_limit = number(lj, "speed_limit", path);
    const json& pts = array(lj, "centerline", path);
    for (std::size_t k = 0; k < pts.size(); ++k) {
      const json& p = pts[k];
      if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
        throw ParseError(path + ".centerline[" + std::to_string(k) + "]: expected [x, y]");
      }
      lane.centerline.push_back({p[0].get<double>(), p[1].get<double>()});
    }
    if (lj.contains("successors")) {
      for (const json& s : array(lj, "successors", path)) {
        if (!s.is_number_integer()) throw ParseError(path + ".successors: expected integers");
        lane.successors.push_back(s.get<int>());
      }
    }
    sc.lanes.push_back(std::move(lane));
  }

  const json& spawns = array(doc, "spawns", root);
  for (std::size_t i = 0; i < spawns.size(); ++i) {
    const std::string path = "spawns[" + std::to_string(i) + "]";
    sc.spawns.push_back({integer(spawns[i], "lane", path), number(spawns[i], "s", path),
                         number(spawns[i], "speed", path)});
  }
  const json& goals = array(doc, "goals", root);
  for (std::size_t i = 0; i < goals.size(); ++i) {
    const std::string path = "goals[" + std::to_string(i) + "]";
    sc.goals.push_back({integer(goals[i], "lane", path), number(goals[i], "s", path),
                        number_or(goals[i], "radius", path, 3.0)});
  }
  const json& sim = field(doc, "sim", root);
  sc.dt = number(sim, "dt", "sim");
  sc.max_steps = integer(sim, "max_steps", "sim");

  validate_scenario(sc);
  return sc;
}

std::string dump_scenario(const Scenario& sc) {
  json doc;
  doc["name"] = sc.name;
  doc["lanes"] = json::array();
  for (const auto& lane : sc.lanes) {
    json pts = json::array();
    for (const auto& p : lane.centerline) pts.push_back({p.x, p.y});
    doc["lanes"].push_back({{"id", lane.id},
                            {"centerline", pts},
                            {"width", lane.width},
                            {"successors", lane.successors},
                            {"speed_limit", lane.speed_limit}});
  }
  doc["spawns"] = json::array();
  for (const auto& s : sc.spawns) doc["spawns"].push_back({{"lane", s.lane}, {"s", s.s}, {"speed", s.speed}});
  doc["goals"] = json::array();
  for (const auto& g : sc.goals) {
    doc["goals"].push_back({{"lane", g.lane}, {"s", g.s}, {"radius", g.radius}});
  }
  doc["sim"] = {{"dt", sc.dt}, {"max_steps", sc.max_steps}};
  return doc.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Built-in maps.

namespace {

std::vector<Vec2> straight(Vec2 a, Vec2 b) { return {a, b}; }

// On-ramp that leaves y = y0 and joins y = 0 with zero slope at both ends.
std::vector<Vec2> ramp_curve(double x_end, double y0, int samples) {
  std::vector<Vec2> pts;
  for (int i = 0; i <= samples; ++i) {
    const double t = static_cast<double>(i) / samples;
    const double smooth = t * t * (3.0 - 2.0 * t);
    pts.push_back({x_end * t, y0 * (1.0 - smooth)});
  }
  return pts;
}

Scenario merge_map() {
  Scenario sc;
  sc.name = "merge";
  constexpr double kLimit = 13.9;
  sc.lanes.push_back({0, straight({0.0, 3.5}, {160.0, 3.5}), 3.5, {}, kLimit});
  sc.lanes.push_back({1, straight({0.0, 0.0}, {160.0, 0.0}), 3.5, {}, kLimit});
  sc.lanes.push_back({2, ramp_curve(70.0, -14.0, 14), 3.5, {1}, kLimit});
  sc.spawns = {{1, 10.0, 10.0}, {2, 5.0, 10.0}, {0, 15.0, 10.0}};
  sc.goals = {{1, 130.0, 3.0}, {1, 115.0, 3.0}, {0, 130.0, 3.0}};
  sc.dt = 0.1;
  sc.max_steps = 250;
  return sc;
}

Scenario intersection_map() {
  Scenario sc;
  sc.name = "intersection";
  constexpr double kLimit = 11.1, kHalf = 1.75, kLen = 60.0, kW = 3.5;
  // Approach lanes end at the crossing line through the origin; exits start there.
  sc.lanes.push_back({0, straight({-kLen, -kHalf}, {0.0, -kHalf}), kW, {1}, kLimit});  // eastbound in
  sc.lanes.push_back({1, straight({0.0, -kHalf}, {kLen, -kHalf}), kW, {}, kLimit});   // eastbound out
  sc.lanes.push_back({2, straight({kLen, kHalf}, {0.0, kHalf}), kW, {3}, kLimit});     // westbound in
  sc.lanes.push_back({3, straight({0.0, kHalf}, {-kLen, kHalf}), kW, {}, kLimit});     // westbound out
  sc.lanes.push_back({4, straight({kHalf, -kLen}, {kHalf, 0.0}), kW, {5}, kLimit});    // northbound in
  sc.lanes.push_back({5, straight({kHalf, 0.0}, {kHalf, kLen}), kW, {}, kLimit});      // northbound out
  sc.lanes.push_back({6, straight({-kHalf, kLen}, {-kHalf, 0.0}), kW, {7}, kLimit});   // southbound in
  sc.lanes.push_back({7, straight({-kHalf, 0.0}, {-kHalf, -kLen}), kW, {}, kLimit});   // southbound out
  sc.spawns = {{0, 20.0, 8.0}, {4, 14.0, 8.0}, {2, 26.0, 8.0}, {6, 8.0, 8.0}};
  sc.goals = {{1, 40.0, 3.0}, {5, 40.0, 3.0}, {3, 40.0, 3.0}, {7, 40.0, 3.0}};
  sc.dt = 0.1;
  sc.max_steps = 250;
  return sc;
}

Scenario straight_map() {
  Scenario sc;
  sc.name = "straight";
  sc.lanes.push_back({0, straight({0.0, 0.0}, {150.0, 0.0}), 3.5, {}, 13.9});
  sc.spawns = {{0, 10.0, 10.0}};
  sc.goals = {{0, 110.0, 3.0}};
  sc.dt = 0.1;
  sc.max_steps = 200;
  return sc;
}

}  // namespace

std::vector<std::string> builtin_scenario_names() { return {"merge", "intersection", "straight"}; }

bool is_builtin_scenario(std::string_view name) {
  const auto names = builtin_scenario_names();
  return std::find(names.begin(), names.end(), name) != names.end();
}

Scenario builtin_scenario(std::string_view name) {
  Scenario sc;
  if (name == "merge") {
    sc = merge_map();
  } else if (name == "intersection") {
    sc = intersection_map();
  } else if (name == "straight") {
    sc = straight_map();
  } else {
    throw ValidationError("unknown built-in scenario '" + std::string(name) + "'");
  }
  validate_scenario(sc);
  return sc;
}

Scenario resolve_scenario(const std::string& name_or_path) {
  if (is_builtin_scenario(name_or_path)) return builtin_scenario(name_or_path);
  std::ifstream in(name_or_path);
  if (!in) throw IoError("cannot open scenario file '" + name_or_path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return load_scenario(ss.str());
}

}  // namespace marlsim
