#include "marlsim/trace.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "marlsim/errors.hpp"

namespace marlsim {

using nlohmann::json;

StepTrace make_step_trace(const World& world, std::int64_t episode_id, const SimState& before,
                          const JointObservation& obs_before, const SimState& after, const StepEvents& events) {
  StepTrace t;
  t.episode_id = episode_id;
  t.step = before.step;
  for (std::size_t i = 0; i < before.vehicles.size(); ++i) {
    const VehicleState& b = before.vehicles[i];
    const VehicleState& a = after.vehicles[i];
    AgentTrace at;
    at.acted = b.alive();
    at.x = b.x;
    at.y = b.y;
    at.heading = b.heading;
    at.speed = b.speed;
    at.accel = a.accel;
    at.yaw_rate = a.yaw_rate;
    at.end = a.position();
    at.waypoints = world.waypoints(before, i);
    const auto slice = obs_before.agent(i).subspan(ObsLayout::kWaypointBegin, 2 * ObsLayout::kWaypoints);
    at.obs_waypoints.assign(slice.begin(), slice.end());
    at.events = events[i];
    t.agents.push_back(std::move(at));
  }
  return t;
}

namespace {

json events_json(const AgentEvents& e) {
  return {{"collision", e.collision},
          {"off_road", e.off_road},
          {"wrong_way", e.wrong_way},
          {"speed_over_limit", e.speed_over_limit},
          {"lane_change_violation", e.lane_change_violation},
          {"goal_reached", e.goal_reached},
          {"linear_jerk", e.linear_jerk},
          {"angular_jerk", e.angular_jerk},
          {"lane_center_offset", e.lane_center_offset},
          {"min_obstacle_distance", e.min_obstacle_distance}};
}

AgentEvents events_from(const json& j) {
  AgentEvents e;
  e.collision = j.at("collision").get<bool>();
  e.off_road = j.at("off_road").get<bool>();
  e.wrong_way = j.at("wrong_way").get<bool>();
  e.speed_over_limit = j.at("speed_over_limit").get<bool>();
  e.lane_change_violation = j.at("lane_change_violation").get<bool>();
  e.goal_reached = j.at("goal_reached").get<bool>();
  e.linear_jerk = j.at("linear_jerk").get<double>();
  e.angular_jerk = j.at("angular_jerk").get<double>();
  e.lane_center_offset = j.at("lane_center_offset").get<double>();
  e.min_obstacle_distance = j.at("min_obstacle_distance").get<double>();
  return e;
}

}  // namespace

std::string trace_to_line(const StepTrace& t) {
  json doc;
  doc["episode"] = t.episode_id;
  doc["step"] = t.step;
  json agents = json::array();
  for (const auto& a : t.agents) {
    json wps = json::array();
    for (const auto& w : a.waypoints) {
      if (w) {
        wps.push_back({w->x, w->y});
      } else {
        wps.push_back(nullptr);
      }
    }
    agents.push_back({{"acted", a.acted},
                      {"x", a.x},
                      {"y", a.y},
                      {"heading", a.heading},
                      {"speed", a.speed},
                      {"accel", a.accel},
                      {"yaw_rate", a.yaw_rate},
                      {"end", {a.end.x, a.end.y}},
                      {"waypoints", wps},
                      {"obs_waypoints", a.obs_waypoints},
                      {"events", events_json(a.events)}});
  }
  doc["agents"] = agents;
  if (t.priority) {
    const auto& p = *t.priority;
    doc["priority"] = {{"priority", p.priority},
                       {"td_abs", p.td_abs},
                       {"td_estimated", p.td_estimated},
                       {"accident", p.components.accident},
                       {"rule", p.components.rule},
                       {"jerk", p.components.jerk},
                       {"speed", p.components.speed},
                       {"completion", p.components.completion}};
  }
  return doc.dump();
}

StepTrace trace_from_line(const std::string& line) {
  const json doc = json::parse(line);
  StepTrace t;
  t.episode_id = doc.at("episode").get<std::int64_t>();
  t.step = doc.at("step").get<int>();
  for (const auto& aj : doc.at("agents")) {
    AgentTrace a;
    a.acted = aj.at("acted").get<bool>();
    a.x = aj.at("x").get<double>();
    a.y = aj.at("y").get<double>();
    a.heading = aj.at("heading").get<double>();
    a.speed = aj.at("speed").get<double>();
    a.accel = aj.at("accel").get<double>();
    a.yaw_rate = aj.at("yaw_rate").get<double>();
    a.end = {aj.at("end").at(0).get<double>(), aj.at("end").at(1).get<double>()};
    for (const auto& w : aj.at("waypoints")) {
      if (w.is_null()) {
        a.waypoints.emplace_back(std::nullopt);
      } else {
        a.waypoints.emplace_back(Vec2{w.at(0).get<double>(), w.at(1).get<double>()});
      }
    }
    a.obs_waypoints = aj.at("obs_waypoints").get<std::vector<double>>();
    a.events = events_from(aj.at("events"));
    t.agents.push_back(std::move(a));
  }
  if (doc.contains("priority")) {
    const json& pj = doc.at("priority");
    TracedPriority p;
    p.priority = pj.at("priority").get<double>();
    p.td_abs = pj.at("td_abs").get<double>();
    p.td_estimated = pj.at("td_estimated").get<bool>();
    p.components.accident = pj.at("accident").get<double>();
    p.components.rule = pj.at("rule").get<double>();
    p.components.jerk = pj.at("jerk").get<double>();
    p.components.speed = pj.at("speed").get<double>();
    p.components.completion = pj.at("completion").get<double>();
    t.priority = p;
  }
  return t;
}

TraceWriter::TraceWriter(const std::string& path, const TraceHeader& header) : out_(path), path_(path) {
  if (!out_) throw IoError("cannot open trace file '" + path + "'");
  json h = {{"schema", "marlsim.trace"}, {"version", TraceHeader::kSchemaVersion}, {"algo", header.algo}};
  h["scenario"] = json::parse(header.scenario_text);
  out_ << h.dump() << '\n';
  out_.flush();
  if (!out_) throw IoError("failed writing trace header to '" + path + "'");
}

void TraceWriter::record(const StepTrace& trace) {
  const std::pair<std::int64_t, int> key{trace.episode_id, trace.step};
  if (last_ && key <= *last_) throw StateError("trace records must be ordered by (episode, step)");
  out_ << trace_to_line(trace) << '\n';
  out_.flush();
  if (!out_) throw IoError("failed writing trace record to '" + path_ + "'");
  last_ = key;
  ++count_;
}

TraceFile parse_trace(const std::string& text) {
  TraceFile file;
  std::vector<std::pair<std::string, bool>> lines;  // (content, newline-terminated)
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) {
      lines.emplace_back(text.substr(pos), false);
      break;
    }
    lines.emplace_back(text.substr(pos, nl - pos), true);
    pos = nl + 1;
  }
  if (lines.empty()) throw ParseError("trace is empty", 1);
  try {
    const json h = json::parse(lines[0].first);
    if (h.value("schema", "") != "marlsim.trace") throw ParseError("not a trace file", 1);
    if (h.value("version", -1) != TraceHeader::kSchemaVersion) throw ParseError("trace schema version mismatch", 1);
    file.header.algo = h.at("algo").get<std::string>();
    file.header.scenario_text = h.at("scenario").dump();
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad trace header: ") + e.what(), 1);
  }
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto& [content, terminated] = lines[i];
    if (content.empty()) continue;
    try {
      file.records.push_back(trace_from_line(content));
    } catch (const json::exception& e) {
      if (!terminated && i + 1 == lines.size()) {
        file.truncated_tail = true;
        break;
      }
      throw ParseError(std::string("bad trace record: ") + e.what(), static_cast<int>(i + 1));
    }
  }
  return file;
}

TraceFile read_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trace file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_trace(ss.str());
}

// ---------------------------------------------------------------------------

std::array<double, 6> component_shares(const TracedPriority& p) {
  const std::array<double, 6> raw = {std::max(0.0, p.td_abs),          p.components.accident,
                                     p.components.rule,                p.components.jerk,
                                     p.components.speed,               p.components.completion};
  const double sum = std::accumulate(raw.begin(), raw.end(), 0.0);
  std::array<double, 6> shares{};
  if (sum > 0.0) {
    for (std::size_t c = 0; c < raw.size(); ++c) shares[c] = raw[c] / sum;
  } else {
    shares[0] = 1.0;  // only the eps floor is left, which belongs to the td term
  }
  return shares;
}

AttributionReport top_k_influential(std::span<const StepTrace> traces, std::size_t k) {
  std::vector<const StepTrace*> with_priority;
  for (const auto& t : traces) {
    if (t.priority) with_priority.push_back(&t);
  }
  if (with_priority.empty()) throw std::invalid_argument("no priority records to attribute");
  std::stable_sort(with_priority.begin(), with_priority.end(), [](const StepTrace* a, const StepTrace* b) {
    if (a->priority->priority != b->priority->priority) return a->priority->priority > b->priority->priority;
    if (a->episode_id != b->episode_id) return a->episode_id < b->episode_id;
    return a->step < b->step;
  });
  AttributionReport report;
  report.records = with_priority.size();
  std::array<double, 6> totals{};
  for (const StepTrace* t : with_priority) {
    const auto& p = *t->priority;
    totals[0] += std::max(0.0, p.td_abs);
    totals[1] += p.components.accident;
    totals[2] += p.components.rule;
    totals[3] += p.components.jerk;
    totals[4] += p.components.speed;
    totals[5] += p.components.completion;
  }
  const double grand = std::accumulate(totals.begin(), totals.end(), 0.0);
  for (std::size_t c = 0; c < totals.size(); ++c) report.aggregate_shares[c] = grand > 0.0 ? totals[c] / grand : 0.0;
  if (grand <= 0.0) report.aggregate_shares[0] = 1.0;
  const std::size_t n = std::min(k, with_priority.size());
  for (std::size_t i = 0; i < n; ++i) {
    const StepTrace* t = with_priority[i];
    report.rows.push_back({t->episode_id, t->step, t->priority->priority, component_shares(*t->priority)});
  }
  return report;
}

std::string format_attribution(const AttributionReport& r) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%4s %8s %6s %10s", "rank", "episode", "step", "priority");
  os << buf;
  for (const char* c : kAttributionComponents) {
    std::snprintf(buf, sizeof buf, " %10s", c);
    os << buf;
  }
  os << '\n';
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    const auto& row = r.rows[i];
    std::snprintf(buf, sizeof buf, "%4zu %8lld %6d %10.4f", i + 1, static_cast<long long>(row.episode_id), row.step,
                  row.priority);
    os << buf;
    for (double s : row.shares) {
      std::snprintf(buf, sizeof buf, " %10.4f", s);
      os << buf;
    }
    os << '\n';
  }
  std::snprintf(buf, sizeof buf, "%-30s", "aggregate share");
  os << buf;
  for (double s : r.aggregate_shares) {
    std::snprintf(buf, sizeof buf, " %10.4f", s);
    os << buf;
  }
  os << "\nrecords considered: " << r.records << '\n';
  return os.str();
}

}  // namespace marlsim
