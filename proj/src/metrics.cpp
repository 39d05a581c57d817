#include "marlsim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "marlsim/errors.hpp"

namespace marlsim {

using nlohmann::json;

const std::vector<std::string> kMetricNames = {"completion", "time", "humanness", "rules"};

void EpisodeLog::begin(std::int64_t id, const SimState& state, int steps_cap) {
  episode_id = id;
  n_agents = state.vehicles.size();
  max_steps = steps_cap;
  initial_accel.clear();
  initial_yaw_rate.clear();
  for (const auto& v : state.vehicles) {
    initial_accel.push_back(v.accel);
    initial_yaw_rate.push_back(v.yaw_rate);
  }
  steps.clear();
}

void EpisodeLog::append(const SimState& before, const SimState& after, const StepEvents& events) {
  std::vector<AgentStepLog> row(n_agents);
  for (std::size_t i = 0; i < n_agents; ++i) {
    row[i].acted = before.vehicles[i].alive();
    row[i].accel = after.vehicles[i].accel;
    row[i].yaw_rate = after.vehicles[i].yaw_rate;
    row[i].events = events[i];
  }
  steps.push_back(std::move(row));
}

EpisodeMetrics score_episode(const EpisodeLog& log) {
  if (log.n_agents == 0) throw ValidationError("malformed episode log: no agents");
  EpisodeMetrics m;
  m.episode_id = log.episode_id;
  m.n_agents = log.n_agents;
  std::vector<bool> terminal(log.n_agents, false);
  for (std::size_t t = 0; t < log.steps.size(); ++t) {
    const auto& row = log.steps[t];
    if (row.size() != log.n_agents) {
      throw ValidationError("malformed episode log: step " + std::to_string(t) + " has wrong agent count");
    }
    for (std::size_t i = 0; i < log.n_agents; ++i) {
      const AgentStepLog& a = row[i];
      if (!a.acted) {
        if (!terminal[i]) {
          throw ValidationError("malformed episode log: agent " + std::to_string(i) + " idle while alive at step " +
                                std::to_string(t));
        }
        continue;
      }
      if (terminal[i]) {
        throw ValidationError("malformed episode log: agent " + std::to_string(i) + " acts after terminating");
      }
      const AgentEvents& e = a.events;
      if (!std::isfinite(e.linear_jerk) || !std::isfinite(e.angular_jerk) || !std::isfinite(e.lane_center_offset) ||
          !std::isfinite(e.min_obstacle_distance)) {
        throw ValidationError("malformed episode log: non-finite value at step " + std::to_string(t));
      }
      if (e.collision && e.goal_reached) {
        throw ValidationError("malformed episode log: crash and goal in the same step");
      }
      ++m.time;
      m.sum_obstacle_distance += e.min_obstacle_distance;
      m.sum_angular_jerk += std::abs(e.angular_jerk);
      m.sum_linear_jerk += std::abs(e.linear_jerk);
      m.sum_lane_offset += std::abs(e.lane_center_offset);
      m.rules += e.rule_violations();
      if (e.collision) {
        ++m.completion;
        terminal[i] = true;
      } else if (e.goal_reached) {
        ++m.goals;
        terminal[i] = true;
      }
    }
  }
  m.humanness = (m.sum_obstacle_distance + m.sum_angular_jerk + m.sum_linear_jerk + m.sum_lane_offset) / 4.0;
  if (log.max_steps > 0 && m.time > static_cast<int>(log.n_agents) * log.max_steps) {
    throw ValidationError("malformed episode log: more agent-steps than the step cap allows");
  }
  return m;
}

MetricStats describe(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("describe: empty input");
  MetricStats s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(values.size()));
  s.min = *std::min_element(values.begin(), values.end());
  s.max = *std::max_element(values.begin(), values.end());
  return s;
}

std::vector<double> metric_column(const std::vector<EpisodeMetrics>& episodes, const std::string& metric) {
  std::vector<double> out;
  out.reserve(episodes.size());
  for (const auto& e : episodes) {
    if (metric == "completion") {
      out.push_back(e.completion);
    } else if (metric == "time") {
      out.push_back(e.time);
    } else if (metric == "humanness") {
      out.push_back(e.humanness);
    } else if (metric == "rules") {
      out.push_back(e.rules);
    } else {
      throw std::invalid_argument("unknown metric '" + metric + "'");
    }
  }
  return out;
}

const MetricStats& metric_stats(const RunReport& r, const std::string& metric) {
  if (metric == "completion") return r.completion;
  if (metric == "time") return r.time;
  if (metric == "humanness") return r.humanness;
  if (metric == "rules") return r.rules;
  throw std::invalid_argument("unknown metric '" + metric + "'");
}

RunReport aggregate(const std::vector<EpisodeMetrics>& episodes) {
  if (episodes.empty()) throw std::invalid_argument("aggregate: no episodes");
  RunReport r;
  r.episodes = episodes;
  r.completion = describe(metric_column(episodes, "completion"));
  r.time = describe(metric_column(episodes, "time"));
  r.humanness = describe(metric_column(episodes, "humanness"));
  r.rules = describe(metric_column(episodes, "rules"));
  return r;
}

bool report_consistent(const RunReport& report) {
  if (report.episodes.empty()) return false;
  const RunReport fresh = aggregate(report.episodes);
  return fresh.completion == report.completion && fresh.time == report.time &&
         fresh.humanness == report.humanness && fresh.rules == report.rules;
}

RunComparison compare_runs(const RunReport& a, const RunReport& b) {
  if (a.episodes.empty() || b.episodes.empty()) throw std::invalid_argument("compare_runs: empty report");
  RunComparison c;
  c.label_a = a.algo.empty() ? "a" : a.algo;
  c.label_b = b.algo.empty() ? "b" : b.algo;
  if (c.label_a == c.label_b) {
    c.label_a += " (a)";
    c.label_b += " (b)";
  }
  for (const auto& name : kMetricNames) {
    const MetricStats& sa = metric_stats(a, name);
    const MetricStats& sb = metric_stats(b, name);
    MetricComparison m;
    m.metric = name;
    m.a_mean = sa.mean;
    m.b_mean = sb.mean;
    m.gap = sa.mean - sb.mean;
    m.pooled_std = std::sqrt(0.5 * (sa.std * sa.std + sb.std * sb.std));
    m.gap_in_std = m.pooled_std > 0.0 ? m.gap / m.pooled_std : 0.0;
    m.verdict = sa.mean < sb.mean ? Verdict::kABetter : (sb.mean < sa.mean ? Verdict::kBBetter : Verdict::kTie);
    c.metrics.push_back(m);
  }
  return c;
}

std::string verdict_text(const MetricComparison& m, const std::string& label_a, const std::string& label_b) {
  switch (m.verdict) {
    case Verdict::kABetter:
      return label_a + " better on " + m.metric;
    case Verdict::kBBetter:
      return label_b + " better on " + m.metric;
    case Verdict::kTie:
      break;
  }
  return "tie on " + m.metric;
}

std::string format_comparison(const RunComparison& c) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-11s %14s %14s %14s %10s  %s\n", "metric", c.label_a.substr(0, 14).c_str(),
                c.label_b.substr(0, 14).c_str(), "gap(a-b)", "gap/std", "verdict");
  os << line;
  for (const auto& m : c.metrics) {
    std::snprintf(line, sizeof line, "%-11s %14.4f %14.4f %14.4f %10.3f  %s\n", m.metric.c_str(), m.a_mean,
                  m.b_mean, m.gap, m.gap_in_std, verdict_text(m, c.label_a, c.label_b).c_str());
    os << line;
  }
  return os.str();
}

// ---------------------------------------------------------------------------

namespace {

json stats_json(const MetricStats& s) { return {{"mean", s.mean}, {"std", s.std}, {"min", s.min}, {"max", s.max}}; }

MetricStats stats_from(const json& j) {
  return {j.at("mean").get<double>(), j.at("std").get<double>(), j.at("min").get<double>(), j.at("max").get<double>()};
}

}  // namespace

std::string report_to_text(const RunReport& r) {
  json doc;
  doc["schema"] = "marlsim.report";
  doc["version"] = RunReport::kSchemaVersion;
  doc["algo"] = r.algo;
  doc["scenario"] = r.scenario;
  doc["seed"] = r.seed;
  doc["config_digest"] = r.config_digest;
  json cfg = json::array();
  for (const auto& [k, v] : r.config) cfg.push_back({k, v});
  doc["config"] = cfg;
  doc["summary"] = {{"completion", stats_json(r.completion)},
                    {"time", stats_json(r.time)},
                    {"humanness", stats_json(r.humanness)},
                    {"rules", stats_json(r.rules)}};
  json eps = json::array();
  for (const auto& e : r.episodes) {
    eps.push_back({{"episode", e.episode_id},
                   {"n_agents", e.n_agents},
                   {"completion", e.completion},
                   {"time", e.time},
                   {"humanness", e.humanness},
                   {"rules", e.rules},
                   {"goals", e.goals},
                   {"sum_obstacle_distance", e.sum_obstacle_distance},
                   {"sum_angular_jerk", e.sum_angular_jerk},
                   {"sum_linear_jerk", e.sum_linear_jerk},
                   {"sum_lane_offset", e.sum_lane_offset}});
  }
  doc["episodes"] = eps;
  return doc.dump(1) + "\n";
}

RunReport report_from_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("report: ") + e.what());
  }
  if (!doc.is_object() || doc.value("schema", "") != "marlsim.report") throw ParseError("not a run report");
  if (doc.value("version", -1) != RunReport::kSchemaVersion) {
    throw ParseError("report schema version mismatch: expected " + std::to_string(RunReport::kSchemaVersion));
  }
  RunReport r;
  try {
    r.algo = doc.at("algo").get<std::string>();
    r.scenario = doc.at("scenario").get<std::string>();
    r.seed = doc.at("seed").get<std::uint64_t>();
    r.config_digest = doc.at("config_digest").get<std::string>();
    for (const auto& kv : doc.at("config")) r.config.emplace_back(kv.at(0).get<std::string>(), kv.at(1).get<std::string>());
    for (const auto& e : doc.at("episodes")) {
      EpisodeMetrics m;
      m.episode_id = e.at("episode").get<std::int64_t>();
      m.n_agents = e.at("n_agents").get<std::size_t>();
      m.completion = e.at("completion").get<int>();
      m.time = e.at("time").get<int>();
      m.humanness = e.at("humanness").get<double>();
      m.rules = e.at("rules").get<int>();
      m.goals = e.at("goals").get<int>();
      m.sum_obstacle_distance = e.at("sum_obstacle_distance").get<double>();
      m.sum_angular_jerk = e.at("sum_angular_jerk").get<double>();
      m.sum_linear_jerk = e.at("sum_linear_jerk").get<double>();
      m.sum_lane_offset = e.at("sum_lane_offset").get<double>();
      r.episodes.push_back(m);
    }
    const json& s = doc.at("summary");
    r.completion = stats_from(s.at("completion"));
    r.time = stats_from(s.at("time"));
    r.humanness = stats_from(s.at("humanness"));
    r.rules = stats_from(s.at("rules"));
  } catch (const json::exception& e) {
    throw ParseError(std::string("report: ") + e.what());
  }
  return r;
}

}  // namespace marlsim
