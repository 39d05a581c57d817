#ifndef MARLSIM_METRICS_HPP_
#define MARLSIM_METRICS_HPP_

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "marlsim/sim.hpp"

namespace marlsim {

struct AgentStepLog {
  bool acted = false;  // agent was alive at the start of the step
  double accel = 0.0;  // applied after the step
  double yaw_rate = 0.0;
  AgentEvents events;
};

// Everything needed to score one episode after the fact.
struct EpisodeLog {
  std::int64_t episode_id = 0;
  std::size_t n_agents = 0;
  int max_steps = 0;  // 0 when unknown
  std::vector<double> initial_accel;
  std::vector<double> initial_yaw_rate;
  std::vector<std::vector<AgentStepLog>> steps;  // [step][agent]

  void begin(std::int64_t id, const SimState& state, int max_steps);
  void append(const SimState& before, const SimState& after, const StepEvents& events);
};

// Four lower-is-better scores plus the raw sums behind humanness.
struct EpisodeMetrics {
  std::int64_t episode_id = 0;
  std::size_t n_agents = 0;
  int completion = 0;  // crashes
  int time = 0;        // agent-steps while alive
  double humanness = 0.0;
  int rules = 0;       // violation flags
  int goals = 0;       // agents that reached their goal
  double sum_obstacle_distance = 0.0;
  double sum_angular_jerk = 0.0;
  double sum_linear_jerk = 0.0;
  double sum_lane_offset = 0.0;

  bool operator==(const EpisodeMetrics&) const = default;
};

EpisodeMetrics score_episode(const EpisodeLog& log);

struct MetricStats {
  double mean = 0.0;
  double std = 0.0;  // population
  double min = 0.0;
  double max = 0.0;
  bool operator==(const MetricStats&) const = default;
};

MetricStats describe(const std::vector<double>& values);

struct RunReport {
  static constexpr int kSchemaVersion = 1;

  std::string algo;
  std::string scenario;
  std::uint64_t seed = 0;
  std::string config_digest;
  std::vector<std::pair<std::string, std::string>> config;  // effective settings, echoed
  std::vector<EpisodeMetrics> episodes;
  MetricStats completion, time, humanness, rules;

  bool operator==(const RunReport&) const = default;
};

extern const std::vector<std::string> kMetricNames;  // completion, time, humanness, rules

std::vector<double> metric_column(const std::vector<EpisodeMetrics>& episodes, const std::string& metric);
const MetricStats& metric_stats(const RunReport& report, const std::string& metric);

RunReport aggregate(const std::vector<EpisodeMetrics>& episodes);

// True when the stored statistics equal a recomputation from the episodes.
bool report_consistent(const RunReport& report);

enum class Verdict { kABetter, kBBetter, kTie };

struct MetricComparison {
  std::string metric;
  double a_mean = 0.0;
  double b_mean = 0.0;
  double gap = 0.0;          // a - b; negative favours a
  double pooled_std = 0.0;
  double gap_in_std = 0.0;   // 0 when both spreads are 0
  Verdict verdict = Verdict::kTie;
};

struct RunComparison {
  std::string label_a;
  std::string label_b;
  std::vector<MetricComparison> metrics;
};

RunComparison compare_runs(const RunReport& a, const RunReport& b);
std::string verdict_text(const MetricComparison& m, const std::string& label_a, const std::string& label_b);
std::string format_comparison(const RunComparison& c);

std::string report_to_text(const RunReport& report);
RunReport report_from_text(const std::string& text);

}  // namespace marlsim

#endif  // MARLSIM_METRICS_HPP_
