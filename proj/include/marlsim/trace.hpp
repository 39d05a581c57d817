#ifndef MARLSIM_TRACE_HPP_
#define MARLSIM_TRACE_HPP_

#include <array>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "marlsim/geometry.hpp"
#include "marlsim/metrics.hpp"
#include "marlsim/per_buffer.hpp"
#include "marlsim/sim.hpp"

namespace marlsim {

struct AgentTrace {
  bool acted = false;
  double x = 0.0, y = 0.0, heading = 0.0, speed = 0.0;  // pose when the action was chosen
  double accel = 0.0, yaw_rate = 0.0;                   // applied action
  Vec2 end{};                                           // position after the step
  std::vector<std::optional<Vec2>> waypoints;           // world frame, as fed to the policy
  std::vector<double> obs_waypoints;                    // the matching observation slice
  AgentEvents events;

  bool operator==(const AgentTrace&) const = default;
};

// Priority breakdown of the transition inserted at a step.
struct TracedPriority {
  double priority = 0.0;
  double td_abs = 0.0;
  bool td_estimated = false;
  EventScore components;

  bool operator==(const TracedPriority&) const = default;
};

struct StepTrace {
  std::int64_t episode_id = 0;
  int step = 0;
  std::vector<AgentTrace> agents;
  std::optional<TracedPriority> priority;

  bool operator==(const StepTrace&) const = default;
};

// Assemble a trace record from one simulator step. `obs_before` is the
// observation the actions were computed from.
StepTrace make_step_trace(const World& world, std::int64_t episode_id, const SimState& before,
                          const JointObservation& obs_before, const SimState& after, const StepEvents& events);

struct TraceHeader {
  static constexpr int kSchemaVersion = 1;
  std::string algo;
  std::string scenario_text;  // full scenario, so replays are self-contained
};

std::string trace_to_line(const StepTrace& trace);
StepTrace trace_from_line(const std::string& line);

// Append-only line-delimited trace file. Every record is flushed, so a
// crash can only lose the record being written.
class TraceWriter {
 public:
  TraceWriter(const std::string& path, const TraceHeader& header);
  void record(const StepTrace& trace);
  std::size_t records() const { return count_; }

 private:
  std::ofstream out_;
  std::string path_;
  std::size_t count_ = 0;
  std::optional<std::pair<std::int64_t, int>> last_;
};

struct TraceFile {
  TraceHeader header;
  std::vector<StepTrace> records;
  bool truncated_tail = false;  // a partial final line was dropped
};

TraceFile parse_trace(const std::string& text);
TraceFile read_trace(const std::string& path);

// Telemetry and metric consumers attached to a training run.
struct Telemetry {
  std::int64_t episode = 0;
  std::vector<std::pair<std::string, double>> values;
};

struct Sinks {
  std::function<void(const EpisodeMetrics&)> on_episode;
  std::function<void(const StepTrace&)> on_trace;
  std::function<void(const Telemetry&)> on_telemetry;
};

// ---------------------------------------------------------------------------
// Transparent attribution

inline constexpr std::array<const char*, 6> kAttributionComponents = {"td",   "accident", "rule",
                                                                      "jerk", "speed",    "completion"};

struct AttributionRow {
  std::int64_t episode_id = 0;
  int step = 0;
  double priority = 0.0;
  std::array<double, 6> shares{};  // ordered as kAttributionComponents, sums to 1
};

struct AttributionReport {
  std::vector<AttributionRow> rows;
  std::array<double, 6> aggregate_shares{};
  std::size_t records = 0;
};

std::array<double, 6> component_shares(const TracedPriority& p);

// Top-k by priority (ties: earlier episode/step first) with per-component shares.
AttributionReport top_k_influential(std::span<const StepTrace> traces, std::size_t k);
std::string format_attribution(const AttributionReport& report);

// ---------------------------------------------------------------------------
// Rendering

struct RenderOptions {
  double pixels_per_meter = 4.0;
  double margin_m = 5.0;
};

// World (m, y up) to document (px, y down) affine map.
struct Viewport {
  double min_x = 0.0, max_y = 0.0;
  double scale = 1.0, margin = 0.0;
  double width = 0.0, height = 0.0;

  Vec2 to_view(Vec2 w) const { return {(w.x - min_x) * scale + margin, (max_y - w.y) * scale + margin}; }
  Vec2 to_world(Vec2 v) const { return {(v.x - margin) / scale + min_x, max_y - (v.y - margin) / scale}; }
};

Viewport make_viewport(const Scenario& scenario, const RenderOptions& options = {});

std::string render_svg(const Scenario& scenario, std::span<const StepTrace> episode,
                       const RenderOptions& options = {});

}  // namespace marlsim

#endif  // MARLSIM_TRACE_HPP_
