#ifndef MARLSIM_APP_HPP_
#define MARLSIM_APP_HPP_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "marlsim/config.hpp"
#include "marlsim/metrics.hpp"

namespace marlsim {

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitRuntime = 3, kExitIo = 4 };

// Maps an exception from any command to its exit code.
int exit_code_for(const std::exception& e);

// Run directory layout.
struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path config_echo() const { return root / "config.echo"; }
  std::filesystem::path checkpoints() const { return root / "checkpoints"; }
  std::filesystem::path report() const { return root / "metrics.report"; }
  std::filesystem::path traces() const { return root / "traces"; }
  std::filesystem::path trace_file() const { return traces() / "trace.jsonl"; }
  std::filesystem::path telemetry() const { return root / "telemetry.jsonl"; }
  std::filesystem::path checkpoint(std::int64_t episode) const;
};

// Highest-episode checkpoint in a run directory.
std::filesystem::path latest_checkpoint(const std::filesystem::path& run_dir);

struct TrainRequest {
  RunConfig config;
  std::filesystem::path out;
  std::optional<std::filesystem::path> resume;  // checkpoint file or run directory
  std::int64_t stop_after = -1;                 // end this session at this episode count
};

// Returns the report when the run reached its budget, nothing when stopped early.
std::optional<RunReport> cmd_train(const TrainRequest& request, std::ostream& log);

struct EvalRequest {
  std::filesystem::path checkpoint;  // file or run directory
  std::int64_t episodes = 20;
  std::uint64_t seed = 1;
  std::optional<std::string> scenario;  // evaluate on a different scenario
  bool force = false;
  std::optional<std::filesystem::path> trace;
};

RunReport cmd_eval(const EvalRequest& request, std::ostream& log);

// One SVG per episode in the trace; returns the files written.
std::vector<std::filesystem::path> cmd_replay(const std::filesystem::path& trace_file,
                                              const std::filesystem::path& out_dir);

std::string cmd_explain(const std::filesystem::path& run_dir, std::size_t k);

std::string cmd_compare(const std::filesystem::path& report_a, const std::filesystem::path& report_b);

// Whole command line; prints errors to `err` and returns the exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace marlsim

#endif  // MARLSIM_APP_HPP_
