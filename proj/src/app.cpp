#include "marlsim/app.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "marlsim/checkpoint.hpp"
#include "marlsim/errors.hpp"
#include "marlsim/trace.hpp"

namespace fs = std::filesystem;

namespace marlsim {

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw IoError("cannot open " + p.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + p.string());
  os << text;
  if (!os.flush()) throw IoError("write failed for " + p.string());
}

void make_dirs(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create " + p.string() + ": " + ec.message());
}

fs::path resolve_checkpoint(const fs::path& p) {
  if (fs::is_directory(p)) return latest_checkpoint(p);
  if (!fs::exists(p)) throw IoError("checkpoint " + p.string() + " does not exist");
  return p;
}

RunReport make_report(const RunConfig& config, const std::vector<EpisodeMetrics>& episodes,
                      std::vector<std::pair<std::string, std::string>> extra = {}) {
  RunReport r = aggregate(episodes);
  r.algo = algo_name(config.algo);
  r.scenario = config.scenario_name;
  r.seed = config.seed;
  r.config_digest = config_digest(config);
  r.config = effective_config(config);
  for (auto& kv : extra) r.config.push_back(std::move(kv));
  return r;
}

// Keeps lines of a telemetry file that belong to episodes before `episode`.
void trim_telemetry(const fs::path& from, const fs::path& to, std::int64_t episode) {
  std::vector<std::string> kept;
  if (fs::exists(from)) {
    std::ifstream is(from);
    std::string line;
    while (std::getline(is, line)) {
      try {
        const auto j = nlohmann::json::parse(line);
        if (j.at("episode").get<std::int64_t>() < episode) kept.push_back(line);
      } catch (const std::exception&) {
        break;  // partial tail
      }
    }
  }
  std::string text;
  for (const auto& l : kept) text += l + "\n";
  write_file(to, text);
}

class TelemetryWriter {
 public:
  TelemetryWriter(const fs::path& path, bool append) : out_(path, append ? std::ios::app : std::ios::trunc) {
    if (!out_) throw IoError("cannot write " + path.string());
  }
  void write(const Telemetry& t) {
    nlohmann::json values = nlohmann::json::object();
    for (const auto& [k, v] : t.values) values[k] = v;
    out_ << nlohmann::json{{"episode", t.episode}, {"values", values}}.dump() << "\n";
    out_.flush();
    if (!out_) throw IoError("telemetry write failed");
  }

 private:
  std::ofstream out_;
};

struct TrainingSession {
  RunConfig config;
  RunPaths paths;
  std::unique_ptr<TraceWriter> trace;
  std::unique_ptr<TelemetryWriter> telemetry;

  Sinks sinks() {
    Sinks s;
    if (trace) s.on_trace = [this](const StepTrace& t) { trace->record(t); };
    s.on_telemetry = [this](const Telemetry& t) { telemetry->write(t); };
    return s;
  }
};

// Opens trace and telemetry sinks; on resume keeps what precedes the checkpoint.
void open_sinks(TrainingSession& s, const std::optional<fs::path>& source_run, std::int64_t resume_episode) {
  make_dirs(s.paths.root);
  make_dirs(s.paths.checkpoints());
  if (s.config.trace) make_dirs(s.paths.traces());
  std::vector<StepTrace> kept;
  if (source_run && s.config.trace) {
    const fs::path old_trace = RunPaths{*source_run}.trace_file();
    if (fs::exists(old_trace)) {
      for (auto& r : read_trace(old_trace.string()).records) {
        if (r.episode_id < resume_episode) kept.push_back(std::move(r));
      }
    }
  }
  if (source_run) {
    const fs::path old = RunPaths{*source_run}.telemetry();
    const std::string tmp = s.paths.telemetry().string() + ".tmp";
    trim_telemetry(old, tmp, resume_episode);
    fs::rename(tmp, s.paths.telemetry());
    s.telemetry = std::make_unique<TelemetryWriter>(s.paths.telemetry(), true);
  } else {
    s.telemetry = std::make_unique<TelemetryWriter>(s.paths.telemetry(), false);
  }
  if (s.config.trace) {
    s.trace = std::make_unique<TraceWriter>(s.paths.trace_file().string(),
                                            TraceHeader{algo_name(s.config.algo), dump_scenario(s.config.scenario)});
    for (const auto& r : kept) s.trace->record(r);
  }
}

// Keeps only the newest replay sidecar; each holds a full buffer.
void prune_sidecars(const fs::path& dir, const fs::path& keep) {
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(dir, ec)) {
    if (entry.path().extension() == ".replay" && entry.path() != keep) fs::remove(entry.path(), ec);
  }
}

template <typename Trainer>
void save(TrainingSession& s, const Trainer& trainer, const fs::path& file) {
  save_checkpoint(file, s.config, trainer);
  if constexpr (std::is_same_v<Trainer, MaddpgTrainer>) prune_sidecars(s.paths.checkpoints(), replay_sidecar(file));
}

template <typename Trainer>
std::optional<RunReport> drive(TrainingSession& s, Trainer& trainer, std::int64_t stop_after, std::ostream& log) {
  const Sinks sinks = s.sinks();
  std::int64_t last_saved = -1;
  try {
    while (!trainer.finished()) {
      if (stop_after >= 0 && trainer.episode() >= stop_after) {
        save(s, trainer, s.paths.checkpoint(trainer.episode()));
        log << "stopped after episode " << trainer.episode() << "; continue with --resume " << s.paths.root.string()
            << "\n";
        return std::nullopt;
      }
      trainer.run_episode(sinks);
      if (trainer.episode() % s.config.checkpoint_every == 0) {
        save(s, trainer, s.paths.checkpoint(trainer.episode()));
        last_saved = trainer.episode();
        log << "episode " << trainer.episode() << ": checkpoint written\n";
      }
    }
  } catch (const std::exception& e) {
    try {
      save(s, trainer, s.paths.checkpoints() / "ckpt-abort.json");
      log << "training aborted; partial checkpoint in " << (s.paths.checkpoints() / "ckpt-abort.json").string()
          << "\n";
    } catch (const std::exception&) {
      log << "training aborted; partial checkpoint could not be written\n";
    }
    throw;
  }
  if (last_saved != trainer.episode()) save(s, trainer, s.paths.checkpoint(trainer.episode()));
  if (trainer.history().empty()) throw StateError("training finished without a complete episode; raise the budget");
  RunReport report = make_report(s.config, trainer.history());
  write_file(s.paths.report(), report_to_text(report));
  log << "trained " << trainer.episode() << " episodes, " << trainer.env_steps() << " env steps\n";
  return report;
}

}  // namespace

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const ParseError*>(&e)) return kExitIo;
  if (dynamic_cast<const CLI::Error*>(&e)) return kExitConfig;
  return kExitRuntime;
}

fs::path RunPaths::checkpoint(std::int64_t episode) const {
  char name[64];
  std::snprintf(name, sizeof(name), "ckpt-%06lld.json", static_cast<long long>(episode));
  return checkpoints() / name;
}

fs::path latest_checkpoint(const fs::path& run_dir) {
  const fs::path dir = RunPaths{run_dir}.checkpoints();
  if (!fs::is_directory(dir)) throw IoError("no checkpoints directory in " + run_dir.string());
  std::optional<fs::path> best;
  long long best_ep = -1;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    long long ep = -1;
    char tail[8] = {0};
    if (std::sscanf(name.c_str(), "ckpt-%lld.%5s", &ep, tail) == 2 && std::string(tail) == "json" && ep > best_ep) {
      best_ep = ep;
      best = entry.path();
    }
  }
  if (!best) throw IoError("no checkpoints in " + dir.string());
  return *best;
}

std::optional<RunReport> cmd_train(const TrainRequest& req, std::ostream& log) {
  TrainingSession s;
  s.paths = RunPaths{req.out};
  std::optional<fs::path> source_run;
  fs::path ckpt;
  if (req.resume) {
    ckpt = resolve_checkpoint(*req.resume);
    const CheckpointMeta meta = read_checkpoint_meta(ckpt);
    s.config = meta.config;
    source_run = ckpt.parent_path().parent_path();
    log << "resuming " << algo_name(meta.algo) << " run from episode " << meta.episode << "\n";
  } else {
    s.config = req.config;
  }
  validate_run_config(s.config);
  if (!req.resume && fs::exists(s.paths.report())) {
    throw ConfigError("output directory " + req.out.string() + " already holds a finished run");
  }
  make_dirs(s.paths.root);
  write_file(s.paths.config_echo(), config_echo(s.config));

  if (s.config.algo == Algo::kMaddpg) {
    MaddpgTrainer trainer(s.config.scenario, s.config.agents, s.config.maddpg, s.config.episodes, s.config.seed);
    if (req.resume) restore_checkpoint(ckpt, trainer);
    open_sinks(s, source_run, trainer.episode());
    return drive(s, trainer, req.stop_after, log);
  }
  MappoTrainer trainer(s.config.scenario, s.config.agents, s.config.ppo, {s.config.episodes, s.config.env_steps},
                       s.config.seed);
  if (req.resume) restore_checkpoint(ckpt, trainer);
  open_sinks(s, source_run, trainer.episode());
  return drive(s, trainer, req.stop_after, log);
}

RunReport cmd_eval(const EvalRequest& req, std::ostream& log) {
  if (req.episodes < 1) throw ConfigError("eval needs --episodes >= 1");
  const fs::path ckpt = resolve_checkpoint(req.checkpoint);
  const CheckpointMeta meta = read_checkpoint_meta(ckpt);
  RunConfig config = meta.config;
  if (req.scenario) {
    Scenario sc = resolve_scenario(*req.scenario);
    if (scenario_digest(sc) != meta.scenario_digest) {
      log << "warning: scenario '" << *req.scenario << "' differs from the checkpoint's '" << config.scenario_name
          << "'\n";
      if (!req.force) throw ConfigError("scenario mismatch with checkpoint; pass --force to evaluate anyway");
    }
    config.scenario = std::move(sc);
    config.scenario_name = *req.scenario;
  }
  if (config.agents > config.scenario.spawns.size()) {
    throw ConfigError("scenario has " + std::to_string(config.scenario.spawns.size()) + " spawns, checkpoint has " +
                      std::to_string(config.agents) + " agents");
  }
  const World world(config.scenario);
  Sinks sinks;
  std::unique_ptr<TraceWriter> trace;
  if (req.trace) {
    if (req.trace->has_parent_path()) make_dirs(req.trace->parent_path());
    trace = std::make_unique<TraceWriter>(req.trace->string(),
                                          TraceHeader{algo_name(config.algo), dump_scenario(config.scenario)});
    sinks.on_trace = [&](const StepTrace& t) { trace->record(t); };
  }
  std::vector<EpisodeMetrics> episodes;
  if (config.algo == Algo::kMaddpg) {
    episodes = evaluate_maddpg(load_maddpg_learner(ckpt), world, req.episodes, req.seed, sinks);
  } else {
    episodes = evaluate_mappo(load_mappo_learner(ckpt), world, req.episodes, req.seed, sinks);
  }
  RunReport report = make_report(config, episodes,
                                 {{"eval.checkpoint_episode", std::to_string(meta.episode)},
                                  {"eval.episodes", std::to_string(req.episodes)},
                                  {"eval.seed", std::to_string(req.seed)}});
  report.seed = req.seed;
  return report;
}

std::vector<fs::path> cmd_replay(const fs::path& trace_file, const fs::path& out_dir) {
  const TraceFile tf = read_trace(trace_file.string());
  if (tf.records.empty()) throw ParseError(trace_file.string() + ": trace has no step records");
  const Scenario scenario = load_scenario(tf.header.scenario_text);
  std::map<std::int64_t, std::vector<StepTrace>> by_episode;
  for (const auto& r : tf.records) by_episode[r.episode_id].push_back(r);
  make_dirs(out_dir);
  std::vector<fs::path> written;
  for (const auto& [ep, steps] : by_episode) {
    char name[64];
    std::snprintf(name, sizeof(name), "episode-%06lld.svg", static_cast<long long>(ep));
    const fs::path p = out_dir / name;
    write_file(p, render_svg(scenario, steps));
    written.push_back(p);
  }
  return written;
}

std::string cmd_explain(const fs::path& run_dir, std::size_t k) {
  const fs::path trace = RunPaths{run_dir}.trace_file();
  if (!fs::exists(trace)) throw IoError("no trace in " + run_dir.string() + " (was the run trained with --no-trace?)");
  const TraceFile tf = read_trace(trace.string());
  const bool has_priority =
      std::any_of(tf.records.begin(), tf.records.end(), [](const StepTrace& t) { return t.priority.has_value(); });
  if (tf.header.algo != "maddpg" || !has_priority) {
    throw ConfigError("transparent attribution requires priority replay; run '" + run_dir.string() + "' is " +
                      tf.header.algo);
  }
  return format_attribution(top_k_influential(tf.records, k));
}

std::string cmd_compare(const fs::path& a, const fs::path& b) {
  const RunReport ra = report_from_text(read_file(a));
  const RunReport rb = report_from_text(read_file(b));
  return format_comparison(compare_runs(ra, rb));
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"marlsim: multi-agent driving simulator with MADDPG and MAPPO"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "Train a policy and write a run directory");
  std::string algo = "maddpg", scenario = "merge", out_dir;
  std::size_t agents = 2;
  std::int64_t episodes = -1, steps = -1, stop_after = -1;
  std::uint64_t seed = 1;
  std::vector<std::string> overrides;
  bool no_trace = false;
  std::string resume;
  auto* o_algo = train->add_option("--algo", algo, "maddpg or mappo");
  auto* o_scen = train->add_option("--scenario", scenario, "built-in name or scenario file");
  auto* o_agents = train->add_option("--agents", agents, "number of agents");
  auto* o_eps = train->add_option("--episodes", episodes, "episode budget");
  auto* o_steps = train->add_option("--steps", steps, "env-step budget (mappo)");
  auto* o_seed = train->add_option("--seed", seed, "run seed");
  auto* o_set = train->add_option("--set", overrides, "hyperparameter override key=value (repeatable)");
  auto* o_notrace = train->add_flag("--no-trace", no_trace, "do not write step traces");
  train->add_option("--out", out_dir, "run directory")->required();
  auto* o_resume = train->add_option("--resume", resume, "checkpoint file or run directory to continue");
  train->add_option("--stop-after", stop_after, "end this session at this episode count, with a checkpoint");
  for (auto* o : {o_algo, o_scen, o_agents, o_eps, o_steps, o_seed, o_set, o_notrace}) o_resume->excludes(o);

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint with exploration off");
  std::string ckpt, eval_scenario, eval_out, eval_trace;
  std::int64_t eval_episodes = 20;
  std::uint64_t eval_seed = 1;
  bool force = false;
  eval->add_option("--checkpoint", ckpt, "checkpoint file or run directory")->required();
  eval->add_option("--episodes", eval_episodes, "episodes to roll out");
  eval->add_option("--seed", eval_seed, "evaluation seed");
  eval->add_option("--scenario", eval_scenario, "evaluate on another scenario");
  eval->add_flag("--force", force, "proceed despite a scenario mismatch");
  eval->add_option("--out", eval_out, "write the report here instead of stdout");
  eval->add_option("--trace", eval_trace, "write step traces here");

  // replay
  auto* replay = app.add_subcommand("replay", "Render each episode of a trace as SVG");
  std::string replay_trace, replay_out;
  replay->add_option("--trace", replay_trace, "trace file")->required();
  replay->add_option("--out", replay_out, "output directory")->required();

  // explain
  auto* explain = app.add_subcommand("explain", "Top-k replay priorities with component shares");
  std::string explain_run;
  std::size_t k = 20;
  explain->add_option("--run", explain_run, "run directory")->required();
  explain->add_option("-k,--k", k, "rows to show");

  // compare
  auto* compare = app.add_subcommand("compare", "Compare two metric reports (lower is better)");
  std::string report_a, report_b;
  compare->add_option("report_a", report_a, "first report")->required();
  compare->add_option("report_b", report_b, "second report")->required();

  // dump-scenario
  auto* dump = app.add_subcommand("dump-scenario", "Print a scenario as JSON");
  std::string dump_name;
  dump->add_option("name", dump_name, "built-in name or scenario file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << e.what() << "\n";
      return kExitOk;
    }
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (*train) {
      TrainRequest req;
      req.out = out_dir;
      req.stop_after = stop_after;
      if (!resume.empty()) {
        req.resume = resume;
      } else {
        RunConfig& c = req.config;
        c.algo = parse_algo(algo);
        c.scenario_name = scenario;
        c.scenario = resolve_scenario(scenario);
        c.agents = agents;
        c.seed = seed;
        c.episodes = episodes;
        c.env_steps = steps;
        c.trace = !no_trace;
        for (const auto& o : overrides) apply_override(c, o);
      }
      const auto report = cmd_train(req, err);
      if (report) out << RunPaths{req.out}.report().string() << "\n";
      return kExitOk;
    }
    if (*eval) {
      EvalRequest req;
      req.checkpoint = ckpt;
      req.episodes = eval_episodes;
      req.seed = eval_seed;
      if (!eval_scenario.empty()) req.scenario = eval_scenario;
      req.force = force;
      if (!eval_trace.empty()) req.trace = eval_trace;
      const RunReport report = cmd_eval(req, err);
      if (eval_out.empty()) {
        out << report_to_text(report);
      } else {
        write_file(eval_out, report_to_text(report));
      }
      return kExitOk;
    }
    if (*replay) {
      for (const auto& p : cmd_replay(replay_trace, replay_out)) out << p.string() << "\n";
      return kExitOk;
    }
    if (*explain) {
      out << cmd_explain(explain_run, k);
      return kExitOk;
    }
    if (*compare) {
      out << cmd_compare(report_a, report_b);
      return kExitOk;
    }
    if (*dump) {
      out << dump_scenario(resolve_scenario(dump_name));
      return kExitOk;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kExitConfig;
}

}  // namespace marlsim
