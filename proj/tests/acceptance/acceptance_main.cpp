// Acceptance runner: one PASS/FAIL line per criterion. Pass criterion
// numbers as arguments to run a subset. Criterion 8 is reported but does
// not affect the exit status. --results FILE also writes the lines to FILE.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "marlsim/app.hpp"
#include "marlsim/maddpg.hpp"
#include "marlsim/mappo.hpp"
#include "marlsim/metrics.hpp"
#include "marlsim/per_buffer.hpp"
#include "marlsim/rng.hpp"
#include "marlsim/scenario.hpp"
#include "support/oracles.hpp"

using namespace marlsim;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 1. Analytic gradients against central differences.
Outcome gradients() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    auto c = oracle::random_net_case(rng);
    ForwardCache cache;
    forward(c.params, c.input, &cache);
    const MlpGrads g = backward(c.params, cache, c.output_grad);
    worst = std::max(worst, oracle::max_gradient_error(c.params, c.input, c.output_grad, g));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 10.0, fmt("max rel err %.3g over 50 nets in %.2f s (need < 1e-4, < 10 s)", worst, secs)};
}

// 2. Stratified PER sampling against the exact distribution.
Outcome per_distribution() {
  const auto t0 = Clock::now();
  PerConfig cfg;
  cfg.capacity = 16;
  PrioritizedReplay buf(1, cfg);
  std::vector<double> exact(16);
  double total = 0.0;
  for (int k = 0; k < 16; ++k) {
    Transition t;
    t.obs.n_agents = t.next_obs.n_agents = 1;
    t.obs.data.assign(ObsLayout::kWidth, 0.0);
    t.next_obs.data = t.obs.data;
    t.actions.assign(2, 0.0);
    t.rewards = {0.0};
    t.dones = {0};
    t.active = {1};
    t.events.resize(1);
    PriorityRecord r;
    r.td_abs = 0.25 * (1 + k % 7);
    r.event_score = (k % 4 == 0) ? 2.0 : 0.0;
    const PriorityRecord stored = buf.insert(t, r);
    // exact P(i) from the closed form, not from the tree
    exact[k] = std::pow(stored.td_abs + stored.event_score + cfg.eps, cfg.alpha);
    total += exact[k];
  }
  std::vector<double> counts(16, 0.0);
  Rng rng(99);
  const int rounds = 100000 / 16;
  for (int r = 0; r < rounds; ++r) {
    for (const auto& ref : buf.sample(16, 0.4, rng).refs) counts[ref.slot] += 1.0;
  }
  double tv = 0.0;
  for (int k = 0; k < 16; ++k) tv += std::abs(counts[k] / (rounds * 16.0) - exact[k] / total);
  tv *= 0.5;
  const double secs = seconds_since(t0);
  return {tv < 0.01 && secs < 5.0, fmt("TV distance %.4g with %d samples in %.2f s (need < 0.01, < 5 s)", tv,
                                       rounds * 16, secs)};
}

// 3. Recursive GAE against the explicit discounted sum.
Outcome gae_oracle() {
  Rng rng(31);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t T = 1 + rng.below(8);
    std::vector<double> r(T), v(T + 1), d(T);
    for (auto& x : r) x = rng.uniform(-2, 2);
    for (auto& x : v) x = rng.uniform(-2, 2);
    for (auto& x : d) x = rng.uniform() < 0.25 ? 1.0 : 0.0;
    const double gamma = rng.uniform(0.5, 1.0), lambda = rng.uniform(0.0, 1.0);
    const GaeResult g = compute_gae(r, v, d, gamma, lambda);
    const auto expect = oracle::brute_force_gae(r, v, d, gamma, lambda);
    for (std::size_t t = 0; t < T; ++t) worst = std::max(worst, std::abs(g.advantages[t] - expect[t]));
  }
  return {worst <= 1e-12, fmt("max abs diff %.3g over 100 rollouts, T <= 8 (need <= 1e-12)", worst)};
}

// 4. The three clip examples, exact equality.
Outcome clip_cases() {
  const double a = clipped_surrogate(1.0, 0.7, 0.2);
  const double b = clipped_surrogate(1.5, 1.0, 0.2);
  const double c = clipped_surrogate(0.5, -1.0, 0.2);
  const bool ok = a == 0.7 && b == 1.2 && c == -0.8;
  return {ok, fmt("rho=1,A=0.7 -> %.17g; rho=1.5,A=1 -> %.17g; rho=0.5,A=-1 -> %.17g (need 0.7, 1.2, -0.8)", a, b, c)};
}

// 5. Episode scoring against a re-derivation from the raw control history.
Outcome metrics_oracle() {
  Rng rng(55);
  int mismatches = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(4);
    const EpisodeLog log = oracle::synthetic_log(rng, n, 10 + static_cast<int>(rng.below(90)), 0.1);
    const EpisodeMetrics got = score_episode(log);
    const EpisodeMetrics want = oracle::rederive_metrics(log, 0.1);
    if (!oracle::metrics_match(got, want, 1e-9)) ++mismatches;
    worst = std::max(worst, std::abs(got.humanness - want.humanness) / std::max(1.0, std::abs(want.humanness)));
  }
  return {mismatches == 0, fmt("%d/100 logs disagree, worst humanness rel diff %.3g (need all within 1e-9)",
                               mismatches, worst)};
}

MaddpgConfig merge_maddpg_config() {
  MaddpgConfig c;
  c.hidden = {64, 64};
  c.batch = 64;
  c.update_every = 2;
  c.warmup_steps = 1000;
  c.per.capacity = std::size_t{1} << 17;
  return c;
}

// 6. MADDPG crash rate falls on the 2-agent merge.
Outcome maddpg_learning() {
  constexpr std::int64_t kEpisodes = 1000;
  const auto t0 = Clock::now();
  MaddpgTrainer trainer(builtin_scenario("merge"), 2, merge_maddpg_config(), kEpisodes, 3);
  trainer.train();
  const double secs = seconds_since(t0);
  const auto& h = trainer.history();
  double first = 0.0, last = 0.0;
  for (int k = 0; k < 200; ++k) {
    first += h[k].completion;
    last += h[h.size() - 200 + k].completion;
  }
  first /= 200.0;
  last /= 200.0;
  const bool ok = last <= 0.5 * first && secs <= 20 * 60.0;
  return {ok, fmt("crashes/episode first 200 %.3f, last 200 %.3f over %lld episodes (%lld env steps), %.0f s "
                  "(need last <= 0.5 * first, <= 1200 s)",
                  first, last, static_cast<long long>(kEpisodes), static_cast<long long>(trainer.env_steps()), secs)};
}

// 7. MAPPO reaches the goal on the single-agent straight road.
Outcome mappo_learning() {
  constexpr std::int64_t kSteps = 200000;
  const auto t0 = Clock::now();
  MappoTrainer trainer(builtin_scenario("straight"), 1, PpoConfig{}, {-1, kSteps}, 7);
  trainer.train();
  const double secs = seconds_since(t0);
  const auto& h = trainer.history();
  if (h.size() < 100) return {false, fmt("only %zu complete episodes", h.size())};
  int goals = 0;
  for (std::size_t k = h.size() - 100; k < h.size(); ++k) goals += h[k].goals;
  const double rate = goals / 100.0;
  return {rate >= 0.8 && secs <= 15 * 60.0,
          fmt("goal rate %.2f over the final 100 of %zu episodes, %lld env steps, %.0f s (need >= 0.8, <= 900 s)",
              rate, h.size(), static_cast<long long>(trainer.env_steps()), secs)};
}

// 8. Soft check: MADDPG rules <= MAPPO rules at matched env steps.
Outcome rules_direction() {
  constexpr std::int64_t kEpisodes = 300;
  constexpr std::int64_t kEvalEpisodes = 50;
  const Scenario merge = builtin_scenario("merge");
  const World world(merge);
  double maddpg_rules = 0.0, mappo_rules = 0.0;
  std::string per_seed;
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    MaddpgTrainer a(merge, 2, merge_maddpg_config(), kEpisodes, seed);
    a.train();
    MappoTrainer b(merge, 2, PpoConfig{}, {-1, a.env_steps()}, seed);
    b.train();
    const RunReport ra = aggregate(evaluate_maddpg(a.learner(), world, kEvalEpisodes, 1000 + seed));
    const RunReport rb = aggregate(evaluate_mappo(b.learner(), world, kEvalEpisodes, 1000 + seed));
    maddpg_rules += ra.rules.mean / 3.0;
    mappo_rules += rb.rules.mean / 3.0;
    auto goals = [](const RunReport& r) {
      double g = 0.0;
      for (const auto& e : r.episodes) g += e.goals;
      return g / static_cast<double>(r.episodes.size());
    };
    per_seed += fmt(" seed %llu at %lld steps: rules %.2f vs %.2f, crashes %.2f vs %.2f, goals %.2f vs %.2f;",
                    static_cast<unsigned long long>(seed), static_cast<long long>(a.env_steps()), ra.rules.mean,
                    rb.rules.mean, ra.completion.mean, rb.completion.mean, goals(ra), goals(rb));
  }
  return {maddpg_rules <= mappo_rules,
          fmt("mean eval rules MADDPG %.3f vs MAPPO %.3f (need MADDPG <= MAPPO; soft).", maddpg_rules, mappo_rules) +
              per_seed};
}

// 9. Reruns give byte-identical files; stop-and-resume matches an uninterrupted run.
Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "marlsim-acceptance-9";
  fs::remove_all(root);
  std::ostringstream sink;
  auto maddpg_request = [&](const std::string& dir, std::int64_t stop_after) {
    TrainRequest req;
    RunConfig& c = req.config;
    c.algo = Algo::kMaddpg;
    c.scenario_name = "merge";
    c.scenario = builtin_scenario("merge");
    c.agents = 2;
    c.seed = 5;
    c.episodes = 50;
    c.checkpoint_every = 10;
    c.maddpg.hidden = {32, 32};
    c.maddpg.batch = 32;
    c.maddpg.warmup_steps = 200;
    c.maddpg.per.capacity = 1 << 14;
    req.out = root / dir;
    req.stop_after = stop_after;
    return req;
  };
  auto mappo_request = [&](const std::string& dir, std::int64_t stop_after) {
    TrainRequest req;
    RunConfig& c = req.config;
    c.algo = Algo::kMappo;
    c.scenario_name = "merge";
    c.scenario = builtin_scenario("merge");
    c.agents = 2;
    c.seed = 5;
    c.episodes = 50;
    c.checkpoint_every = 10;
    c.ppo.hidden = {32, 32};
    c.ppo.horizon = 256;
    req.out = root / dir;
    req.stop_after = stop_after;
    return req;
  };
  std::vector<std::string> failures;
  auto same = [&](const fs::path& a, const fs::path& b, const std::string& what) {
    const std::string ta = slurp(a), tb = slurp(b);
    if (ta.empty() || ta != tb) failures.push_back(what);
  };

  for (const std::string algo : {"maddpg", "mappo"}) {
    auto request = algo == "maddpg" ? std::function(maddpg_request) : std::function(mappo_request);
    cmd_train(request(algo + "-a", -1), sink);
    cmd_train(request(algo + "-b", -1), sink);
    same(RunPaths{root / (algo + "-a")}.report(), RunPaths{root / (algo + "-b")}.report(), algo + " train rerun");
    same(RunPaths{root / (algo + "-a")}.trace_file(), RunPaths{root / (algo + "-b")}.trace_file(),
         algo + " trace rerun");

    cmd_train(request(algo + "-r", 25), sink);
    TrainRequest resume;
    resume.out = root / (algo + "-r");
    resume.resume = root / (algo + "-r");
    cmd_train(resume, sink);
    same(RunPaths{root / (algo + "-a")}.report(), RunPaths{root / (algo + "-r")}.report(), algo + " resume");
    same(RunPaths{root / (algo + "-a")}.trace_file(), RunPaths{root / (algo + "-r")}.trace_file(),
         algo + " resume trace");

    EvalRequest ev;
    ev.checkpoint = root / (algo + "-a");
    ev.episodes = 10;
    ev.seed = 3;
    const std::string e1 = report_to_text(cmd_eval(ev, sink));
    const std::string e2 = report_to_text(cmd_eval(ev, sink));
    if (e1 != e2) failures.push_back(algo + " eval rerun");
  }
  fs::remove_all(root);
  std::string detail = "train, eval and 50-episode resume (stopped at 25) for maddpg and mappo: ";
  if (failures.empty()) return {true, detail + "all byte-identical"};
  for (const auto& f : failures) detail += f + " differs; ";
  return {false, detail};
}

Transition random_transition(Rng& rng) {
  Transition t;
  t.obs.n_agents = t.next_obs.n_agents = 2;
  for (std::size_t k = 0; k < 2 * ObsLayout::kWidth; ++k) {
    t.obs.data.push_back(rng.uniform(-1, 1));
    t.next_obs.data.push_back(rng.uniform(-1, 1));
  }
  for (int k = 0; k < 4; ++k) t.actions.push_back(rng.uniform(-1, 1));
  for (int i = 0; i < 2; ++i) {
    t.rewards.push_back(rng.uniform(-2, 2));
    t.dones.push_back(rng.uniform() < 0.2 ? 1 : 0);
    t.active.push_back(1);
  }
  t.events.resize(2);
  return t;
}

// 10. alpha = beta = 0 with zero event weights is uniform-replay MADDPG; tau = 1 is a hard copy.
Outcome degeneracy() {
  MaddpgConfig c;
  c.hidden = {16, 16};
  c.batch = 32;
  c.per.capacity = 512;
  c.per.alpha = 0.0;
  c.event_weights = EventWeights{0, 0, 0, 0, 0};
  Maddpg prioritized(2, c, 41), uniform(2, c, 41);
  PrioritizedReplay buf(2, c.per);
  Rng data(42);
  std::vector<Transition> stored;
  for (int k = 0; k < 300; ++k) {
    AgentEvents ev;
    ev.collision = data.uniform() < 0.2;
    ev.linear_jerk = data.uniform(-30, 30);
    PriorityRecord r;
    r.td_abs = data.uniform(0, 4);
    r.event_score = event_score(ev, data.uniform(-2, 2), data.uniform(), c.event_weights);
    stored.push_back(random_transition(data));
    buf.insert(stored.back(), r);
  }
  Rng rng(43);
  bool identical = true;
  for (int round = 0; round < 20 && identical; ++round) {
    Rng probe = rng;
    const SampledBatch s = buf.sample(c.batch, 0.0, probe);
    std::vector<Transition> picked;
    for (const auto& ref : s.refs) picked.push_back(stored[ref.slot]);
    const UpdateReport a = prioritized.update(buf, 0.0, 1.0, rng);
    const UpdateReport b = uniform.update_on_batch(make_batch(picked), {}, 1.0);
    identical = a.critic_loss == b.critic_loss && a.actor_objective == b.actor_objective &&
                prioritized.agents() == uniform.agents();
  }

  MaddpgConfig hard = c;
  hard.tau = 1.0;
  Maddpg m(2, hard, 44);
  std::vector<Transition> batch(stored.begin(), stored.begin() + 32);
  m.update_on_batch(make_batch(batch), {}, 1.0);
  bool copied = true;
  for (const auto& a : m.agents()) copied = copied && a.target_actor == a.actor && a.target_critic == a.critic;
  MlpParams target = init_params({5, 7, 2}, Activation::kTanh, 1);
  const MlpParams online = init_params({5, 7, 2}, Activation::kTanh, 2);
  polyak_update(target, online, 1.0);
  copied = copied && target == online;

  return {identical && copied,
          fmt("20 sampled-batch updates bit-identical to uniform replay: %s; tau=1 targets equal online: %s",
              identical ? "yes" : "no", copied ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  std::ofstream results;
  for (int k = 1; k < argc; ++k) {
    if (std::string(argv[k]) == "--results" && k + 1 < argc) {
      results.open(argv[++k]);
      if (!results) {
        std::fprintf(stderr, "cannot write %s\n", argv[k]);
        return 2;
      }
    } else {
      only.insert(std::atoi(argv[k]));
    }
  }
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, gradients},      {2, per_distribution}, {3, gae_oracle},       {4, clip_cases},  {5, metrics_oracle},
      {6, maddpg_learning}, {7, mappo_learning},  {8, rules_direction}, {9, determinism}, {10, degeneracy},
  };
  int blocking_failures = 0;
  for (const auto& [id, run] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const std::string line =
        fmt("criterion %2d %s%s: ", id, o.pass ? "PASS" : "FAIL", id == 8 ? " (soft)" : "") + o.detail;
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    if (results.is_open()) results << line << '\n' << std::flush;
    if (!o.pass && id != 8) ++blocking_failures;
  }
  return blocking_failures == 0 ? 0 : 1;
}
