#ifndef MARLSIM_MAPPO_HPP_
#define MARLSIM_MAPPO_HPP_

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "marlsim/maddpg.hpp"
#include "marlsim/metrics.hpp"
#include "marlsim/net.hpp"
#include "marlsim/rng.hpp"
#include "marlsim/sim.hpp"
#include "marlsim/trace.hpp"

namespace marlsim {

struct PpoConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_eps = 0.2;
  int epochs = 4;
  int minibatches = 4;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  std::size_t horizon = 1024;  // env steps per update
  double lr = 3e-4;
  std::vector<std::size_t> hidden = {64, 64};
  double init_log_std = -0.5;

  void validate() const;
};

inline constexpr double kMinLogStd = -5.0;
inline constexpr double kMaxLogStd = 1.0;

// Diagonal Gaussian policy; the mean net ends in tanh.
struct StochasticActor {
  MlpParams mean;
  std::vector<double> log_std;  // one per action dimension
  AdamState mean_opt;
  std::vector<double> log_std_m, log_std_v;

  bool operator==(const StochasticActor&) const = default;
};

StochasticActor make_actor(const std::vector<std::size_t>& hidden, double init_log_std, std::uint64_t seed);

double gaussian_log_prob(std::span<const double> mean, std::span<const double> log_std, std::span<const double> x);
double gaussian_entropy(std::span<const double> log_std);

struct StochasticAction {
  std::vector<double> raw;      // pre-clamp sample
  std::vector<double> clamped;  // in [-1, 1]
  double log_prob = 0.0;        // of `raw`
  double entropy = 0.0;
};

StochasticAction act_stochastic(const StochasticActor& actor, std::span<const double> obs, Rng& rng);
std::vector<double> act_mean(const StochasticActor& actor, std::span<const double> obs);

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

// values has one more entry than rewards: the last is the bootstrap value.
// The recursion stops at dones.
GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const double> dones, double gamma, double lambda);

// next_values[t] is V of the state actually reached after step t; cuts[t]
// stops the recursion without zeroing the bootstrap (horizon or episode end).
GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const double> next_values, std::span<const double> dones,
                      std::span<const double> cuts, double gamma, double lambda);

// In-place, mean 0 and population std 1. No-op for fewer than 2 entries.
void normalize_advantages(std::span<double> advantages);

// min(rho * A, clamp(rho, 1 - eps, 1 + eps) * A)
double clipped_surrogate(double ratio, double advantage, double eps);

struct RolloutStep {
  JointObservation obs;
  JointObservation next_obs;
  std::vector<double> actions;    // n x 2, pre-clamp samples
  std::vector<double> log_probs;  // n
  std::vector<double> rewards;    // n
  std::vector<std::uint8_t> active;
  std::vector<std::uint8_t> dones;
  bool episode_end = false;

  bool operator==(const RolloutStep&) const = default;
};

// exp(log pi(a|o) - stored log prob) for every step where `agent` acted,
// recomputed in one batch with the actor's current parameters.
std::vector<double> policy_ratios(const StochasticActor& actor, const std::vector<RolloutStep>& rollout,
                                  std::size_t agent);

struct PpoReport {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double total_loss = 0.0;
  std::size_t samples = 0;
};

class Mappo {
 public:
  Mappo(std::size_t n_agents, PpoConfig config, std::uint64_t seed);

  std::size_t n_agents() const { return actors_.size(); }
  const PpoConfig& config() const { return config_; }
  std::vector<StochasticActor>& actors() { return actors_; }
  const std::vector<StochasticActor>& actors() const { return actors_; }
  MlpParams& value_net() { return value_net_; }
  const MlpParams& value_net() const { return value_net_; }
  AdamState& value_opt() { return value_opt_; }
  const AdamState& value_opt() const { return value_opt_; }

  // Joint observation rows -> one value per agent.
  Tensor2 values(const Tensor2& joint_obs) const;

  // Acts for agents flagged in `alive`; others get zero actions.
  std::vector<StochasticAction> act(const JointObservation& obs, std::span<const std::uint8_t> alive,
                                    Rng& rng) const;
  std::vector<AgentAction> act_greedy(const JointObservation& obs) const;

  // Consumes the rollout (cleared on return, including on error).
  PpoReport update(std::vector<RolloutStep>& rollout, Rng& rng);

 private:
  PpoConfig config_;
  std::vector<StochasticActor> actors_;
  MlpParams value_net_;
  AdamState value_opt_;
};

struct MappoBudget {
  std::int64_t episodes = -1;   // negative: unlimited
  std::int64_t env_steps = -1;  // negative: unlimited
};

class MappoTrainer {
 public:
  MappoTrainer(const Scenario& scenario, std::size_t n_agents, PpoConfig config, MappoBudget budget,
               std::uint64_t seed);

  // Returns nothing when the step budget cut the episode short.
  std::optional<EpisodeMetrics> run_episode(const Sinks& sinks = {});
  void train(const Sinks& sinks = {});
  bool finished() const;

  const World& world() const { return world_; }
  std::size_t n_agents() const { return n_agents_; }
  std::uint64_t seed() const { return seed_; }
  const MappoBudget& budget() const { return budget_; }
  std::int64_t episode() const { return episode_; }
  std::int64_t env_steps() const { return env_steps_; }
  std::int64_t updates() const { return updates_; }

  Mappo& learner() { return learner_; }
  const Mappo& learner() const { return learner_; }
  Rng& rng() { return rng_; }
  const Rng& rng() const { return rng_; }
  std::vector<RolloutStep>& rollout() { return rollout_; }
  const std::vector<RolloutStep>& rollout() const { return rollout_; }
  const std::vector<EpisodeMetrics>& history() const { return history_; }

  void restore(std::int64_t episode, std::int64_t env_steps, std::int64_t updates,
               std::vector<EpisodeMetrics> history);

 private:
  World world_;
  std::size_t n_agents_;
  PpoConfig config_;
  MappoBudget budget_;
  std::uint64_t seed_;
  Mappo learner_;
  Rng rng_;
  std::vector<RolloutStep> rollout_;
  std::int64_t episode_ = 0;
  std::int64_t env_steps_ = 0;
  std::int64_t updates_ = 0;
  std::vector<EpisodeMetrics> history_;
};

struct MappoResult {
  Mappo learner;
  std::vector<EpisodeMetrics> metrics;
};

MappoResult train_mappo(const Scenario& scenario, std::size_t n_agents, const PpoConfig& config,
                        std::int64_t total_env_steps, std::uint64_t seed, const Sinks& sinks = {});

// Mean-action rollouts.
std::vector<EpisodeMetrics> evaluate_mappo(const Mappo& learner, const World& world, std::int64_t episodes,
                                           std::uint64_t seed, const Sinks& sinks = {});

}  // namespace marlsim

#endif  // MARLSIM_MAPPO_HPP_
