#ifndef MARLSIM_MADDPG_HPP_
#define MARLSIM_MADDPG_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include "marlsim/metrics.hpp"
#include "marlsim/net.hpp"
#include "marlsim/per_buffer.hpp"
#include "marlsim/rng.hpp"
#include "marlsim/sim.hpp"
#include "marlsim/trace.hpp"

namespace marlsim {

inline constexpr std::size_t kActionDim = 2;

// Map a normalized action in [-1, 1]^2 to vehicle commands.
inline AgentAction scale_action(double accel_unit, double yaw_unit) {
  return {accel_unit * VehicleLimits::kMaxAccel, yaw_unit * VehicleLimits::kMaxYawRate};
}

struct MaddpgConfig {
  double gamma = 0.95;
  double tau = 0.01;
  double actor_lr = 1e-4;
  double critic_lr = 1e-3;
  std::size_t batch = 256;
  std::int64_t warmup_steps = 2000;
  double sigma_0 = 0.3;
  double sigma_min = 0.05;
  double sigma_decay = 0.9995;  // per episode
  int updates_per_env_step = 1;
  int update_every = 1;         // env steps between update rounds
  std::vector<std::size_t> hidden = {128, 128};
  double finetune_fraction = 0.2;  // final share of episodes trained at half learning rates
  PerConfig per;
  EventWeights event_weights;

  void validate() const;
};

struct MaddpgAgent {
  MlpParams actor, target_actor;
  MlpParams critic, target_critic;
  AdamState actor_opt, critic_opt;
  double noise_sigma = 0.0;

  bool operator==(const MaddpgAgent&) const = default;
};

// Pre-clamp samples plus the clamped and physical versions of the same actions.
struct JointAction {
  std::vector<double> raw;         // n x 2
  std::vector<double> normalized;  // n x 2, clamped to [-1, 1]
  std::vector<AgentAction> commands;
};

// Replay minibatch laid out for the networks (rows are samples).
struct UpdateBatch {
  std::size_t n_agents = 0;
  Tensor2 obs;        // B x n*23
  Tensor2 actions;    // B x n*2
  Tensor2 rewards;    // B x n
  Tensor2 next_obs;   // B x n*23
  Tensor2 dones;      // B x n, 1 when the agent is terminal after the step
  Tensor2 active;     // B x n, 1 when the agent acted
  std::size_t size() const { return obs.rows; }
};

UpdateBatch make_batch(const PrioritizedReplay& buffer, std::span<const SampleRef> refs);
UpdateBatch make_batch(std::span<const Transition> transitions);

struct CriticUpdate {
  double loss = 0.0;
  std::vector<double> td_abs;  // per sample, 0 where the agent was inactive
};

struct ActorGradient {
  double objective = 0.0;  // mean Q over samples where the agent acted
  MlpGrads grads;          // gradient of the loss (-objective)
};

struct UpdateReport {
  std::vector<double> critic_loss;
  std::vector<double> actor_objective;
  std::vector<double> td_abs;  // per sample, averaged over active agents
};

class Maddpg {
 public:
  Maddpg(std::size_t n_agents, MaddpgConfig config, std::uint64_t seed);

  std::size_t n_agents() const { return agents_.size(); }
  const MaddpgConfig& config() const { return config_; }
  std::vector<MaddpgAgent>& agents() { return agents_; }
  const std::vector<MaddpgAgent>& agents() const { return agents_; }

  JointAction act(const JointObservation& obs, bool explore, Rng& rng) const;

  // y_i = r_i + gamma (1 - done_i) Q'_i(s', mu'(o')), returned as B x n.
  Tensor2 critic_targets(const UpdateBatch& batch, double gamma) const;

  // Empty `is_weights` means uniform replay (plain masked MSE).
  CriticUpdate update_critic(std::size_t agent, const UpdateBatch& batch, const Tensor2& targets,
                             std::span<const double> is_weights, double lr);

  ActorGradient actor_gradient(std::size_t agent, const UpdateBatch& batch) const;
  double update_actor(std::size_t agent, const UpdateBatch& batch, double lr);

  void update_targets(double tau);

  // sample -> targets -> critics -> priorities -> actors -> polyak
  UpdateReport update(PrioritizedReplay& buffer, double beta, double lr_scale, Rng& rng);
  // Same sequence on a fixed batch; `is_weights` empty for uniform replay.
  UpdateReport update_on_batch(const UpdateBatch& batch, std::span<const double> is_weights, double lr_scale);

  void set_sigma(double sigma);

 private:
  Tensor2 critic_input(const UpdateBatch& batch) const;

  MaddpgConfig config_;
  std::vector<MaddpgAgent> agents_;
};

// Everything needed to continue a MADDPG run exactly.
class MaddpgTrainer {
 public:
  MaddpgTrainer(const Scenario& scenario, std::size_t n_agents, MaddpgConfig config, std::int64_t total_episodes,
                std::uint64_t seed);

  // One exploration episode with learning; returns its metrics.
  EpisodeMetrics run_episode(const Sinks& sinks = {});
  void train(const Sinks& sinks = {});
  bool finished() const { return episode_ >= total_episodes_; }

  const World& world() const { return world_; }
  std::size_t n_agents() const { return n_agents_; }
  std::uint64_t seed() const { return seed_; }
  std::int64_t episode() const { return episode_; }
  std::int64_t env_steps() const { return env_steps_; }
  std::int64_t total_episodes() const { return total_episodes_; }
  double beta() const;
  double lr_scale() const;

  Maddpg& learner() { return learner_; }
  const Maddpg& learner() const { return learner_; }
  PrioritizedReplay& buffer() { return buffer_; }
  const PrioritizedReplay& buffer() const { return buffer_; }
  Rng& rng() { return rng_; }
  const Rng& rng() const { return rng_; }
  const std::vector<EpisodeMetrics>& history() const { return history_; }

  // Restore counters after loading a checkpoint.
  void restore(std::int64_t episode, std::int64_t env_steps, std::vector<EpisodeMetrics> history);

 private:
  World world_;
  std::size_t n_agents_;
  MaddpgConfig config_;
  std::int64_t total_episodes_;
  std::uint64_t seed_;
  Maddpg learner_;
  PrioritizedReplay buffer_;
  Rng rng_;
  std::int64_t episode_ = 0;
  std::int64_t env_steps_ = 0;
  std::vector<EpisodeMetrics> history_;
};

struct MaddpgResult {
  Maddpg learner;
  std::vector<EpisodeMetrics> metrics;
};

MaddpgResult train_maddpg(const Scenario& scenario, std::size_t n_agents, const MaddpgConfig& config,
                          std::int64_t episodes, std::uint64_t seed, const Sinks& sinks = {});

// Greedy rollouts; never touches the learner.
std::vector<EpisodeMetrics> evaluate_maddpg(const Maddpg& learner, const World& world, std::int64_t episodes,
                                            std::uint64_t seed, const Sinks& sinks = {});

}  // namespace marlsim

#endif  // MARLSIM_MADDPG_HPP_
