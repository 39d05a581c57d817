#include "marlsim/maddpg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "marlsim/errors.hpp"

namespace marlsim {

namespace {

constexpr std::size_t kObs = ObsLayout::kWidth;

enum SeedStream : std::uint64_t { kActorSeed = 1, kCriticSeed = 2, kTrainerRng = 3, kEpisodeSeed = 4 };

std::vector<std::size_t> layers(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
  std::vector<std::size_t> sizes{in};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  return sizes;
}

Tensor2 agent_columns(const Tensor2& joint, std::size_t agent, std::size_t width) {
  Tensor2 out(joint.rows, width);
  for (std::size_t r = 0; r < joint.rows; ++r) {
    const double* src = joint.data.data() + r * joint.cols + agent * width;
    std::copy(src, src + width, out.data.data() + r * width);
  }
  return out;
}

bool finite(double v) { return std::isfinite(v); }

}  // namespace

void MaddpgConfig::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("maddpg: gamma must be in (0, 1)");
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("maddpg: tau must be in (0, 1]");
  if (!(actor_lr > 0.0) || !(critic_lr > 0.0)) throw ConfigError("maddpg: learning rates must be > 0");
  if (batch == 0) throw ConfigError("maddpg: batch must be > 0");
  if (warmup_steps < 0) throw ConfigError("maddpg: warmup_steps must be >= 0");
  if (!(sigma_0 > 0.0) || !(sigma_min > 0.0) || sigma_min > sigma_0) {
    throw ConfigError("maddpg: need 0 < sigma_min <= sigma_0");
  }
  if (!(sigma_decay > 0.0 && sigma_decay <= 1.0)) throw ConfigError("maddpg: sigma_decay must be in (0, 1]");
  if (updates_per_env_step < 1 || update_every < 1) throw ConfigError("maddpg: update counts must be >= 1");
  if (hidden.empty()) throw ConfigError("maddpg: need at least one hidden layer");
  if (!(finetune_fraction >= 0.0 && finetune_fraction <= 1.0)) {
    throw ConfigError("maddpg: finetune_fraction must be in [0, 1]");
  }
  if (per.capacity == 0 || (per.capacity & (per.capacity - 1)) != 0) {
    throw ConfigError("maddpg: buffer capacity must be a power of two");
  }
  if (per.capacity < batch) throw ConfigError("maddpg: buffer capacity smaller than batch");
}

// ---------------------------------------------------------------------------

Maddpg::Maddpg(std::size_t n_agents, MaddpgConfig config, std::uint64_t seed) : config_(std::move(config)) {
  if (n_agents == 0) throw std::invalid_argument("maddpg needs at least one agent");
  config_.validate();
  const std::size_t critic_in = n_agents * (kObs + kActionDim);
  for (std::size_t i = 0; i < n_agents; ++i) {
    MaddpgAgent a;
    a.actor = init_params(layers(kObs, config_.hidden, kActionDim), Activation::kTanh,
                          derive_seed(seed, kActorSeed * 1000 + i));
    a.critic = init_params(layers(critic_in, config_.hidden, 1), Activation::kLinear,
                           derive_seed(seed, kCriticSeed * 1000 + i));
    a.target_actor = a.actor;
    a.target_critic = a.critic;
    a.actor_opt = AdamState::zeros_like(a.actor);
    a.critic_opt = AdamState::zeros_like(a.critic);
    a.noise_sigma = config_.sigma_0;
    agents_.push_back(std::move(a));
  }
}

void Maddpg::set_sigma(double sigma) {
  const double s = std::clamp(sigma, config_.sigma_min, config_.sigma_0);
  for (auto& a : agents_) a.noise_sigma = s;
}

JointAction Maddpg::act(const JointObservation& obs, bool explore, Rng& rng) const {
  if (obs.n_agents != n_agents()) throw ShapeError("act: observation agent count mismatch");
  JointAction out;
  out.raw.resize(n_agents() * kActionDim);
  out.normalized.resize(out.raw.size());
  for (std::size_t i = 0; i < n_agents(); ++i) {
    const auto o = obs.agent(i);
    const Tensor2 in(1, kObs, std::vector<double>(o.begin(), o.end()));
    const Tensor2 mu = forward(agents_[i].actor, in);
    for (std::size_t d = 0; d < kActionDim; ++d) {
      double a = mu.data[d];
      if (explore) a += agents_[i].noise_sigma * rng.normal();
      out.raw[i * kActionDim + d] = a;
      out.normalized[i * kActionDim + d] = std::clamp(a, -1.0, 1.0);
    }
    out.commands.push_back(scale_action(out.normalized[i * kActionDim], out.normalized[i * kActionDim + 1]));
  }
  return out;
}

namespace {

template <typename Get>
UpdateBatch assemble(std::size_t b, Get get) {
  if (b == 0) throw std::invalid_argument("make_batch: empty batch");
  const std::size_t n = get(0).obs.n_agents;
  UpdateBatch batch;
  batch.n_agents = n;
  batch.obs = Tensor2(b, n * kObs);
  batch.actions = Tensor2(b, n * kActionDim);
  batch.rewards = Tensor2(b, n);
  batch.next_obs = Tensor2(b, n * kObs);
  batch.dones = Tensor2(b, n);
  batch.active = Tensor2(b, n);
  for (std::size_t r = 0; r < b; ++r) {
    const Transition& t = get(r);
    if (t.obs.n_agents != n) throw ShapeError("make_batch: mixed agent counts");
    std::copy(t.obs.data.begin(), t.obs.data.end(), batch.obs.row(r).begin());
    std::copy(t.actions.begin(), t.actions.end(), batch.actions.row(r).begin());
    std::copy(t.rewards.begin(), t.rewards.end(), batch.rewards.row(r).begin());
    std::copy(t.next_obs.data.begin(), t.next_obs.data.end(), batch.next_obs.row(r).begin());
    for (std::size_t i = 0; i < n; ++i) {
      batch.dones(r, i) = t.dones[i] ? 1.0 : 0.0;
      batch.active(r, i) = t.active[i] ? 1.0 : 0.0;
    }
  }
  return batch;
}

}  // namespace

UpdateBatch make_batch(std::span<const Transition> ts) {
  return assemble(ts.size(), [&](std::size_t r) -> const Transition& { return ts[r]; });
}

UpdateBatch make_batch(const PrioritizedReplay& buffer, std::span<const SampleRef> refs) {
  return assemble(refs.size(), [&](std::size_t r) -> const Transition& { return buffer.transition(refs[r].slot); });
}

Tensor2 Maddpg::critic_input(const UpdateBatch& batch) const {
  const std::size_t n = n_agents();
  Tensor2 x(batch.size(), n * (kObs + kActionDim));
  for (std::size_t r = 0; r < batch.size(); ++r) {
    auto row = x.row(r);
    const auto o = batch.obs.row(r);
    const auto a = batch.actions.row(r);
    std::copy(o.begin(), o.end(), row.begin());
    std::copy(a.begin(), a.end(), row.begin() + static_cast<std::ptrdiff_t>(n * kObs));
  }
  return x;
}

Tensor2 Maddpg::critic_targets(const UpdateBatch& batch, double gamma) const {
  const std::size_t n = n_agents(), b = batch.size();
  Tensor2 x_next(b, n * (kObs + kActionDim));
  for (std::size_t r = 0; r < b; ++r) {
    const auto o = batch.next_obs.row(r);
    std::copy(o.begin(), o.end(), x_next.row(r).begin());
  }
  for (std::size_t j = 0; j < n; ++j) {
    const Tensor2 mu = forward(agents_[j].target_actor, agent_columns(batch.next_obs, j, kObs));
    for (std::size_t r = 0; r < b; ++r) {
      for (std::size_t d = 0; d < kActionDim; ++d) x_next(r, n * kObs + j * kActionDim + d) = mu(r, d);
    }
  }
  Tensor2 y(b, n);
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor2 q = forward(agents_[i].target_critic, x_next);
    for (std::size_t r = 0; r < b; ++r) {
      y(r, i) = batch.rewards(r, i) + gamma * (1.0 - batch.dones(r, i)) * q(r, 0);
    }
  }
  return y;
}

CriticUpdate Maddpg::update_critic(std::size_t agent, const UpdateBatch& batch, const Tensor2& targets,
                                   std::span<const double> is_weights, double lr) {
  const std::size_t b = batch.size();
  if (!is_weights.empty() && is_weights.size() != b) throw ShapeError("update_critic: weight count mismatch");
  if (targets.rows != b || targets.cols != n_agents()) throw ShapeError("update_critic: target shape mismatch");
  MaddpgAgent& a = agents_.at(agent);
  ForwardCache cache;
  const Tensor2 q = forward(a.critic, critic_input(batch), &cache);
  CriticUpdate out;
  out.td_abs.assign(b, 0.0);
  Tensor2 grad(b, 1);
  const double inv_b = 1.0 / static_cast<double>(b);
  double loss = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    const double mask = batch.active(r, agent);
    const double delta = targets(r, agent) - q(r, 0);
    double sq = mask * delta * delta;
    double g = -2.0 * delta * mask * inv_b;
    if (!is_weights.empty()) {
      sq *= is_weights[r];
      g *= is_weights[r];
    }
    loss += sq;
    grad(r, 0) = g;
    out.td_abs[r] = mask * std::abs(delta);
  }
  out.loss = loss * inv_b;
  if (!finite(out.loss)) throw NumericError("critic loss for agent " + std::to_string(agent) + " is not finite");
  const MlpGrads grads = backward(a.critic, cache, grad);
  adam_step(a.critic, grads, a.critic_opt, lr);
  return out;
}

ActorGradient Maddpg::actor_gradient(std::size_t agent, const UpdateBatch& batch) const {
  const std::size_t n = n_agents(), b = batch.size();
  const MaddpgAgent& a = agents_.at(agent);
  ForwardCache actor_cache;
  const Tensor2 mu = forward(a.actor, agent_columns(batch.obs, agent, kObs), &actor_cache);
  Tensor2 x = critic_input(batch);
  const std::size_t slot = n * kObs + agent * kActionDim;
  for (std::size_t r = 0; r < b; ++r) {
    for (std::size_t d = 0; d < kActionDim; ++d) x(r, slot + d) = mu(r, d);
  }
  ForwardCache critic_cache;
  const Tensor2 q = forward(a.critic, x, &critic_cache);
  double sum_q = 0.0, count = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    sum_q += batch.active(r, agent) * q(r, 0);
    count += batch.active(r, agent);
  }
  // loss = -(masked mean of Q)
  Tensor2 dq(b, 1);
  if (count > 0.0) {
    for (std::size_t r = 0; r < b; ++r) dq(r, 0) = -batch.active(r, agent) / count;
  }
  const MlpGrads critic_grads = backward(a.critic, critic_cache, dq);
  Tensor2 dmu(b, kActionDim);
  for (std::size_t r = 0; r < b; ++r) {
    for (std::size_t d = 0; d < kActionDim; ++d) dmu(r, d) = critic_grads.input(r, slot + d);
  }
  ActorGradient out;
  out.objective = count > 0.0 ? sum_q / count : 0.0;
  out.grads = backward(a.actor, actor_cache, dmu);
  return out;
}

double Maddpg::update_actor(std::size_t agent, const UpdateBatch& batch, double lr) {
  ActorGradient g = actor_gradient(agent, batch);
  if (!finite(g.objective)) throw NumericError("actor objective for agent " + std::to_string(agent) + " is not finite");
  adam_step(agents_.at(agent).actor, g.grads, agents_.at(agent).actor_opt, lr);
  return g.objective;
}

void Maddpg::update_targets(double tau) {
  for (auto& a : agents_) {
    polyak_update(a.target_actor, a.actor, tau);
    polyak_update(a.target_critic, a.critic, tau);
  }
}

UpdateReport Maddpg::update_on_batch(const UpdateBatch& batch, std::span<const double> is_weights, double lr_scale) {
  const std::size_t n = n_agents(), b = batch.size();
  const Tensor2 y = critic_targets(batch, config_.gamma);
  UpdateReport rep;
  std::vector<double> td_sum(b, 0.0), active_count(b, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const CriticUpdate cu = update_critic(i, batch, y, is_weights, config_.critic_lr * lr_scale);
    rep.critic_loss.push_back(cu.loss);
    for (std::size_t r = 0; r < b; ++r) {
      td_sum[r] += cu.td_abs[r];
      active_count[r] += batch.active(r, i);
    }
  }
  rep.td_abs.resize(b);
  for (std::size_t r = 0; r < b; ++r) rep.td_abs[r] = active_count[r] > 0.0 ? td_sum[r] / active_count[r] : 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    rep.actor_objective.push_back(update_actor(i, batch, config_.actor_lr * lr_scale));
  }
  update_targets(config_.tau);
  return rep;
}

UpdateReport Maddpg::update(PrioritizedReplay& buffer, double beta, double lr_scale, Rng& rng) {
  const SampledBatch sampled = buffer.sample(config_.batch, beta, rng);
  const UpdateBatch batch = make_batch(buffer, sampled.refs);
  const std::size_t n = n_agents(), b = batch.size();
  const Tensor2 y = critic_targets(batch, config_.gamma);
  UpdateReport rep;
  std::vector<double> td_sum(b, 0.0), active_count(b, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const CriticUpdate cu = update_critic(i, batch, y, sampled.is_weights, config_.critic_lr * lr_scale);
    rep.critic_loss.push_back(cu.loss);
    for (std::size_t r = 0; r < b; ++r) {
      td_sum[r] += cu.td_abs[r];
      active_count[r] += batch.active(r, i);
    }
  }
  rep.td_abs.resize(b);
  for (std::size_t r = 0; r < b; ++r) rep.td_abs[r] = active_count[r] > 0.0 ? td_sum[r] / active_count[r] : 0.0;
  buffer.update_priorities(sampled.refs, rep.td_abs);
  for (std::size_t i = 0; i < n; ++i) {
    rep.actor_objective.push_back(update_actor(i, batch, config_.actor_lr * lr_scale));
  }
  update_targets(config_.tau);
  return rep;
}

// ---------------------------------------------------------------------------

MaddpgTrainer::MaddpgTrainer(const Scenario& scenario, std::size_t n_agents, MaddpgConfig config,
                             std::int64_t total_episodes, std::uint64_t seed)
    : world_(scenario),
      n_agents_(n_agents),
      config_(std::move(config)),
      total_episodes_(total_episodes),
      seed_(seed),
      learner_(n_agents, config_, seed),
      buffer_(n_agents, config_.per),
      rng_(derive_seed(seed, kTrainerRng)) {
  if (n_agents < 1 || n_agents > world_.max_agents()) {
    throw ConfigError("agent count " + std::to_string(n_agents) + " exceeds the scenario's " +
                      std::to_string(world_.max_agents()) + " spawns");
  }
  if (total_episodes < 0) throw ConfigError("episode budget must be >= 0");
}

double MaddpgTrainer::beta() const {
  const double span = std::max<std::int64_t>(1, total_episodes_ - 1);
  const double frac = std::min(1.0, static_cast<double>(episode_) / span);
  return config_.per.beta_start + (config_.per.beta_end - config_.per.beta_start) * frac;
}

double MaddpgTrainer::lr_scale() const {
  const double start = (1.0 - config_.finetune_fraction) * static_cast<double>(total_episodes_);
  return config_.finetune_fraction > 0.0 && static_cast<double>(episode_) >= start ? 0.5 : 1.0;
}

void MaddpgTrainer::restore(std::int64_t episode, std::int64_t env_steps, std::vector<EpisodeMetrics> history) {
  episode_ = episode;
  env_steps_ = env_steps;
  history_ = std::move(history);
}

EpisodeMetrics MaddpgTrainer::run_episode(const Sinks& sinks) {
  const std::int64_t ep = episode_;
  learner_.set_sigma(config_.sigma_0 * std::pow(config_.sigma_decay, static_cast<double>(ep)));
  auto [state, obs] = world_.reset(n_agents_, derive_seed(seed_, kEpisodeSeed * 1'000'000'007ULL + ep));
  EpisodeLog log;
  log.begin(ep, state, world_.scenario().max_steps);
  const double beta_now = beta();
  const double lr_now = lr_scale();
  double loss_sum = 0.0, objective_sum = 0.0;
  int updates = 0;

  while (!state.done) {
    const JointAction action = learner_.act(obs, true, rng_);
    const SimState before = state;
    StepResult res = world_.step(state, action.commands);

    Transition t;
    t.obs = obs;
    t.actions = action.normalized;
    t.rewards = res.rewards;
    t.next_obs = res.obs;
    t.done = res.done;
    t.events = res.events;
    t.episode_id = ep;
    t.step_index = before.step;
    EventScore score;
    for (std::size_t i = 0; i < n_agents_; ++i) {
      const VehicleState& vb = before.vehicles[i];
      const VehicleState& va = state.vehicles[i];
      t.active.push_back(vb.alive());
      t.dones.push_back(!va.alive());
      if (!vb.alive()) continue;
      score += event_score_components(res.events[i], va.speed - vb.speed,
                                       world_.completion_fraction(va, i) - world_.completion_fraction(vb, i),
                                       config_.event_weights);
    }
    PriorityRecord rec;
    rec.td_estimated = true;
    rec.event_score = score.total();
    rec.components = score;
    const PriorityRecord stored = buffer_.insert(t, rec);

    if (sinks.on_trace) {
      StepTrace tr = make_step_trace(world_, ep, before, obs, state, res.events);
      tr.priority = TracedPriority{stored.priority, stored.td_abs, stored.td_estimated, stored.components};
      sinks.on_trace(tr);
    }
    log.append(before, state, res.events);
    obs = std::move(res.obs);
    ++env_steps_;

    if (env_steps_ >= config_.warmup_steps && buffer_.size() >= config_.batch &&
        env_steps_ % config_.update_every == 0) {
      for (int u = 0; u < config_.updates_per_env_step; ++u) {
        const UpdateReport rep = learner_.update(buffer_, beta_now, lr_now, rng_);
        for (double l : rep.critic_loss) loss_sum += l;
        for (double o : rep.actor_objective) objective_sum += o;
        ++updates;
      }
    }
  }

  EpisodeMetrics m = score_episode(log);
  history_.push_back(m);
  ++episode_;
  if (sinks.on_episode) sinks.on_episode(m);
  if (sinks.on_telemetry) {
    const BufferStats st = buffer_.stats();
    const double denom = updates > 0 ? static_cast<double>(updates * n_agents_) : 1.0;
    sinks.on_telemetry({ep,
                        {{"sigma", learner_.agents().front().noise_sigma},
                         {"beta", beta_now},
                         {"lr_scale", lr_now},
                         {"updates", static_cast<double>(updates)},
                         {"critic_loss", loss_sum / denom},
                         {"actor_objective", objective_sum / denom},
                         {"buffer_size", static_cast<double>(st.size)},
                         {"max_priority", st.max_priority},
                         {"stale_skips", static_cast<double>(st.stale_skips)}}});
  }
  return m;
}

void MaddpgTrainer::train(const Sinks& sinks) {
  while (!finished()) run_episode(sinks);
}

MaddpgResult train_maddpg(const Scenario& scenario, std::size_t n_agents, const MaddpgConfig& config,
                          std::int64_t episodes, std::uint64_t seed, const Sinks& sinks) {
  MaddpgTrainer trainer(scenario, n_agents, config, episodes, seed);
  trainer.train(sinks);
  return {trainer.learner(), trainer.history()};
}

std::vector<EpisodeMetrics> evaluate_maddpg(const Maddpg& learner, const World& world, std::int64_t episodes,
                                            std::uint64_t seed, const Sinks& sinks) {
  std::vector<EpisodeMetrics> out;
  Rng unused(seed);
  for (std::int64_t ep = 0; ep < episodes; ++ep) {
    auto [state, obs] = world.reset(learner.n_agents(), derive_seed(seed, kEpisodeSeed * 1'000'000'007ULL + ep));
    EpisodeLog log;
    log.begin(ep, state, world.scenario().max_steps);
    while (!state.done) {
      const JointAction action = learner.act(obs, false, unused);
      const SimState before = state;
      StepResult res = world.step(state, action.commands);
      if (sinks.on_trace) sinks.on_trace(make_step_trace(world, ep, before, obs, state, res.events));
      log.append(before, state, res.events);
      obs = std::move(res.obs);
    }
    out.push_back(score_episode(log));
    if (sinks.on_episode) sinks.on_episode(out.back());
  }
  return out;
}

}  // namespace marlsim
