#include "marlsim/mappo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "marlsim/errors.hpp"

namespace marlsim {

namespace {

constexpr std::size_t kObs = ObsLayout::kWidth;
constexpr double kLog2Pi = 1.8378770664093453;  // ln(2 pi)

enum SeedStream : std::uint64_t { kActorSeed = 11, kValueSeed = 12, kTrainerRng = 13, kEpisodeSeed = 14 };

std::uint64_t episode_seed(std::uint64_t seed, std::int64_t ep) {
  return derive_seed(seed, kEpisodeSeed * 1'000'000'007ULL + static_cast<std::uint64_t>(ep));
}

std::vector<std::size_t> layers(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
  std::vector<std::size_t> sizes{in};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  return sizes;
}

double clamp_log_std(double v) { return std::clamp(v, kMinLogStd, kMaxLogStd); }

// One (step, agent) sample of the flattened rollout.
struct Sample {
  std::size_t step;
  std::size_t agent;
  double advantage;
  double ret;
};

}  // namespace

void PpoConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("mappo: gamma must be in (0, 1]");
  if (!(gae_lambda > 0.0 && gae_lambda <= 1.0)) throw ConfigError("mappo: gae_lambda must be in (0, 1]");
  if (!(clip_eps > 0.0)) throw ConfigError("mappo: clip_eps must be > 0");
  if (epochs < 1) throw ConfigError("mappo: epochs must be >= 1");
  if (minibatches < 1) throw ConfigError("mappo: minibatches must be >= 1");
  if (!(value_coef >= 0.0) || !(entropy_coef >= 0.0)) throw ConfigError("mappo: loss coefficients must be >= 0");
  if (horizon < 1) throw ConfigError("mappo: horizon must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("mappo: lr must be > 0");
  if (hidden.empty()) throw ConfigError("mappo: need at least one hidden layer");
  if (!(init_log_std >= kMinLogStd && init_log_std <= kMaxLogStd)) {
    throw ConfigError("mappo: init_log_std must be in [-5, 1]");
  }
}

StochasticActor make_actor(const std::vector<std::size_t>& hidden, double init_log_std, std::uint64_t seed) {
  StochasticActor a;
  a.mean = init_params(layers(kObs, hidden, kActionDim), Activation::kTanh, seed);
  a.log_std.assign(kActionDim, clamp_log_std(init_log_std));
  a.mean_opt = AdamState::zeros_like(a.mean);
  a.log_std_m.assign(kActionDim, 0.0);
  a.log_std_v.assign(kActionDim, 0.0);
  return a;
}

double gaussian_log_prob(std::span<const double> mean, std::span<const double> log_std, std::span<const double> x) {
  if (mean.size() != log_std.size() || mean.size() != x.size()) throw ShapeError("gaussian_log_prob: size mismatch");
  double lp = 0.0;
  for (std::size_t d = 0; d < mean.size(); ++d) {
    const double z = (x[d] - mean[d]) * std::exp(-log_std[d]);
    lp += -0.5 * z * z - log_std[d] - 0.5 * kLog2Pi;
  }
  return lp;
}

double gaussian_entropy(std::span<const double> log_std) {
  double h = 0.0;
  for (double ls : log_std) h += 0.5 + 0.5 * kLog2Pi + ls;
  return h;
}

StochasticAction act_stochastic(const StochasticActor& actor, std::span<const double> obs, Rng& rng) {
  const std::vector<double> mu = act_mean(actor, obs);
  StochasticAction a;
  a.raw.resize(mu.size());
  a.clamped.resize(mu.size());
  for (std::size_t d = 0; d < mu.size(); ++d) {
    a.raw[d] = mu[d] + std::exp(actor.log_std[d]) * rng.normal();
    a.clamped[d] = std::clamp(a.raw[d], -1.0, 1.0);
  }
  a.log_prob = gaussian_log_prob(mu, actor.log_std, a.raw);
  a.entropy = gaussian_entropy(actor.log_std);
  return a;
}

std::vector<double> act_mean(const StochasticActor& actor, std::span<const double> obs) {
  if (obs.size() != actor.mean.input_size()) throw ShapeError("act: observation width mismatch");
  const Tensor2 out = forward(actor.mean, Tensor2(1, obs.size(), std::vector<double>(obs.begin(), obs.end())));
  return out.data;
}

std::vector<double> policy_ratios(const StochasticActor& actor, const std::vector<RolloutStep>& rollout,
                                  std::size_t agent) {
  std::vector<std::size_t> steps;
  for (std::size_t t = 0; t < rollout.size(); ++t) {
    if (rollout[t].active.at(agent)) steps.push_back(t);
  }
  std::vector<double> out;
  if (steps.empty()) return out;
  Tensor2 x(steps.size(), kObs);
  for (std::size_t j = 0; j < steps.size(); ++j) {
    const auto o = rollout[steps[j]].obs.agent(agent);
    std::copy(o.begin(), o.end(), x.row(j).begin());
  }
  const Tensor2 mu = forward(actor.mean, x);
  for (std::size_t j = 0; j < steps.size(); ++j) {
    const RolloutStep& st = rollout[steps[j]];
    const std::span<const double> act(st.actions.data() + agent * kActionDim, kActionDim);
    out.push_back(std::exp(gaussian_log_prob(mu.row(j), actor.log_std, act) - st.log_probs[agent]));
  }
  return out;
}

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const double> dones, double gamma, double lambda) {
  const std::size_t t_max = rewards.size();
  if (values.size() != t_max + 1 || dones.size() != t_max) throw ShapeError("compute_gae: length mismatch");
  return compute_gae(rewards, values.first(t_max), values.subspan(1), dones, dones, gamma, lambda);
}

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const double> next_values, std::span<const double> dones,
                      std::span<const double> cuts, double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || next_values.size() != n || dones.size() != n || cuts.size() != n) {
    throw ShapeError("compute_gae: length mismatch");
  }
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double next_adv = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double not_done = 1.0 - dones[t];
    const double delta = rewards[t] + gamma * not_done * next_values[t] - values[t];
    const double carry = (1.0 - cuts[t]) * not_done;
    next_adv = delta + gamma * lambda * carry * next_adv;
    out.advantages[t] = next_adv;
    out.returns[t] = next_adv + values[t];
  }
  return out;
}

void normalize_advantages(std::span<double> adv) {
  if (adv.size() < 2) return;
  const double n = static_cast<double>(adv.size());
  const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / n;
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / n);
  for (double& a : adv) a = sd > 1e-12 ? (a - mean) / sd : a - mean;
}

double clipped_surrogate(double ratio, double advantage, double eps) {
  return std::min(ratio * advantage, std::clamp(ratio, 1.0 - eps, 1.0 + eps) * advantage);
}

// ---------------------------------------------------------------------------

Mappo::Mappo(std::size_t n_agents, PpoConfig config, std::uint64_t seed) : config_(std::move(config)) {
  if (n_agents == 0) throw std::invalid_argument("mappo needs at least one agent");
  config_.validate();
  for (std::size_t i = 0; i < n_agents; ++i) {
    actors_.push_back(make_actor(config_.hidden, config_.init_log_std, derive_seed(seed, kActorSeed * 1000 + i)));
  }
  value_net_ = init_params(layers(n_agents * kObs, config_.hidden, n_agents), Activation::kLinear,
                           derive_seed(seed, kValueSeed));
  value_opt_ = AdamState::zeros_like(value_net_);
}

Tensor2 Mappo::values(const Tensor2& joint_obs) const { return forward(value_net_, joint_obs); }

std::vector<StochasticAction> Mappo::act(const JointObservation& obs, std::span<const std::uint8_t> alive,
                                         Rng& rng) const {
  if (obs.n_agents != n_agents() || alive.size() != n_agents()) throw ShapeError("act: agent count mismatch");
  std::vector<StochasticAction> out;
  for (std::size_t i = 0; i < n_agents(); ++i) {
    if (alive[i]) {
      out.push_back(act_stochastic(actors_[i], obs.agent(i), rng));
    } else {
      StochasticAction idle;
      idle.raw.assign(kActionDim, 0.0);
      idle.clamped.assign(kActionDim, 0.0);
      out.push_back(std::move(idle));
    }
  }
  return out;
}

std::vector<AgentAction> Mappo::act_greedy(const JointObservation& obs) const {
  if (obs.n_agents != n_agents()) throw ShapeError("act: agent count mismatch");
  std::vector<AgentAction> cmds;
  for (std::size_t i = 0; i < n_agents(); ++i) {
    const std::vector<double> mu = act_mean(actors_[i], obs.agent(i));
    cmds.push_back(scale_action(std::clamp(mu[0], -1.0, 1.0), std::clamp(mu[1], -1.0, 1.0)));
  }
  return cmds;
}

PpoReport Mappo::update(std::vector<RolloutStep>& rollout, Rng& rng) {
  struct ClearOnExit {
    std::vector<RolloutStep>& r;
    ~ClearOnExit() { r.clear(); }
  } clear_guard{rollout};

  const std::size_t n = n_agents(), steps = rollout.size();
  PpoReport report;
  if (steps == 0) return report;
  const std::size_t width = n * kObs;

  Tensor2 obs(steps, width), next_obs(steps, width);
  for (std::size_t t = 0; t < steps; ++t) {
    if (rollout[t].obs.n_agents != n) throw ShapeError("ppo_update: rollout agent count mismatch");
    std::copy(rollout[t].obs.data.begin(), rollout[t].obs.data.end(), obs.row(t).begin());
    std::copy(rollout[t].next_obs.data.begin(), rollout[t].next_obs.data.end(), next_obs.row(t).begin());
  }
  const Tensor2 v = values(obs);
  const Tensor2 v_next = values(next_obs);

  // Per-agent GAE over the steps where the agent acted.
  std::vector<Sample> samples;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> idx;
    std::vector<double> r, val, nval, done, cut;
    for (std::size_t t = 0; t < steps; ++t) {
      if (!rollout[t].active[i]) continue;
      idx.push_back(t);
      r.push_back(rollout[t].rewards[i]);
      val.push_back(v(t, i));
      nval.push_back(v_next(t, i));
      done.push_back(rollout[t].dones[i] ? 1.0 : 0.0);
      cut.push_back(rollout[t].episode_end || t + 1 == steps ? 1.0 : 0.0);
    }
    const GaeResult g = compute_gae(r, val, nval, done, cut, config_.gamma, config_.gae_lambda);
    for (std::size_t k = 0; k < idx.size(); ++k) samples.push_back({idx[k], i, g.advantages[k], g.returns[k]});
  }
  if (samples.empty()) return report;
  {
    std::vector<double> adv(samples.size());
    for (std::size_t k = 0; k < samples.size(); ++k) adv[k] = samples[k].advantage;
    normalize_advantages(adv);
    for (std::size_t k = 0; k < samples.size(); ++k) samples[k].advantage = adv[k];
  }
  report.samples = samples.size();

  // Minibatches are drawn over steps; each holds every active agent at those steps.
  std::vector<std::vector<std::size_t>> by_step(steps);
  for (std::size_t k = 0; k < samples.size(); ++k) by_step[samples[k].step].push_back(k);
  std::vector<std::size_t> order(steps);
  const std::size_t n_mb = std::min<std::size_t>(static_cast<std::size_t>(config_.minibatches), steps);

  double sum_policy = 0.0, sum_value = 0.0, sum_entropy = 0.0, sum_clipped = 0.0, sum_count = 0.0;
  int passes = 0;
  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t k = steps; k > 1; --k) std::swap(order[k - 1], order[rng.below(k)]);
    for (std::size_t mb = 0; mb < n_mb; ++mb) {
      const std::size_t lo = mb * steps / n_mb, hi = (mb + 1) * steps / n_mb;
      const std::size_t rows = hi - lo;
      if (rows == 0) continue;

      // Value loss over all active (step, agent) entries.
      Tensor2 x(rows, width);
      for (std::size_t r = 0; r < rows; ++r) {
        const auto src = obs.row(order[lo + r]);
        std::copy(src.begin(), src.end(), x.row(r).begin());
      }
      ForwardCache vcache;
      const Tensor2 vpred = forward(value_net_, x, &vcache);
      Tensor2 vgrad(rows, n);
      std::size_t v_count = 0;
      for (std::size_t r = 0; r < rows; ++r) v_count += by_step[order[lo + r]].size();
      double value_loss = 0.0;
      if (v_count > 0) {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t k : by_step[order[lo + r]]) {
            const double diff = vpred(r, samples[k].agent) - samples[k].ret;
            value_loss += diff * diff;
            vgrad(r, samples[k].agent) = 2.0 * config_.value_coef * diff / static_cast<double>(v_count);
          }
        }
        value_loss /= static_cast<double>(v_count);
      }

      // Policy loss, per agent.
      double policy_loss = 0.0, entropy = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> mine;
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t k : by_step[order[lo + r]]) {
            if (samples[k].agent == i) mine.push_back(k);
          }
        }
        if (mine.empty()) continue;
        StochasticActor& actor = actors_[i];
        const std::size_t m = mine.size();
        Tensor2 ai(m, kObs);
        for (std::size_t j = 0; j < m; ++j) {
          const auto o = rollout[samples[mine[j]].step].obs.agent(i);
          std::copy(o.begin(), o.end(), ai.row(j).begin());
        }
        ForwardCache acache;
        const Tensor2 mu = forward(actor.mean, ai, &acache);
        Tensor2 dmu(m, kActionDim);
        std::vector<double> dlog_std(kActionDim, 0.0);
        const double inv_m = 1.0 / static_cast<double>(m);
        double obj = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
          const Sample& s = samples[mine[j]];
          const RolloutStep& st = rollout[s.step];
          const std::span<const double> act(st.actions.data() + i * kActionDim, kActionDim);
          const double logp = gaussian_log_prob(mu.row(j), actor.log_std, act);
          const double ratio = std::exp(logp - st.log_probs[i]);
          const double a = s.advantage;
          obj += clipped_surrogate(ratio, a, config_.clip_eps);
          const double clipped_ratio = std::clamp(ratio, 1.0 - config_.clip_eps, 1.0 + config_.clip_eps);
          if (clipped_ratio != ratio) sum_clipped += 1.0;
          // Gradient flows only through the unclipped branch when it is the minimum.
          if (ratio * a <= clipped_ratio * a) {
            const double g = -ratio * a * inv_m;  // d loss / d logp
            for (std::size_t d = 0; d < kActionDim; ++d) {
              const double inv_var = std::exp(-2.0 * actor.log_std[d]);
              const double diff = act[d] - mu(j, d);
              dmu(j, d) = g * diff * inv_var;
              dlog_std[d] += g * (diff * diff * inv_var - 1.0);
            }
          }
        }
        const double ent = gaussian_entropy(actor.log_std);
        for (std::size_t d = 0; d < kActionDim; ++d) dlog_std[d] -= config_.entropy_coef;
        policy_loss += -obj * inv_m;
        entropy += ent;
        sum_count += static_cast<double>(m);

        const MlpGrads grads = backward(actor.mean, acache, dmu);
        for (double g : dlog_std) {
          if (!std::isfinite(g)) throw NumericError("ppo_update: non-finite log_std gradient for agent " + std::to_string(i));
        }
        adam_step(actor.mean, grads, actor.mean_opt, config_.lr);
        adam_update(actor.log_std, dlog_std, actor.log_std_m, actor.log_std_v, actor.mean_opt.step_count, config_.lr);
        for (double& ls : actor.log_std) ls = clamp_log_std(ls);
      }
      entropy /= static_cast<double>(n);
      const double total = policy_loss + config_.value_coef * value_loss - config_.entropy_coef * entropy;
      if (!std::isfinite(total)) {
        throw NumericError("ppo_update: non-finite loss in epoch " + std::to_string(epoch));
      }
      if (v_count > 0) {
        const MlpGrads vg = backward(value_net_, vcache, vgrad);
        adam_step(value_net_, vg, value_opt_, config_.lr);
      }
      sum_policy += policy_loss;
      sum_value += value_loss;
      sum_entropy += entropy;
      ++passes;
    }
  }
  if (passes > 0) {
    report.policy_loss = sum_policy / passes;
    report.value_loss = sum_value / passes;
    report.entropy = sum_entropy / passes;
    report.total_loss = report.policy_loss + config_.value_coef * report.value_loss -
                        config_.entropy_coef * report.entropy;
  }
  report.clip_fraction = sum_count > 0.0 ? sum_clipped / sum_count : 0.0;
  return report;
}

// ---------------------------------------------------------------------------

MappoTrainer::MappoTrainer(const Scenario& scenario, std::size_t n_agents, PpoConfig config, MappoBudget budget,
                           std::uint64_t seed)
    : world_(scenario),
      n_agents_(n_agents),
      config_(std::move(config)),
      budget_(budget),
      seed_(seed),
      learner_(n_agents, config_, seed),
      rng_(derive_seed(seed, kTrainerRng)) {
  if (n_agents < 1 || n_agents > world_.max_agents()) {
    throw ConfigError("agent count " + std::to_string(n_agents) + " exceeds the scenario's " +
                      std::to_string(world_.max_agents()) + " spawns");
  }
}

bool MappoTrainer::finished() const {
  if (budget_.episodes >= 0 && episode_ >= budget_.episodes) return true;
  if (budget_.env_steps >= 0 && env_steps_ >= budget_.env_steps) return true;
  return false;
}

void MappoTrainer::restore(std::int64_t episode, std::int64_t env_steps, std::int64_t updates,
                           std::vector<EpisodeMetrics> history) {
  episode_ = episode;
  env_steps_ = env_steps;
  updates_ = updates;
  history_ = std::move(history);
}

std::optional<EpisodeMetrics> MappoTrainer::run_episode(const Sinks& sinks) {
  const std::int64_t ep = episode_;
  auto [state, obs] = world_.reset(n_agents_, episode_seed(seed_, ep));
  EpisodeLog log;
  log.begin(ep, state, world_.scenario().max_steps);
  std::vector<PpoReport> reports;

  while (!state.done) {
    if (budget_.env_steps >= 0 && env_steps_ >= budget_.env_steps) return std::nullopt;
    std::vector<std::uint8_t> alive(n_agents_);
    for (std::size_t i = 0; i < n_agents_; ++i) alive[i] = state.vehicles[i].alive();
    const std::vector<StochasticAction> acts = learner_.act(obs, alive, rng_);
    std::vector<AgentAction> cmds;
    RolloutStep rs;
    rs.obs = obs;
    for (const auto& a : acts) {
      cmds.push_back(scale_action(a.clamped[0], a.clamped[1]));
      rs.actions.insert(rs.actions.end(), a.raw.begin(), a.raw.end());
      rs.log_probs.push_back(a.log_prob);
    }
    const SimState before = state;
    StepResult res = world_.step(state, cmds);
    rs.next_obs = res.obs;
    rs.rewards = res.rewards;
    rs.active = alive;
    for (std::size_t i = 0; i < n_agents_; ++i) rs.dones.push_back(!state.vehicles[i].alive());
    rs.episode_end = res.done;
    rollout_.push_back(std::move(rs));

    if (sinks.on_trace) sinks.on_trace(make_step_trace(world_, ep, before, obs, state, res.events));
    log.append(before, state, res.events);
    obs = std::move(res.obs);
    ++env_steps_;

    if (rollout_.size() >= config_.horizon) {
      reports.push_back(learner_.update(rollout_, rng_));
      ++updates_;
    }
  }

  EpisodeMetrics m = score_episode(log);
  history_.push_back(m);
  ++episode_;
  if (sinks.on_episode) sinks.on_episode(m);
  if (sinks.on_telemetry) {
    Telemetry tel{ep, {{"updates", static_cast<double>(updates_)}}};
    if (!reports.empty()) {
      const PpoReport& r = reports.back();
      tel.values.push_back({"policy_loss", r.policy_loss});
      tel.values.push_back({"value_loss", r.value_loss});
      tel.values.push_back({"entropy", r.entropy});
      tel.values.push_back({"clip_fraction", r.clip_fraction});
    }
    sinks.on_telemetry(tel);
  }
  return m;
}

void MappoTrainer::train(const Sinks& sinks) {
  while (!finished()) run_episode(sinks);
}

MappoResult train_mappo(const Scenario& scenario, std::size_t n_agents, const PpoConfig& config,
                        std::int64_t total_env_steps, std::uint64_t seed, const Sinks& sinks) {
  MappoTrainer trainer(scenario, n_agents, config, {-1, total_env_steps}, seed);
  trainer.train(sinks);
  return {trainer.learner(), trainer.history()};
}

std::vector<EpisodeMetrics> evaluate_mappo(const Mappo& learner, const World& world, std::int64_t episodes,
                                           std::uint64_t seed, const Sinks& sinks) {
  std::vector<EpisodeMetrics> out;
  for (std::int64_t ep = 0; ep < episodes; ++ep) {
    auto [state, obs] = world.reset(learner.n_agents(), episode_seed(seed, ep));
    EpisodeLog log;
    log.begin(ep, state, world.scenario().max_steps);
    while (!state.done) {
      const std::vector<AgentAction> cmds = learner.act_greedy(obs);
      const SimState before = state;
      StepResult res = world.step(state, cmds);
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
