#include "marlsim/per_buffer.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include "marlsim/errors.hpp"

namespace marlsim {

EventScore& EventScore::operator+=(const EventScore& o) {
  accident += o.accident;
  rule += o.rule;
  jerk += o.jerk;
  speed += o.speed;
  completion += o.completion;
  return *this;
}

EventScore event_score_components(const AgentEvents& e, double speed_delta, double completion_progress_delta,
                                  const EventWeights& w) {
  auto nonneg = [](double v) { return std::isfinite(v) ? std::max(0.0, v) : 0.0; };
  EventScore s;
  s.accident = nonneg(w.accident * (e.collision ? 1.0 : 0.0));
  s.rule = nonneg(w.rule * e.rule_violations());
  s.jerk = nonneg(w.jerk * (std::abs(e.linear_jerk) + std::abs(e.angular_jerk)) / w.jerk_norm);
  s.speed = nonneg(w.speed * std::abs(speed_delta) / VehicleLimits::kMaxSpeed);
  s.completion = nonneg(w.completion * std::abs(completion_progress_delta));
  return s;
}

double compute_priority(double td_abs, double event_score, double eps, double alpha) {
  return std::pow(std::max(0.0, td_abs) + std::max(0.0, event_score) + eps, alpha);
}

// ---------------------------------------------------------------------------

SumTree::SumTree(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0 || (capacity & (capacity - 1)) != 0) {
    throw std::invalid_argument("sum tree capacity must be a power of two");
  }
  nodes_.assign(2 * capacity, 0.0);
}

void SumTree::set(std::size_t leaf, double priority) {
  if (leaf >= capacity_) throw std::out_of_range("sum tree leaf out of range");
  if (!(priority >= 0.0) || !std::isfinite(priority)) throw NumericError("sum tree priority must be finite and >= 0");
  std::size_t i = capacity_ + leaf;
  nodes_[i] = priority;
  // Recompute from children so node values depend only on the leaves.
  for (i /= 2; i >= 1; i /= 2) nodes_[i] = nodes_[2 * i] + nodes_[2 * i + 1];
}

std::size_t SumTree::find(double mass) const {
  std::size_t i = 1;
  while (i < capacity_) {
    const std::size_t left = 2 * i;
    if (mass < nodes_[left] || nodes_[left + 1] <= 0.0) {
      i = left;
    } else {
      mass -= nodes_[left];
      i = left + 1;
    }
  }
  std::size_t leaf = i - capacity_;
  // Rounding can land on an empty leaf; fall back to the nearest filled one.
  if (nodes_[i] <= 0.0) {
    for (std::size_t k = leaf; k-- > 0;) {
      if (nodes_[capacity_ + k] > 0.0) return k;
    }
    for (std::size_t k = leaf + 1; k < capacity_; ++k) {
      if (nodes_[capacity_ + k] > 0.0) return k;
    }
  }
  return leaf;
}

bool SumTree::consistent(double tol) const {
  std::vector<double> fresh(nodes_.size(), 0.0);
  for (std::size_t i = capacity_; i < 2 * capacity_; ++i) fresh[i] = nodes_[i];
  for (std::size_t i = capacity_ - 1; i >= 1; --i) fresh[i] = fresh[2 * i] + fresh[2 * i + 1];
  for (std::size_t i = 1; i < capacity_; ++i) {
    if (std::abs(fresh[i] - nodes_[i]) > tol) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------

PrioritizedReplay::PrioritizedReplay(std::size_t n_agents, PerConfig config)
    : n_agents_(n_agents), config_(config), tree_(config.capacity) {
  if (n_agents == 0) throw std::invalid_argument("replay needs at least one agent");
  if (!(config.eps > 0.0)) throw std::invalid_argument("priority eps must be > 0");
  if (!(config.alpha >= 0.0)) throw std::invalid_argument("alpha must be >= 0");
}

BufferStats PrioritizedReplay::stats() const {
  return {size_, capacity(), max_priority_, max_td_seen_, inserted_, stale_skips_};
}

void PrioritizedReplay::set_priority(std::size_t slot, double td_abs, double event_score) {
  PriorityRecord& rec = records_[slot];
  rec.td_abs = td_abs;
  rec.event_score = event_score;
  rec.priority = compute_priority(td_abs, event_score, config_.eps, config_.alpha);
  tree_.set(slot, rec.priority);
  max_priority_ = std::max(max_priority_, rec.priority);
}

PriorityRecord PrioritizedReplay::insert(const Transition& t, PriorityRecord record) {
  if (t.obs.n_agents != n_agents_ || t.rewards.size() != n_agents_ || t.actions.size() != 2 * n_agents_) {
    throw ShapeError("transition width does not match the replay agent count");
  }
  const std::size_t slot = cursor_;
  if (slots_.size() < capacity()) {
    slots_.push_back(t);
    records_.emplace_back();
    serials_.push_back(0);
  } else {
    slots_[slot] = t;
  }
  serials_[slot] = inserted_++;
  if (record.td_estimated) record.td_abs = max_td_seen_;
  records_[slot] = record;
  set_priority(slot, record.td_abs, record.event_score);
  cursor_ = (cursor_ + 1) % capacity();
  size_ = std::min(size_ + 1, capacity());
  return records_[slot];
}

SampledBatch PrioritizedReplay::sample(std::size_t batch_size, double beta, Rng& rng) const {
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  if (size_ < batch_size) {
    throw StateError("cannot sample " + std::to_string(batch_size) + " from a buffer holding " +
                     std::to_string(size_));
  }
  SampledBatch out;
  const double total = tree_.total();
  const double segment = total / static_cast<double>(batch_size);
  double max_w = 0.0;
  for (std::size_t k = 0; k < batch_size; ++k) {
    double mass = (static_cast<double>(k) + rng.uniform()) * segment;
    mass = std::min(mass, std::nextafter(total, 0.0));
    const std::size_t slot = tree_.find(mass);
    const double p = tree_.get(slot) / total;
    const double w = std::pow(static_cast<double>(size_) * p, -beta);
    max_w = std::max(max_w, w);
    out.refs.push_back({slot, serials_[slot]});
    out.probabilities.push_back(p);
    out.is_weights.push_back(w);
  }
  for (double& w : out.is_weights) w /= max_w;
  return out;
}

SampledBatch PrioritizedReplay::sample(std::size_t batch_size, double beta, std::uint64_t seed) const {
  Rng rng(seed);
  return sample(batch_size, beta, rng);
}

bool PrioritizedReplay::is_current(const SampleRef& ref) const {
  return ref.slot < size_ && serials_[ref.slot] == ref.serial;
}

void PrioritizedReplay::update_priorities(std::span<const SampleRef> refs, std::span<const double> td_abs) {
  if (refs.size() != td_abs.size()) throw ShapeError("update_priorities: length mismatch");
  for (std::size_t k = 0; k < refs.size(); ++k) {
    if (!is_current(refs[k])) {
      ++stale_skips_;
      continue;
    }
    const double td = std::abs(td_abs[k]);
    if (!std::isfinite(td)) throw NumericError("update_priorities: non-finite td");
    max_td_seen_ = std::max(max_td_seen_, td);
    set_priority(refs[k].slot, td, records_[refs[k].slot].event_score);
    records_[refs[k].slot].td_estimated = false;
  }
}

void PrioritizedReplay::update_priorities(std::span<const SampleRef> refs, std::span<const double> td_abs,
                                          std::span<const double> event_scores) {
  if (refs.size() != event_scores.size()) throw ShapeError("update_priorities: length mismatch");
  for (std::size_t k = 0; k < refs.size(); ++k) {
    if (is_current(refs[k])) records_[refs[k].slot].event_score = std::max(0.0, event_scores[k]);
  }
  update_priorities(refs, td_abs);
}

// ---------------------------------------------------------------------------
// Binary persistence. Host byte order; meant for resuming on the same build.

namespace {

constexpr std::uint64_t kReplayMagic = 0x3170657270736d6dULL;

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
void get(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("replay file truncated");
}
template <typename T>
void put_vec(std::ostream& os, const std::vector<T>& v) {
  put(os, static_cast<std::uint64_t>(v.size()));
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
}
template <typename T>
void get_vec(std::istream& is, std::vector<T>& v) {
  std::uint64_t n = 0;
  get(is, n);
  if (n > (std::uint64_t{1} << 32)) throw IoError("replay file corrupt (vector length)");
  v.resize(n);
  is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
  if (!is) throw IoError("replay file truncated");
}

void put_events(std::ostream& os, const AgentEvents& e) {
  const std::uint8_t flags[6] = {e.collision, e.off_road, e.wrong_way, e.speed_over_limit, e.lane_change_violation,
                                 e.goal_reached};
  os.write(reinterpret_cast<const char*>(flags), 6);
  put(os, e.linear_jerk);
  put(os, e.angular_jerk);
  put(os, e.lane_center_offset);
  put(os, e.min_obstacle_distance);
}

void get_events(std::istream& is, AgentEvents& e) {
  std::uint8_t flags[6];
  is.read(reinterpret_cast<char*>(flags), 6);
  if (!is) throw IoError("replay file truncated");
  e.collision = flags[0];
  e.off_road = flags[1];
  e.wrong_way = flags[2];
  e.speed_over_limit = flags[3];
  e.lane_change_violation = flags[4];
  e.goal_reached = flags[5];
  get(is, e.linear_jerk);
  get(is, e.angular_jerk);
  get(is, e.lane_center_offset);
  get(is, e.min_obstacle_distance);
}

void put_score(std::ostream& os, const EventScore& s) {
  put(os, s.accident);
  put(os, s.rule);
  put(os, s.jerk);
  put(os, s.speed);
  put(os, s.completion);
}

void get_score(std::istream& is, EventScore& s) {
  get(is, s.accident);
  get(is, s.rule);
  get(is, s.jerk);
  get(is, s.speed);
  get(is, s.completion);
}

}  // namespace

void PrioritizedReplay::save(std::ostream& os) const {
  put(os, kReplayMagic);
  put(os, static_cast<std::uint64_t>(n_agents_));
  put(os, static_cast<std::uint64_t>(capacity()));
  put(os, static_cast<std::uint64_t>(cursor_));
  put(os, static_cast<std::uint64_t>(size_));
  put(os, inserted_);
  put(os, stale_skips_);
  put(os, max_td_seen_);
  put(os, max_priority_);
  for (std::size_t i = 0; i < size_; ++i) {
    const Transition& t = slots_[i];
    const PriorityRecord& r = records_[i];
    put(os, serials_[i]);
    put(os, r.td_abs);
    put(os, r.event_score);
    put(os, r.priority);
    put(os, static_cast<std::uint8_t>(r.td_estimated));
    put_score(os, r.components);
    put_vec(os, t.obs.data);
    put_vec(os, t.actions);
    put_vec(os, t.rewards);
    put_vec(os, t.next_obs.data);
    put_vec(os, t.dones);
    put_vec(os, t.active);
    put(os, static_cast<std::uint8_t>(t.done));
    put(os, static_cast<std::uint64_t>(t.events.size()));
    for (const auto& e : t.events) put_events(os, e);
    put(os, t.episode_id);
    put(os, static_cast<std::int64_t>(t.step_index));
  }
  if (!os) throw IoError("failed writing replay contents");
}

void PrioritizedReplay::load(std::istream& is) {
  std::uint64_t magic = 0, n_agents = 0, cap = 0, cursor = 0, size = 0;
  get(is, magic);
  if (magic != kReplayMagic) throw IoError("not a replay file");
  get(is, n_agents);
  get(is, cap);
  if (n_agents != n_agents_ || cap != capacity()) throw IoError("replay file does not match buffer shape");
  get(is, cursor);
  get(is, size);
  if (size > cap || cursor >= cap) throw IoError("replay file corrupt (cursor/size)");
  PrioritizedReplay fresh(n_agents_, config_);
  fresh.cursor_ = cursor;
  fresh.size_ = size;
  get(is, fresh.inserted_);
  get(is, fresh.stale_skips_);
  get(is, fresh.max_td_seen_);
  get(is, fresh.max_priority_);
  fresh.slots_.resize(size);
  fresh.records_.resize(size);
  fresh.serials_.resize(size);
  for (std::size_t i = 0; i < size; ++i) {
    Transition& t = fresh.slots_[i];
    PriorityRecord& r = fresh.records_[i];
    get(is, fresh.serials_[i]);
    get(is, r.td_abs);
    get(is, r.event_score);
    get(is, r.priority);
    std::uint8_t flag = 0;
    get(is, flag);
    r.td_estimated = flag;
    get_score(is, r.components);
    get_vec(is, t.obs.data);
    t.obs.n_agents = n_agents_;
    get_vec(is, t.actions);
    get_vec(is, t.rewards);
    get_vec(is, t.next_obs.data);
    t.next_obs.n_agents = n_agents_;
    get_vec(is, t.dones);
    get_vec(is, t.active);
    get(is, flag);
    t.done = flag;
    std::uint64_t n_events = 0;
    get(is, n_events);
    if (n_events > n_agents_) throw IoError("replay file corrupt (events)");
    t.events.resize(n_events);
    for (auto& e : t.events) get_events(is, e);
    get(is, t.episode_id);
    std::int64_t step = 0;
    get(is, step);
    t.step_index = static_cast<int>(step);
    fresh.tree_.set(i, r.priority);
  }
  *this = std::move(fresh);
}

}  // namespace marlsim
