#ifndef MARLSIM_PER_BUFFER_HPP_
#define MARLSIM_PER_BUFFER_HPP_

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "marlsim/rng.hpp"
#include "marlsim/sim.hpp"

namespace marlsim {

// Weights of the driving-event part of a transition's priority.
struct EventWeights {
  double accident = 2.0;
  double rule = 1.0;
  double jerk = 0.5;
  double speed = 0.5;
  double completion = 1.0;
  double jerk_norm = 40.0;  // m/s^3
};

// Per-signal breakdown of an event score; kept so attribution can explain
// why a transition was replayed.
struct EventScore {
  double accident = 0.0;
  double rule = 0.0;
  double jerk = 0.0;
  double speed = 0.0;
  double completion = 0.0;

  double total() const { return accident + rule + jerk + speed + completion; }
  EventScore& operator+=(const EventScore& o);
  bool operator==(const EventScore&) const = default;
};

EventScore event_score_components(const AgentEvents& events, double speed_delta, double completion_progress_delta,
                                  const EventWeights& weights = {});

inline double event_score(const AgentEvents& events, double speed_delta, double completion_progress_delta,
                          const EventWeights& weights = {}) {
  return event_score_components(events, speed_delta, completion_progress_delta, weights).total();
}

struct PriorityRecord {
  double td_abs = 0.0;
  double event_score = 0.0;
  double priority = 1.0;
  bool td_estimated = false;  // td_abs was unknown at insert; max-seen |td| substituted
  EventScore components;
};

// p = (td + event + eps)^alpha
double compute_priority(double td_abs, double event_score, double eps, double alpha);

// Binary tree of partial sums over a power-of-two number of leaves.
class SumTree {
 public:
  explicit SumTree(std::size_t capacity);

  std::size_t capacity() const { return capacity_; }
  double total() const { return nodes_[1]; }
  double get(std::size_t leaf) const { return nodes_[capacity_ + leaf]; }
  void set(std::size_t leaf, double priority);

  // Leaf whose cumulative interval contains `mass` (0 <= mass < total).
  std::size_t find(double mass) const;

  // Recompute every internal node from the leaves and compare.
  bool consistent(double tol = 1e-9) const;
  const std::vector<double>& nodes() const { return nodes_; }

 private:
  std::size_t capacity_;
  std::vector<double> nodes_;  // 1-based heap layout, leaves at [capacity, 2*capacity)
};

struct Transition {
  JointObservation obs;
  std::vector<double> actions;  // n_agents x 2, normalized to [-1, 1]
  std::vector<double> rewards;
  JointObservation next_obs;
  std::vector<std::uint8_t> dones;   // agent terminal after this step
  std::vector<std::uint8_t> active;  // agent acted this step
  bool done = false;                 // episode ended
  StepEvents events;
  std::int64_t episode_id = 0;
  int step_index = 0;

  bool operator==(const Transition&) const = default;
};

struct PerConfig {
  std::size_t capacity = std::size_t{1} << 17;
  double alpha = 0.6;
  double beta_start = 0.4;
  double beta_end = 1.0;
  double eps = 1e-3;
};

struct SampleRef {
  std::size_t slot = 0;
  std::uint64_t serial = 0;  // insertion number; detects overwritten slots
  bool operator==(const SampleRef&) const = default;
};

struct SampledBatch {
  std::vector<SampleRef> refs;
  std::vector<double> probabilities;
  std::vector<double> is_weights;
};

struct BufferStats {
  std::size_t size = 0;
  std::size_t capacity = 0;
  double max_priority = 0.0;
  double max_td_seen = 1.0;
  std::uint64_t inserted = 0;
  std::uint64_t stale_skips = 0;
};

class PrioritizedReplay {
 public:
  PrioritizedReplay(std::size_t n_agents, PerConfig config);

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return tree_.capacity(); }
  const PerConfig& config() const { return config_; }
  const SumTree& tree() const { return tree_; }
  BufferStats stats() const;

  // Ring insert; returns the record actually stored (td filled in when estimated).
  PriorityRecord insert(const Transition& t, PriorityRecord record);

  SampledBatch sample(std::size_t batch_size, double beta, Rng& rng) const;
  SampledBatch sample(std::size_t batch_size, double beta, std::uint64_t seed) const;

  const Transition& transition(std::size_t slot) const { return slots_.at(slot); }
  const PriorityRecord& record(std::size_t slot) const { return records_.at(slot); }
  bool is_current(const SampleRef& ref) const;

  // Recompute priorities from new |td|; keeps stored event scores.
  void update_priorities(std::span<const SampleRef> refs, std::span<const double> td_abs);
  // Same, replacing the stored event scores.
  void update_priorities(std::span<const SampleRef> refs, std::span<const double> td_abs,
                         std::span<const double> event_scores);

  // Binary dump of contents for exact resume.
  void save(std::ostream& os) const;
  void load(std::istream& is);

 private:
  void set_priority(std::size_t slot, double td_abs, double event_score);

  std::size_t n_agents_;
  PerConfig config_;
  SumTree tree_;
  std::vector<Transition> slots_;
  std::vector<PriorityRecord> records_;
  std::vector<std::uint64_t> serials_;
  std::size_t cursor_ = 0;
  std::size_t size_ = 0;
  std::uint64_t inserted_ = 0;
  std::uint64_t stale_skips_ = 0;
  double max_td_seen_ = 1.0;
  double max_priority_ = 0.0;
};

}  // namespace marlsim

#endif  // MARLSIM_PER_BUFFER_HPP_
