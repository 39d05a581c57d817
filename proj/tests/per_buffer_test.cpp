#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "marlsim/errors.hpp"
#include "marlsim/per_buffer.hpp"
#include "marlsim/rng.hpp"

using namespace marlsim;

namespace {

Transition make_transition(std::size_t n, int step) {
  Transition t;
  t.obs.n_agents = n;
  t.obs.data.assign(n * ObsLayout::kWidth, 0.1 * step);
  t.next_obs = t.obs;
  t.actions.assign(2 * n, 0.0);
  t.rewards.assign(n, static_cast<double>(step));
  t.dones.assign(n, 0);
  t.active.assign(n, 1);
  t.events.resize(n);
  t.step_index = step;
  return t;
}

PriorityRecord with_td(double td, double event = 0.0) {
  PriorityRecord r;
  r.td_abs = td;
  r.event_score = event;
  return r;
}

// Leaf priorities are (td + eps)^alpha; with alpha = 1 and eps tiny the leaf
// value is close to the td passed in.
PerConfig raw_config(std::size_t capacity) {
  PerConfig c;
  c.capacity = capacity;
  c.alpha = 1.0;
  c.eps = 1e-12;
  return c;
}

}  // namespace

TEST(EventScore, Examples) {
  EXPECT_DOUBLE_EQ(event_score(AgentEvents{}, 0.0, 0.0), 0.0);

  AgentEvents crash;
  crash.collision = true;
  EXPECT_DOUBLE_EQ(event_score(crash, 0.0, 0.0), 2.0);

  AgentEvents e;
  e.wrong_way = true;
  e.linear_jerk = 20.0;
  EXPECT_DOUBLE_EQ(event_score(e, 0.0, 0.0), 1.25);
}

TEST(EventScore, ComponentsAndDeltas) {
  AgentEvents e;
  e.speed_over_limit = true;
  e.lane_change_violation = true;
  e.angular_jerk = -8.0;
  const EventScore s = event_score_components(e, -4.0, 0.1);
  EXPECT_DOUBLE_EQ(s.rule, 2.0);
  EXPECT_DOUBLE_EQ(s.jerk, 0.5 * 8.0 / 40.0);
  EXPECT_DOUBLE_EQ(s.speed, 0.5 * 4.0 / 20.0);
  EXPECT_DOUBLE_EQ(s.completion, 0.1);
  EXPECT_DOUBLE_EQ(s.total(), 2.0 + 0.1 + 0.1 + 0.1);

  EventWeights neg;
  neg.rule = -3.0;
  EXPECT_GE(event_score(e, 0.0, 0.0, neg), 0.0);
}

TEST(Priority, ScalarPower) {
  EXPECT_DOUBLE_EQ(compute_priority(0.5, 2.0, 1e-3, 0.6), std::pow(2.501, 0.6));
  EXPECT_DOUBLE_EQ(compute_priority(123.0, 9.0, 1e-3, 0.0), 1.0);
  EXPECT_GT(compute_priority(0.0, 0.0, 1e-3, 0.6), 0.0);
}

TEST(SumTree, RootChangesByDelta) {
  SumTree t(2);
  t.set(0, 1.0);
  t.set(1, 2.0);
  const double before = t.total();
  t.set(0, 4.0);
  EXPECT_DOUBLE_EQ(t.total() - before, 3.0);
  EXPECT_THROW(SumTree(3), std::invalid_argument);
}

TEST(SumTree, FindIntervals) {
  SumTree t(4);
  t.set(0, 1.0);
  t.set(1, 0.0);
  t.set(2, 2.0);
  t.set(3, 1.0);
  EXPECT_EQ(t.find(0.0), 0u);
  EXPECT_EQ(t.find(0.999), 0u);
  EXPECT_EQ(t.find(1.0), 2u);
  EXPECT_EQ(t.find(2.999), 2u);
  EXPECT_EQ(t.find(3.5), 3u);
}

TEST(SumTree, ConsistentAfterRandomOps) {
  Rng rng(5);
  PerConfig c;
  c.capacity = 64;
  PrioritizedReplay buf(1, c);
  for (int k = 0; k < 1000; ++k) {
    if (buf.size() < 8 || rng.uniform() < 0.5) {
      buf.insert(make_transition(1, k), with_td(rng.uniform(0, 5), rng.uniform(0, 3)));
    } else {
      const auto batch = buf.sample(4, 0.5, rng);
      std::vector<double> td(batch.refs.size());
      for (double& x : td) x = rng.uniform(0, 10);
      buf.update_priorities(batch.refs, td);
    }
    ASSERT_TRUE(buf.tree().consistent(1e-9)) << "after op " << k;
  }
  // independent recomputation of the root from the leaves
  double leaves = 0.0;
  for (std::size_t i = 0; i < buf.capacity(); ++i) leaves += buf.tree().get(i);
  EXPECT_NEAR(buf.tree().total(), leaves, 1e-9);
}

TEST(Replay, InsertEmpty) {
  PrioritizedReplay buf(1, raw_config(4));
  const PriorityRecord r = buf.insert(make_transition(1, 0), with_td(2.0));
  EXPECT_EQ(buf.size(), 1u);
  EXPECT_DOUBLE_EQ(buf.tree().total(), r.priority);
}

TEST(Replay, RingOverwritesOldest) {
  PrioritizedReplay buf(1, raw_config(4));
  for (int k = 0; k < 5; ++k) buf.insert(make_transition(1, k), with_td(1.0));
  EXPECT_EQ(buf.size(), 4u);
  EXPECT_EQ(buf.transition(0).step_index, 4);
  EXPECT_EQ(buf.transition(1).step_index, 1);
}

TEST(Replay, WrongWidthThrows) {
  PrioritizedReplay buf(2, raw_config(4));
  EXPECT_THROW(buf.insert(make_transition(1, 0), with_td(1.0)), ShapeError);
}

TEST(Replay, UnderfullSampleThrows) {
  PrioritizedReplay buf(1, raw_config(4));
  buf.insert(make_transition(1, 0), with_td(1.0));
  EXPECT_THROW(buf.sample(2, 1.0, 1), StateError);
}

TEST(Replay, EqualPrioritiesUniform) {
  PrioritizedReplay buf(1, raw_config(4));
  for (int k = 0; k < 4; ++k) buf.insert(make_transition(1, k), with_td(1.0));
  const auto b = buf.sample(4, 1.0, 3);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_DOUBLE_EQ(b.probabilities[k], 0.25);
    EXPECT_DOUBLE_EQ(b.is_weights[k], 1.0);
  }
}

TEST(Replay, ClosedFormWeights) {
  PerConfig c;
  c.capacity = 2;
  c.alpha = 1.0;
  c.eps = 1e-300;
  PrioritizedReplay buf(1, c);
  buf.insert(make_transition(1, 0), with_td(3.0));
  buf.insert(make_transition(1, 1), with_td(1.0));
  // find a batch that hits both slots; then the closed form applies
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto b = buf.sample(2, 1.0, seed);
    if (b.refs[0].slot == b.refs[1].slot) continue;
    ASSERT_EQ(b.refs[0].slot, 0u);
    EXPECT_NEAR(b.probabilities[0], 0.75, 1e-12);
    EXPECT_NEAR(b.probabilities[1], 0.25, 1e-12);
    EXPECT_NEAR(b.is_weights[0], 1.0 / 3.0, 1e-12);
    EXPECT_NEAR(b.is_weights[1], 1.0, 1e-12);
    return;
  }
  FAIL() << "no batch covered both slots";
}

TEST(Replay, SamplingMatchesExactDistribution) {
  PrioritizedReplay buf(1, raw_config(16));
  std::vector<double> p(16);
  double total = 0.0;
  for (int k = 0; k < 16; ++k) {
    const PriorityRecord r = buf.insert(make_transition(1, k), with_td(1.0 + k % 5 + 0.5 * (k % 3)));
    p[k] = r.priority;
    total += r.priority;
  }
  std::vector<double> counts(16, 0.0);
  Rng rng(77);
  const int rounds = 100000 / 16;
  for (int r = 0; r < rounds; ++r) {
    for (const auto& ref : buf.sample(16, 0.4, rng).refs) counts[ref.slot] += 1.0;
  }
  double tv = 0.0;
  for (int k = 0; k < 16; ++k) tv += std::abs(counts[k] / (rounds * 16.0) - p[k] / total);
  EXPECT_LT(0.5 * tv, 0.01);
}

TEST(Replay, AlphaZeroIsUniformUnitWeights) {
  PerConfig c;
  c.capacity = 8;
  c.alpha = 0.0;
  PrioritizedReplay buf(1, c);
  for (int k = 0; k < 8; ++k) buf.insert(make_transition(1, k), with_td(0.1 * k * k, k));
  for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(buf.tree().get(k), 1.0);
  const auto b = buf.sample(8, 0.0, 4);
  for (double w : b.is_weights) EXPECT_EQ(w, 1.0);
  for (double q : b.probabilities) EXPECT_DOUBLE_EQ(q, 1.0 / 8.0);
}

TEST(Replay, SameSeedSameIndices) {
  PrioritizedReplay buf(1, PerConfig{.capacity = 32});
  for (int k = 0; k < 32; ++k) buf.insert(make_transition(1, k), with_td(k % 7));
  EXPECT_EQ(buf.sample(8, 0.6, 11).refs, buf.sample(8, 0.6, 11).refs);
}

TEST(Replay, AllStoredHavePositiveProbability) {
  PrioritizedReplay buf(1, PerConfig{.capacity = 8});
  for (int k = 0; k < 8; ++k) buf.insert(make_transition(1, k), with_td(0.0, 0.0));
  for (std::size_t k = 0; k < 8; ++k) EXPECT_GT(buf.tree().get(k), 0.0);
}

TEST(Replay, EstimatedTdUsesMaxSeen) {
  PrioritizedReplay buf(1, raw_config(8));
  buf.insert(make_transition(1, 0), with_td(1.0));
  buf.insert(make_transition(1, 1), with_td(1.0));
  const auto b = buf.sample(2, 1.0, 1);
  buf.update_priorities(b.refs, std::vector<double>{7.0, 0.5});
  PriorityRecord est;
  est.td_estimated = true;
  const PriorityRecord stored = buf.insert(make_transition(1, 2), est);
  EXPECT_DOUBLE_EQ(stored.td_abs, 7.0);
  EXPECT_TRUE(buf.record(2).td_estimated);
}

TEST(Replay, UpdateKeepsEventScore) {
  PerConfig c;
  c.capacity = 2;
  PrioritizedReplay buf(1, c);
  buf.insert(make_transition(1, 0), with_td(1.0, 2.0));
  buf.insert(make_transition(1, 1), with_td(1.0, 0.0));
  const std::vector<SampleRef> refs{{0, 0}};
  buf.update_priorities(refs, std::vector<double>{0.5});
  EXPECT_DOUBLE_EQ(buf.tree().get(0), std::pow(2.501, 0.6));
  buf.update_priorities(refs, std::vector<double>{0.5}, std::vector<double>{0.0});
  EXPECT_DOUBLE_EQ(buf.tree().get(0), std::pow(0.501, 0.6));
}

TEST(Replay, StaleIndexSkippedAndCounted) {
  PrioritizedReplay buf(1, raw_config(2));
  buf.insert(make_transition(1, 0), with_td(1.0));
  buf.insert(make_transition(1, 1), with_td(1.0));
  const auto b = buf.sample(2, 1.0, 1);
  buf.insert(make_transition(1, 2), with_td(1.0));  // overwrites slot 0
  const double leaf0 = buf.tree().get(0);
  buf.update_priorities(b.refs, std::vector<double>{9.0, 9.0});
  EXPECT_EQ(buf.stats().stale_skips, 1u);
  EXPECT_EQ(buf.tree().get(0), leaf0);
  EXPECT_NEAR(buf.tree().get(1), 9.0, 1e-9);
}

TEST(Replay, SaveLoadRoundTrip) {
  PrioritizedReplay buf(2, PerConfig{.capacity = 8});
  Rng rng(1);
  for (int k = 0; k < 11; ++k) {
    Transition t = make_transition(2, k);
    t.events[1].collision = k % 3 == 0;
    t.events[0].linear_jerk = rng.uniform();
    buf.insert(t, with_td(rng.uniform(0, 3), rng.uniform()));
  }
  std::stringstream ss;
  buf.save(ss);
  PrioritizedReplay copy(2, PerConfig{.capacity = 8});
  copy.load(ss);
  EXPECT_EQ(copy.size(), buf.size());
  EXPECT_EQ(copy.tree().nodes(), buf.tree().nodes());
  for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(copy.transition(k), buf.transition(k));
  EXPECT_EQ(copy.sample(4, 0.7, 3).refs, buf.sample(4, 0.7, 3).refs);

  std::stringstream bad("garbage");
  EXPECT_THROW(copy.load(bad), IoError);
}
