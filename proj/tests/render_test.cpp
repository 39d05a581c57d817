#include <gtest/gtest.h>

#include <regex>

#include "marlsim/rng.hpp"
#include "marlsim/scenario.hpp"
#include "marlsim/trace.hpp"

using namespace marlsim;

namespace {

std::vector<StepTrace> episode_traces(const std::string& map, std::size_t n_agents, std::uint64_t seed, int steps,
                                      double accel) {
  World world(builtin_scenario(map));
  auto [state, obs] = world.reset(n_agents, seed);
  std::vector<StepTrace> out;
  while (!state.done && static_cast<int>(out.size()) < steps) {
    std::vector<AgentAction> actions(n_agents, AgentAction{accel, 0.0});
    const SimState before = state;
    const JointObservation obs_before = obs;
    StepResult r = world.step(state, actions);
    out.push_back(make_step_trace(world, 0, before, obs_before, state, r.events));
    obs = r.obs;
  }
  return out;
}

std::size_t count(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (std::size_t pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace

TEST(Render, SingleStepMergeStructure) {
  Scenario sc = builtin_scenario("merge");
  auto traces = episode_traces("merge", 1, 1, 1, 0.0);
  ASSERT_EQ(traces.size(), 1u);
  const std::string svg = render_svg(sc, traces);
  EXPECT_EQ(count(svg, "class=\"lane\""), 3u);
  EXPECT_EQ(count(svg, "class=\"lane-band\""), 3u);
  EXPECT_EQ(count(svg, "fill=\"red\""), 1u);
  EXPECT_EQ(count(svg, "class=\"collision\""), 0u);
  EXPECT_EQ(count(svg, "class=\"waypoint\""), static_cast<std::size_t>(ObsLayout::kWaypoints));
  EXPECT_EQ(svg.rfind("</svg>\n"), svg.size() - 7);
}

TEST(Render, ByteIdentical) {
  Scenario sc = builtin_scenario("intersection");
  auto traces = episode_traces("intersection", 4, 2, 80, 0.5);
  EXPECT_EQ(render_svg(sc, traces), render_svg(sc, traces));
}

TEST(Render, OneCrossPerCollision) {
  // Every agent on merge accelerating straight ahead: the ramp car eventually runs off or hits someone.
  Scenario sc = builtin_scenario("merge");
  auto traces = episode_traces("merge", 3, 1, 1000, 1.0);
  std::size_t collisions = 0;
  for (const auto& t : traces) {
    for (const auto& a : t.agents) collisions += a.acted && a.events.collision ? 1 : 0;
  }
  ASSERT_GT(collisions, 0u);
  EXPECT_EQ(count(render_svg(sc, traces), "class=\"collision\""), collisions);
}

TEST(Render, TrajectoryPerMovingAgent) {
  Scenario sc = builtin_scenario("intersection");
  auto traces = episode_traces("intersection", 4, 3, 30, 0.2);
  const std::string svg = render_svg(sc, traces);
  EXPECT_EQ(count(svg, "class=\"trajectory\""), 4u);
  EXPECT_NE(svg.find("stroke=\"red\""), std::string::npos);
}

TEST(Render, ViewportRoundTrip) {
  Viewport vp = make_viewport(builtin_scenario("merge"), {});
  Rng rng(1);
  for (int k = 0; k < 100; ++k) {
    const Vec2 w{rng.uniform(-50, 200), rng.uniform(-50, 50)};
    const Vec2 back = vp.to_world(vp.to_view(w));
    EXPECT_NEAR(back.x, w.x, 1e-9);
    EXPECT_NEAR(back.y, w.y, 1e-9);
  }
}

TEST(Render, ViewBoxCoversLanes) {
  Scenario sc = builtin_scenario("merge");
  Viewport vp = make_viewport(sc, {});
  for (const auto& lane : sc.lanes) {
    for (const auto& p : lane.centerline) {
      const Vec2 v = vp.to_view(p);
      EXPECT_GE(v.x, 0.0);
      EXPECT_LE(v.x, vp.width);
      EXPECT_GE(v.y, 0.0);
      EXPECT_LE(v.y, vp.height);
    }
  }
}

TEST(Render, WaypointsInvertToObservationWaypoints) {
  Scenario sc = builtin_scenario("intersection");
  RenderOptions opt;
  auto traces = episode_traces("intersection", 2, 4, 40, 0.3);
  const std::string svg = render_svg(sc, traces, opt);
  const Viewport vp = make_viewport(sc, opt);
  const std::regex circle(
      "<circle class=\"waypoint\" data-agent=\"(\\d+)\" data-step=\"(\\d+)\" cx=\"([-0-9.]+)\" cy=\"([-0-9.]+)\"");
  std::vector<Vec2> expected;
  for (const auto& t : traces) {
    for (const auto& a : t.agents) {
      if (!a.acted) continue;
      for (const auto& w : a.waypoints) {
        if (w) expected.push_back(*w);
      }
    }
  }
  std::size_t k = 0;
  // values are printed with 3 decimals in px
  const double tol = 0.0005 / opt.pixels_per_meter + 1e-12;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), circle); it != std::sregex_iterator(); ++it, ++k) {
    ASSERT_LT(k, expected.size());
    const Vec2 w = vp.to_world({std::stod((*it)[3]), std::stod((*it)[4])});
    EXPECT_NEAR(w.x, expected[k].x, tol);
    EXPECT_NEAR(w.y, expected[k].y, tol);
  }
  EXPECT_EQ(k, expected.size());
}

TEST(Render, RejectsBadInput) {
  Scenario sc = builtin_scenario("merge");
  std::vector<StepTrace> none;
  EXPECT_THROW(render_svg(sc, none), std::invalid_argument);
  std::vector<StepTrace> mixed(2);
  mixed[1].episode_id = 1;
  EXPECT_THROW(render_svg(sc, mixed), std::invalid_argument);
}
