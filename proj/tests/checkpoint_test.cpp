#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "marlsim/checkpoint.hpp"
#include "marlsim/errors.hpp"

using namespace marlsim;
namespace fs = std::filesystem;

namespace {

RunConfig small_maddpg() {
  RunConfig c;
  c.algo = Algo::kMaddpg;
  c.scenario_name = "merge";
  c.scenario = builtin_scenario("merge");
  c.agents = 2;
  c.seed = 4;
  c.episodes = 6;
  c.maddpg.hidden = {16, 16};
  c.maddpg.batch = 16;
  c.maddpg.warmup_steps = 40;
  c.maddpg.per.capacity = 2048;
  return c;
}

RunConfig small_mappo() {
  RunConfig c;
  c.algo = Algo::kMappo;
  c.scenario_name = "straight";
  c.scenario = builtin_scenario("straight");
  c.agents = 1;
  c.seed = 4;
  c.env_steps = 1500;
  c.ppo.hidden = {16, 16};
  c.ppo.horizon = 128;
  return c;
}

MaddpgTrainer maddpg_trainer(const RunConfig& c) {
  return MaddpgTrainer(c.scenario, c.agents, c.maddpg, c.episodes, c.seed);
}

MappoTrainer mappo_trainer(const RunConfig& c) {
  return MappoTrainer(c.scenario, c.agents, c.ppo, {c.episodes, c.env_steps}, c.seed);
}

class Scratch {
 public:
  Scratch() {
    dir_ = fs::temp_directory_path() /
           ("marlsim-ckpt-" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  ~Scratch() { fs::remove_all(dir_); }
  fs::path operator/(const std::string& name) const { return dir_ / name; }

 private:
  fs::path dir_;
};

nlohmann::json load_json(const fs::path& p) {
  std::ifstream is(p);
  return nlohmann::json::parse(is);
}

void store_json(const fs::path& p, const nlohmann::json& j) {
  std::ofstream os(p);
  os << j.dump(1);
}

std::string buffer_bytes(const PrioritizedReplay& b) {
  std::ostringstream os(std::ios::binary);
  b.save(os);
  return os.str();
}

}  // namespace

TEST(Checkpoint, MaddpgRoundTrip) {
  Scratch dir;
  const RunConfig c = small_maddpg();
  MaddpgTrainer a = maddpg_trainer(c);
  for (int k = 0; k < 3; ++k) a.run_episode();
  save_checkpoint(dir / "ckpt.json", c, a);
  EXPECT_TRUE(fs::exists(dir / "ckpt.replay"));

  MaddpgTrainer b = maddpg_trainer(c);
  restore_checkpoint(dir / "ckpt.json", b);
  EXPECT_EQ(b.episode(), a.episode());
  EXPECT_EQ(b.env_steps(), a.env_steps());
  EXPECT_EQ(b.history(), a.history());
  EXPECT_EQ(b.learner().agents(), a.learner().agents());
  EXPECT_EQ(b.rng(), a.rng());
  EXPECT_EQ(buffer_bytes(b.buffer()), buffer_bytes(a.buffer()));

  const CheckpointMeta meta = read_checkpoint_meta(dir / "ckpt.json");
  EXPECT_EQ(meta.algo, Algo::kMaddpg);
  EXPECT_EQ(meta.episode, 3);
  EXPECT_EQ(meta.config_digest, config_digest(c));
  EXPECT_EQ(config_echo(meta.config), config_echo(c));
}

TEST(Checkpoint, MaddpgResumeContinuesBitExactly) {
  Scratch dir;
  const RunConfig c = small_maddpg();
  MaddpgTrainer straight = maddpg_trainer(c);
  straight.train();

  MaddpgTrainer first = maddpg_trainer(c);
  for (int k = 0; k < 3; ++k) first.run_episode();
  save_checkpoint(dir / "ckpt.json", c, first);
  MaddpgTrainer resumed = maddpg_trainer(c);
  restore_checkpoint(dir / "ckpt.json", resumed);
  resumed.train();

  EXPECT_EQ(resumed.history(), straight.history());
  EXPECT_EQ(resumed.learner().agents(), straight.learner().agents());
  EXPECT_EQ(resumed.env_steps(), straight.env_steps());
}

TEST(Checkpoint, MappoResumeContinuesBitExactly) {
  Scratch dir;
  const RunConfig c = small_mappo();
  MappoTrainer straight = mappo_trainer(c);
  straight.train();

  MappoTrainer first = mappo_trainer(c);
  // stop partway through a rollout so the pending buffer is part of the state
  while (first.env_steps() < 700) first.run_episode();
  ASSERT_FALSE(first.rollout().empty());
  save_checkpoint(dir / "ckpt.json", c, first);
  MappoTrainer resumed = mappo_trainer(c);
  restore_checkpoint(dir / "ckpt.json", resumed);
  EXPECT_EQ(resumed.rollout(), first.rollout());
  EXPECT_EQ(resumed.updates(), first.updates());
  resumed.train();

  EXPECT_EQ(resumed.history(), straight.history());
  EXPECT_EQ(resumed.learner().actors(), straight.learner().actors());
  EXPECT_EQ(resumed.updates(), straight.updates());
}

TEST(Checkpoint, LearnerOnlyLoad) {
  Scratch dir;
  const RunConfig c = small_mappo();
  MappoTrainer t = mappo_trainer(c);
  t.run_episode();
  save_checkpoint(dir / "m.json", c, t);
  Mappo learner = load_mappo_learner(dir / "m.json");
  EXPECT_EQ(learner.actors(), t.learner().actors());
  EXPECT_THROW(load_maddpg_learner(dir / "m.json"), ParseError);
}

TEST(Checkpoint, VersionMismatchIsHardError) {
  Scratch dir;
  const RunConfig c = small_mappo();
  MappoTrainer t = mappo_trainer(c);
  save_checkpoint(dir / "m.json", c, t);
  auto j = load_json(dir / "m.json");
  j["version"] = kCheckpointVersion + 1;
  store_json(dir / "m.json", j);
  try {
    read_checkpoint_meta(dir / "m.json");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}

TEST(Checkpoint, CorruptFieldIsNamed) {
  Scratch dir;
  const RunConfig c = small_maddpg();
  MaddpgTrainer t = maddpg_trainer(c);
  save_checkpoint(dir / "ckpt.json", c, t);
  const auto good = load_json(dir / "ckpt.json");

  auto expect_named = [&](const nlohmann::json& doc, const std::string& needle) {
    store_json(dir / "ckpt.json", doc);
    MaddpgTrainer fresh = maddpg_trainer(c);
    try {
      restore_checkpoint(dir / "ckpt.json", fresh);
      ADD_FAILURE() << "expected ParseError for " << needle;
    } catch (const ParseError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };

  auto short_weights = good;
  short_weights["agents"][0]["critic"]["layers"][1]["weights"].erase(0);
  expect_named(short_weights, "agents[0].critic.layers[1].weights");

  auto bad_number = good;
  bad_number["agents"][1]["actor"]["layers"][0]["bias"][2] = "x";
  expect_named(bad_number, "agents[1].actor.layers[0].bias[2]");

  auto no_rng = good;
  no_rng.erase("rng");
  expect_named(no_rng, "rng");

  auto bad_history = good;
  bad_history["history"] = 3;
  expect_named(bad_history, "history");

  std::ofstream(dir / "ckpt.json") << "{ not json";
  MaddpgTrainer fresh = maddpg_trainer(c);
  EXPECT_THROW(restore_checkpoint(dir / "ckpt.json", fresh), ParseError);
}

TEST(Checkpoint, ShapeMismatchAgainstConfig) {
  Scratch dir;
  RunConfig c = small_maddpg();
  MaddpgTrainer t = maddpg_trainer(c);
  save_checkpoint(dir / "ckpt.json", c, t);
  RunConfig wider = c;
  wider.maddpg.hidden = {32, 16};
  MaddpgTrainer other = maddpg_trainer(wider);
  EXPECT_THROW(restore_checkpoint(dir / "ckpt.json", other), ParseError);
}

TEST(Checkpoint, MissingFilesAreIoErrors) {
  Scratch dir;
  const RunConfig c = small_maddpg();
  MaddpgTrainer t = maddpg_trainer(c);
  EXPECT_THROW(read_checkpoint_meta(dir / "absent.json"), IoError);
  save_checkpoint(dir / "ckpt.json", c, t);
  fs::remove(dir / "ckpt.replay");
  EXPECT_THROW(restore_checkpoint(dir / "ckpt.json", t), IoError);
}

TEST(Checkpoint, WrongAlgoRejected) {
  Scratch dir;
  const RunConfig c = small_maddpg();
  MaddpgTrainer t = maddpg_trainer(c);
  save_checkpoint(dir / "ckpt.json", c, t);
  MappoTrainer m = mappo_trainer(small_mappo());
  EXPECT_THROW(restore_checkpoint(dir / "ckpt.json", m), ParseError);
}
