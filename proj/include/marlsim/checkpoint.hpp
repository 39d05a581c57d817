#ifndef MARLSIM_CHECKPOINT_HPP_
#define MARLSIM_CHECKPOINT_HPP_

#include <cstdint>
#include <filesystem>
#include <string>

#include "marlsim/config.hpp"
#include "marlsim/maddpg.hpp"
#include "marlsim/mappo.hpp"

namespace marlsim {

inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
  int version = kCheckpointVersion;
  Algo algo = Algo::kMaddpg;
  std::string config_digest;
  std::string scenario_digest;
  RunConfig config;
  std::int64_t episode = 0;
  std::int64_t env_steps = 0;
};

// JSON text with explicit layer shapes. MADDPG checkpoints also write the
// replay contents to a binary sidecar (same stem, ".replay") so a resumed
// run continues bit-exactly.
void save_checkpoint(const std::filesystem::path& file, const RunConfig& config, const MaddpgTrainer& trainer);
void save_checkpoint(const std::filesystem::path& file, const RunConfig& config, const MappoTrainer& trainer);

std::filesystem::path replay_sidecar(const std::filesystem::path& checkpoint);

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& file);

// Overwrite a freshly constructed trainer with the saved state.
void restore_checkpoint(const std::filesystem::path& file, MaddpgTrainer& trainer);
void restore_checkpoint(const std::filesystem::path& file, MappoTrainer& trainer);

// Learners only; enough for evaluation.
Maddpg load_maddpg_learner(const std::filesystem::path& file);
Mappo load_mappo_learner(const std::filesystem::path& file);

}  // namespace marlsim

#endif  // MARLSIM_CHECKPOINT_HPP_
