#pragma once

// Experiment configuration: one JSON file drives world construction, the
// three training stages, loss-weight overrides and the ablation arm list.
// Unknown keys are rejected.

#include <filesystem>
#include <string>
#include <vector>

#include "emo/synthworld.hpp"
#include "emo/toytrain.hpp"

namespace emo::config {

struct ArmConfig {
  std::string name;
  train::Ablation ablation;
  int z_dim = 0;  // 0 keeps the stage default
};

struct DistillConfig {
  int frames = 160;
  int components = 8;
};

struct ExperimentConfig {
  uint64_t seed = 1;
  std::string out_dir = "out";
  world::WorldConfig world;
  train::TrainConfig base;
  train::TrainConfig audio;
  train::TrainConfig rotgan;
  DistillConfig distill;
  std::vector<ArmConfig> arms;

  static ExperimentConfig from_json(const std::string& text);
  static ExperimentConfig from_file(const std::filesystem::path& path);
  std::string to_json() const;  // canonical form, used for the config hash
  void apply_seed(uint64_t seed_override);
};

}  // namespace emo::config
