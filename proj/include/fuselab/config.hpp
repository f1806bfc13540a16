#pragma once

// Experiment configuration: one JSON document with sections dataset, model,
// train, attack and eval. Every field except the master seed has a default;
// unknown keys are rejected.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fuselab/advtrain.hpp"
#include "fuselab/attacks.hpp"
#include "fuselab/detector.hpp"
#include "fuselab/evaluate.hpp"
#include "fuselab/scenegen.hpp"

namespace fuselab {

struct ExperimentConfig {
  std::optional<std::uint64_t> seed;

  int train_count = 400, val_count = 100;
  CameraIntrinsics intrinsics;
  SceneSpec scene_spec;

  FusionMode fusion = FusionMode::Early;

  TrainConfig train;  // train.seed is filled from `seed`

  AttackFamily family = AttackFamily::FullImage;  // curve and transfer
  AttackSpec attack = [] {  // attack and eval --white-box
    AttackSpec a;
    a.image = true;
    return a;
  }();

  std::string split = "val";
  EvalOptions eval;
  std::optional<std::vector<float>> budgets;

  std::uint64_t master_seed() const;
  DetectorConfig detector() const;
  std::vector<float> resolved_budgets() const;
};

// Throws ConfigError with line/column on malformed JSON, and with the key
// path on schema violations.
ExperimentConfig parse_config(const std::string &text);
nlohmann::ordered_json config_to_json(const ExperimentConfig &c);

// Seed precedence: explicit flag, then FUSELAB_SEED, then the config file.
void apply_seed_override(ExperimentConfig &c, std::optional<std::uint64_t> flag);

} // namespace fuselab
