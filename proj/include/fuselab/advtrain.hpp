#pragma once

// Clean and adversarial training: seeded minibatch SGD with a cosine or
// cyclic learning-rate schedule, and FGSM with random start as the inner
// maximization for the AT variants.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fuselab/attacks.hpp"
#include "fuselab/dataset.hpp"
#include "fuselab/detector.hpp"

namespace fuselab {

struct LrSchedule {
  enum class Kind { Cosine, Cyclic };
  Kind kind = Kind::Cosine;
  float start = 0.01f, end = 0.002f;           // cosine
  float max_lr = 1e-3f, peak_fraction = 0.4f;  // cyclic

  static LrSchedule cosine(float start, float end) { return {Kind::Cosine, start, end, 1e-3f, 0.4f}; }
  static LrSchedule cyclic(float max_lr, float peak_fraction) {
    return {Kind::Cyclic, 0.01f, 0.002f, max_lr, peak_fraction};
  }
  void validate() const;
};

// cosine: max(end, start·(1+cos(π·step/total))/2)
// cyclic: linear 0 → max_lr up to peak_fraction·total, then linear → 0.
float lr_at(int step, int total_steps, const LrSchedule &schedule);

// From-scratch default for clean and adversarial training alike.
inline constexpr float kDefaultMaxLr = 0.08f;
inline constexpr float kDefaultPeakFraction = 0.3f;

enum class AtVariant { None, Image, Car, Lidar, LidarCar, Joint, JointCar };

std::string_view at_variant_name(AtVariant v);
AtVariant at_variant_from_name(std::string_view name);

struct TrainConfig {
  int epochs = 60;
  int batch_size = 8;
  std::optional<LrSchedule> schedule;  // default cyclic(kDefaultMaxLr, kDefaultPeakFraction)
  AtVariant variant = AtVariant::None;
  float eps_image = 2.0f;
  float gamma_lidar = 0.3f;
  std::uint64_t seed = 0;

  LrSchedule resolved_schedule() const;
  void validate(FusionMode mode) const;
};

// Attack spec of the variant's FGSM-RS step.
AttackSpec at_attack_spec(const TrainConfig &config, std::uint64_t seed);

// FGSM-RS perturbation of one training scene (variant must not be None).
PerturbedInputs at_inner(const Scene &scene, const Model &model, const TrainConfig &config,
                         const CameraIntrinsics &intr, const DepthStats &stats, std::uint64_t seed);

struct EpochStats {
  int epoch = 0;  // 1-based
  double loss_total = 0, loss_obj = 0, loss_cls = 0, loss_reg = 0;  // means over the epoch's scenes
  float lr = 0;  // at the epoch's last step
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::vector<float> lr_trace;  // one per step
  std::optional<double> val_map;
  double wall_seconds = 0;
  int dropped_objects = 0;  // training gt boxes that lost their cell
  int steps = 0;
};

using EpochObserver = std::function<void(const EpochStats &, const Model &)>;

// Trains from init_params(model_config, seed). `val`, when given, is
// evaluated once after the last epoch.
Model train(const DetectorConfig &model_config, const Dataset &train_data, const TrainConfig &config,
            TrainReport &report, const Dataset *val = nullptr, const EpochObserver &observer = {});

std::string report_to_json(const TrainReport &report);

} // namespace fuselab
