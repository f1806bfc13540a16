#pragma once

// Masked multi-sensor L∞ attacks: PGD / FGSM on image intensities and on 3D
// point coordinates, with full-input or car-box masks, and black-box transfer.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fuselab/detector.hpp"
#include "fuselab/lidarmap.hpp"
#include "fuselab/scenegen.hpp"

namespace fuselab {

enum class MaskMode { Full, CarBoxes };

std::string_view mask_mode_name(MaskMode m);
MaskMode mask_mode_from_name(std::string_view name);

struct AttackSpec {
  bool image = false;  // channels in the attacked set
  bool lidar = false;
  float eps_image = 2.0f;    // intensity units
  float gamma_lidar = 0.3f;  // meters
  int steps = 10;
  std::optional<float> step_image;  // default eps/4
  std::optional<float> step_lidar;  // default gamma/4
  MaskMode mask = MaskMode::Full;
  bool rand_init = false;
  std::uint64_t seed = 0;

  void validate() const;
  float image_step() const { return step_image.value_or(eps_image / 4); }
  float lidar_step() const { return step_lidar.value_or(gamma_lidar / 4); }
};

struct MaskSet {
  int height = 0, width = 0;
  std::vector<std::uint8_t> image;   // H·W
  std::vector<std::uint8_t> points;  // one per cloud point
};

// CarBoxes: image pixels whose centre lies inside a car box; points whose
// unperturbed projection lies inside a car box.
MaskSet build_masks(const Scene &scene, const CameraIntrinsics &intr, MaskMode mode);

struct Perturbation {
  Tensor delta_image;               // 3×H×W, intensity units
  std::vector<Vec3> delta_points;   // one per cloud point, meters

  static Perturbation zeros(const CameraIntrinsics &intr, std::size_t points);
  bool operator==(const Perturbation &) const = default;
};

// Empty when `pert` is a feasible point of `spec` under `masks`; otherwise
// one message per violated constraint.
std::vector<std::string> feasibility_violations(const Perturbation &pert, const Scene &scene, const AttackSpec &spec,
                                                const MaskSet &masks);

struct PerturbedInputs {
  Tensor rgb;      // 3×H×W, [0,255]
  Tensor rgb01;    // rgb / 255
  PointCloud cloud;
  DepthMaps maps;
  Tensor lidar;    // normalized 2×H×W
};

Tensor rgb_to_unit(const Tensor &rgb);

PerturbedInputs apply_perturbation(const Scene &scene, const Perturbation &pert, const CameraIntrinsics &intr,
                                   const DepthStats &stats);

// Called with the iterate index (0 = initial point) after every update.
using AttackObserver = std::function<void(int iteration, const Perturbation &pert, double loss)>;

// Ascends the regression loss of `model` against the scene's gt.
Perturbation pgd_attack(const Model &model, const Scene &scene, const AttackSpec &spec, const CameraIntrinsics &intr,
                        const DepthStats &stats, const AttackObserver &observer = {});

// Detections of `target` on inputs perturbed by an attack crafted on `source`.
std::vector<Detection> transfer_attack(const Model &source, const Model &target, const Scene &scene,
                                       const AttackSpec &spec, const CameraIntrinsics &intr,
                                       const DepthStats &stats, float score_thresh = kDefaultScoreThresh,
                                       float nms_iou = kDefaultNmsIou);

// pert_<i>.bin: u64 count + f32 image block, then u64 count + f32 point block.
void save_perturbation(const std::filesystem::path &path, const Perturbation &pert);
Perturbation load_perturbation(const std::filesystem::path &path, const CameraIntrinsics &intr,
                               std::size_t points);

} // namespace fuselab
