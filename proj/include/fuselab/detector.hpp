#pragma once

// Toy single-stage grid detectors in four sensor-fusion layouts.
//
//   Rgb / Depth / Early: one backbone
//     conv3x3(s1,16) conv3x3(s2,32) conv3x3(s2,64) conv3x3(s2,64), leaky 0.1
//     Early concatenates the 3 RGB and 2 LiDAR channels at the input.
//   Late: an RGB route 3→16→32→32 and a LiDAR route 2→16→32→32 (each
//     conv3x3 s2, leaky), channel concat to 64, conv3x3(s1,64)+leaky.
//   All: 1×1 head with 1 + 3 + 4 outputs per cell (objectness, class
//   logits, tx ty tw th) on the stride-8 grid.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fuselab/ndlab.hpp"
#include "fuselab/types.hpp"

namespace fuselab {

enum class FusionMode { Rgb, Depth, Early, Late };

std::string_view fusion_name(FusionMode m);
FusionMode fusion_from_name(std::string_view name);
bool uses_rgb(FusionMode m);
bool uses_lidar(FusionMode m);

struct DetectorConfig {
  FusionMode mode = FusionMode::Early;
  int height = 96, width = 128;
  int stride = 8;
  std::vector<int> backbone_widths{16, 32, 64, 64};
  std::vector<int> route_widths{16, 32, 32};  // Late fusion, per sensor
  int fuse_width = 64;
  float leaky_slope = 0.1f;

  static constexpr int kHeadChannels = 1 + kNumClasses + 4;

  void validate() const;
  int input_channels() const;
  int grid_h() const { return height / stride; }
  int grid_w() const { return width / stride; }
  bool operator==(const DetectorConfig &) const = default;
};

struct Model {
  DetectorConfig config;
  ParamStore params;
};

// He-uniform weights from named streams of `seed`, zero biases.
ParamStore init_params(const DetectorConfig &config, std::uint64_t seed);
// Throws ConfigError when `params` does not have the layout of `config`.
void check_params(const DetectorConfig &config, const ParamStore &params);

// rgb: 3×H×W in [0,1]; lidar: 2×H×W normalized maps. Returns the raw
// (1+K+4)×(H/8)×(W/8) prediction grid.
Var detector_forward(Tape &tape, const std::map<std::string, Var> &params, const DetectorConfig &config,
                     std::optional<Var> rgb, std::optional<Var> lidar);
// Tape-free forward.
Tensor predict(const Model &model, const Tensor *rgb, const Tensor *lidar);

struct Targets {
  int grid_h = 0, grid_w = 0;
  Tensor objectness;      // 1×Gh×Gw, 1 at positive cells
  Tensor obj_weights;     // 1/cells everywhere
  std::vector<int> labels;  // class per cell (0 where negative)
  Tensor cls_weights;     // 1×Gh×Gw, 1/positives at positive cells
  Tensor box;             // 4×Gh×Gw: tx ty ∈ [0,1), tw = ln(w/W), th = ln(h/H)
  Tensor box_weights;     // 4×Gh×Gw, 1/positives at positive cells
  int positives = 0;
  int dropped = 0;        // boxes that lost their cell to a larger one
};

Targets assign_targets(const std::vector<GroundTruth> &gt, const DetectorConfig &config);

inline constexpr float kRegressionWeight = 5.0f;

struct LossTerms {
  Var total, objectness, cls, regression;
};

LossTerms detector_loss(Var pred, const Targets &targets);
// Regression component alone: smooth-L1 over (sigmoid tx, sigmoid ty, tw, th)
// at positive cells, averaged per positive.
Var regression_loss(Var pred, const Targets &targets);

inline constexpr float kDefaultScoreThresh = 0.1f;
inline constexpr float kDefaultNmsIou = 0.5f;

std::vector<Detection> decode(const Tensor &pred, const DetectorConfig &config,
                              float score_thresh = kDefaultScoreThresh, float iou_thresh = kDefaultNmsIou);

} // namespace fuselab
