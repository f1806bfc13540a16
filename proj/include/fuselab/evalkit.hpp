#pragma once

// Detection quality: IoU, greedy matching, all-point interpolated AP, mAP.

#include <array>
#include <optional>
#include <vector>

#include "fuselab/types.hpp"

namespace fuselab {

// Throws ConfigError on a degenerate box.
double iou(const Box &a, const Box &b);

struct SceneDetection {
  int scene = 0;
  Detection det;
};

struct SceneGroundTruth {
  int scene = 0;
  GroundTruth gt;
};

// One per ranked detection; precision is the envelope value.
struct PRPoint {
  double recall = 0, precision = 0;
};

struct APResult {
  std::array<std::optional<double>, kNumClasses> ap;
  // Mean over classes that have at least one gt instance; 0 when none do.
  double map = 0;
  std::array<std::vector<PRPoint>, kNumClasses> pr;
};

inline constexpr double kMatchIou = 0.5;

// Detections of `cls` pooled over scenes. Each detection, in descending
// score order (insertion order on ties), takes the highest-IoU unmatched gt
// of its class in its scene when that IoU ≥ iou_thresh; otherwise it is a
// false positive. Returns the area under the precision envelope, or nullopt
// when no gt of the class exists.
std::optional<double> average_precision(const std::vector<SceneDetection> &dets,
                                        const std::vector<SceneGroundTruth> &gts, ObjectClass cls,
                                        double iou_thresh = kMatchIou, std::vector<PRPoint> *pr_out = nullptr);

APResult mean_average_precision(const std::vector<SceneDetection> &dets, const std::vector<SceneGroundTruth> &gts,
                                double iou_thresh = kMatchIou);

} // namespace fuselab
