#pragma once

// A dataset split loaded into memory with the clean network inputs
// precomputed once per scene.

#include <filesystem>
#include <optional>
#include <vector>

#include "fuselab/lidarmap.hpp"
#include "fuselab/scenegen.hpp"

namespace fuselab {

struct Sample {
  Scene scene;
  Tensor rgb01;  // rgb / 255
  Tensor lidar;  // normalized 2×H×W
};

struct Dataset {
  DatasetManifest manifest;
  DepthStats stats;
  std::vector<Sample> samples;

  const CameraIntrinsics &intrinsics() const { return manifest.intrinsics; }
  std::size_t size() const { return samples.size(); }
};

// Uses `stats` when given, otherwise the manifest's own statistics
// (ConfigError when neither is available).
Dataset load_dataset(const std::filesystem::path &dir, std::optional<DepthStats> stats = std::nullopt);
Dataset make_dataset(DatasetManifest manifest, std::vector<Scene> scenes, const DepthStats &stats);

} // namespace fuselab
