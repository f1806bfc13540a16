#pragma once

// Synthetic driving scenes: cuboid cars, pedestrians and cyclists on a flat
// ground plane, rendered to an RGB image and sampled as a LiDAR point cloud.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fuselab/ndlab.hpp"
#include "fuselab/types.hpp"

namespace fuselab {

struct CountRange {
  int min = 0, max = 0;
};

struct SceneSpec {
  std::array<CountRange, kNumClasses> counts{{{1, 4}, {0, 2}, {0, 2}}};
  float x_min = -8, x_max = 8;  // lateral placement, meters
  float z_min = 6, z_max = 35;  // forward placement, meters
  float pixel_noise = 4;        // Gaussian σ, intensity units
  float brightness_jitter = 0.2f;
  float point_noise = 0.01f;    // Gaussian σ on LiDAR coordinates, meters
  float point_density = 20000;  // object points = density / z²
  int ground_points = 1500;
  float dropout = 0.05f;

  void validate() const;
};

// length × height × width, meters.
struct ClassDims {
  float length, height, width;
};
ClassDims class_dims(ObjectClass c);

inline constexpr float kGroundY = 1.5f;

struct Scene {
  Tensor rgb;  // 3×H×W, [0,255]
  PointCloud cloud;
  std::vector<GroundTruth> gt;
  // Index into gt of the object each point was sampled from, −1 for ground.
  // Generator-side only; empty for scenes loaded from disk.
  std::vector<int> point_owner;
};

Scene generate_scene(const SceneSpec &spec, const CameraIntrinsics &intr, std::uint64_t seed);

struct DepthStats {
  double mean = 0;
  double std = 1;
};

struct SceneFiles {
  std::string rgb, cloud, labels;
};

struct DatasetManifest {
  static constexpr int kFormatVersion = 1;
  int format_version = kFormatVersion;
  std::string split = "train";
  std::uint64_t master_seed = 0;
  CameraIntrinsics intrinsics;
  SceneSpec spec;
  std::vector<SceneFiles> scenes;
  std::optional<DepthStats> stats;
};

// Writes scenes 0..count-1 (seed = split_mix(master_seed, i)) plus
// manifest.json into out_dir. Train splits also get depth statistics.
DatasetManifest generate_dataset(const SceneSpec &spec, const CameraIntrinsics &intr, int count,
                                 std::uint64_t master_seed, const std::filesystem::path &out_dir,
                                 const std::string &split = "train",
                                 std::optional<DepthStats> stats = std::nullopt);

// Seed of the validation split derived from the experiment seed.
std::uint64_t val_split_seed(std::uint64_t master_seed);

// Mean/std of densified depth over every pixel of every scene.
DepthStats compute_depth_stats(const std::vector<Scene> &scenes, const CameraIntrinsics &intr);

std::string manifest_to_json(const DatasetManifest &m);
DatasetManifest manifest_from_json(const std::string &text);
DatasetManifest load_manifest(const std::filesystem::path &dir);
Scene load_scene(const std::filesystem::path &dir, const DatasetManifest &m, std::size_t index);
void save_scene(const std::filesystem::path &dir, const SceneFiles &files, const Scene &scene);

std::string labels_to_json(const std::vector<GroundTruth> &gt);
std::vector<GroundTruth> labels_from_json(const std::string &text);

} // namespace fuselab
