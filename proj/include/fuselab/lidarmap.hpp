#pragma once

// Point cloud → two-channel LiDAR image (dense depth + distance-to-source),
// and the straight-through backward pass from map values to point coordinates.

#include <vector>

#include "fuselab/ndlab.hpp"
#include "fuselab/scenegen.hpp"
#include "fuselab/types.hpp"

namespace fuselab {

struct Hit {
  int pixel = -1;  // row-major linear index
  int point = -1;  // index into the cloud
  float u = 0, v = 0;
  float depth = 0;
};

struct SparseHits {
  int height = 0, width = 0;
  std::vector<Hit> hits;          // ascending pixel index
  std::vector<int> hit_at_pixel;  // H·W, index into hits or −1
};

struct DepthMaps {
  int height = 0, width = 0;
  std::vector<float> depth;     // meters
  std::vector<float> distance;  // pixels
  std::vector<int> assign;      // source point, −1 when the cloud hit nothing
  std::vector<int> source;      // occupied pixel the value was copied from, −1 likewise
};

SparseHits project_points(const PointCloud &cloud, const CameraIntrinsics &intr);
DepthMaps densify(const SparseHits &hits, int height, int width);

// Largest pixel-centre distance in an H×W image.
float max_pixel_distance(int height, int width);

// 2×H×W: (depth − mean)/std, distance / max_pixel_distance.
Tensor normalize_depth(const DepthMaps &maps, const DepthStats &stats);
// Gradient w.r.t. the normalized input → gradient w.r.t. raw maps (meters, pixels).
Tensor normalize_depth_backward(const Tensor &grad_input, const DepthStats &stats);

// grad_maps: 2×H×W gradient w.r.t. (depth, distance). Returns N×3 gradient
// w.r.t. the cloud with the assignment in `maps` held fixed.
std::vector<Vec3> maps_backward(const Tensor &grad_maps, const DepthMaps &maps, const PointCloud &cloud,
                                const CameraIntrinsics &intr);

// project + densify + normalize.
Tensor lidar_input(const PointCloud &cloud, const CameraIntrinsics &intr, const DepthStats &stats,
                   DepthMaps *maps_out = nullptr);

} // namespace fuselab
