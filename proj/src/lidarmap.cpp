#include "fuselab/lidarmap.hpp"

#include <algorithm>
#include <cmath>

#include "fuselab/errors.hpp"

namespace fuselab {

SparseHits project_points(const PointCloud &cloud, const CameraIntrinsics &intr) {
  const int H = intr.height, W = intr.width;
  SparseHits out;
  out.height = H;
  out.width = W;
  std::vector<int> winner(static_cast<std::size_t>(H) * W, -1);
  std::vector<float> wu(winner.size()), wv(winner.size()), wz(winner.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3 &p = cloud[i];
    if (!(p.z > 0.0f) || !std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
      continue;
    const float u = intr.project_u(p);
    const float v = intr.project_v(p);
    const float fu = std::floor(u), fv = std::floor(v);
    if (!(fu >= 0.0f && fu < static_cast<float>(W) && fv >= 0.0f && fv < static_cast<float>(H)))
      continue;
    const auto pix = static_cast<std::size_t>(fv) * W + static_cast<std::size_t>(fu);
    if (winner[pix] < 0 || p.z < wz[pix]) {
      winner[pix] = static_cast<int>(i);
      wu[pix] = u;
      wv[pix] = v;
      wz[pix] = p.z;
    }
  }
  out.hit_at_pixel.assign(winner.size(), -1);
  for (std::size_t pix = 0; pix < winner.size(); ++pix) {
    if (winner[pix] < 0)
      continue;
    out.hit_at_pixel[pix] = static_cast<int>(out.hits.size());
    out.hits.push_back(Hit{static_cast<int>(pix), winner[pix], wu[pix], wv[pix], wz[pix]});
  }
  return out;
}

DepthMaps densify(const SparseHits &hits, int height, int width) {
  if (hits.height != height || hits.width != width)
    throw ConfigError("densify: hits are " + std::to_string(hits.height) + "x" + std::to_string(hits.width) +
                      ", requested " + std::to_string(height) + "x" + std::to_string(width));
  const int H = height, W = width;
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  DepthMaps m;
  m.height = H;
  m.width = W;
  m.depth.assign(HW, 0.0f);
  m.distance.assign(HW, 0.0f);
  m.assign.assign(HW, -1);
  m.source.assign(HW, -1);
  if (hits.hits.empty())
    return m;

  // nearest_row[c·H + r]: occupied row in column c closest to r, the upper
  // one on ties (smaller linear index); −1 for an empty column.
  std::vector<int> nearest_row(HW, -1);
  for (int c = 0; c < W; ++c) {
    int *col = nearest_row.data() + static_cast<std::size_t>(c) * H;
    int last = -1;
    for (int r = 0; r < H; ++r) {
      if (hits.hit_at_pixel[static_cast<std::size_t>(r) * W + c] >= 0)
        last = r;
      col[r] = last;
    }
    int next = -1;
    for (int r = H - 1; r >= 0; --r) {
      if (hits.hit_at_pixel[static_cast<std::size_t>(r) * W + c] >= 0)
        next = r;
      if (next >= 0 && (col[r] < 0 || next - r < r - col[r]))
        col[r] = next;
    }
  }

  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      long best_d2 = -1;
      long best_q = -1;
      auto consider = [&](int cc, long dc) {
        const int rr = nearest_row[static_cast<std::size_t>(cc) * H + r];
        if (rr < 0)
          return;
        const long d2 = dc * dc + static_cast<long>(rr - r) * (rr - r);
        const long q = static_cast<long>(rr) * W + cc;
        if (best_d2 < 0 || d2 < best_d2 || (d2 == best_d2 && q < best_q)) {
          best_d2 = d2;
          best_q = q;
        }
      };
      const int reach = std::max(c, W - 1 - c);
      for (int dc = 0; dc <= reach; ++dc) {
        if (best_d2 >= 0 && static_cast<long>(dc) * dc > best_d2)
          break;
        if (c - dc >= 0)
          consider(c - dc, dc);
        if (dc > 0 && c + dc < W)
          consider(c + dc, dc);
      }
      const Hit &h = hits.hits[static_cast<std::size_t>(hits.hit_at_pixel[static_cast<std::size_t>(best_q)])];
      const std::size_t p = static_cast<std::size_t>(r) * W + c;
      const float dx = (static_cast<float>(c) + 0.5f) - h.u;
      const float dy = (static_cast<float>(r) + 0.5f) - h.v;
      m.depth[p] = h.depth;
      // a directly hit pixel carries its own measurement
      m.distance[p] = best_q == static_cast<long>(p) ? 0.0f : std::sqrt(dx * dx + dy * dy);
      m.assign[p] = h.point;
      m.source[p] = h.pixel;
    }
  return m;
}

float max_pixel_distance(int height, int width) {
  return std::hypot(static_cast<float>(width - 1), static_cast<float>(height - 1));
}

Tensor normalize_depth(const DepthMaps &maps, const DepthStats &stats) {
  if (!(stats.std > 0.0) || !std::isfinite(stats.std))
    throw ConfigError("normalize_depth: depth std must be positive (degenerate dataset)");
  const std::size_t HW = static_cast<std::size_t>(maps.height) * maps.width;
  Tensor out({2, maps.height, maps.width});
  const auto mean = static_cast<float>(stats.mean);
  const auto std_dev = static_cast<float>(stats.std);
  const float diag = max_pixel_distance(maps.height, maps.width);
  for (std::size_t p = 0; p < HW; ++p) {
    out[p] = (maps.depth[p] - mean) / std_dev;
    out[HW + p] = maps.distance[p] / diag;
  }
  return out;
}

Tensor normalize_depth_backward(const Tensor &grad_input, const DepthStats &stats) {
  if (grad_input.rank() != 3 || grad_input.dim(0) != 2)
    throw ConfigError("normalize_depth_backward: expected 2×H×W, got " + shape_str(grad_input.shape()));
  const std::size_t HW = static_cast<std::size_t>(grad_input.dim(1)) * grad_input.dim(2);
  const auto std_dev = static_cast<float>(stats.std);
  const float diag = max_pixel_distance(grad_input.dim(1), grad_input.dim(2));
  Tensor out(grad_input.shape());
  for (std::size_t p = 0; p < HW; ++p) {
    out[p] = grad_input[p] / std_dev;
    out[HW + p] = grad_input[HW + p] / diag;
  }
  return out;
}

std::vector<Vec3> maps_backward(const Tensor &grad_maps, const DepthMaps &maps, const PointCloud &cloud,
                                const CameraIntrinsics &intr) {
  const int H = maps.height, W = maps.width;
  if (grad_maps.shape() != std::vector<int>{2, H, W})
    throw ConfigError("maps_backward: gradient shape " + shape_str(grad_maps.shape()) + " does not match maps");
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  std::vector<Vec3> grad(cloud.size());
  for (std::size_t p = 0; p < HW; ++p) {
    const int i = maps.assign[p];
    if (i < 0)
      continue;
    if (static_cast<std::size_t>(i) >= cloud.size())
      throw ConfigError("maps_backward: assignment refers to point " + std::to_string(i) + " beyond cloud");
    Vec3 &g = grad[static_cast<std::size_t>(i)];
    g.z += grad_maps[p];

    const float gd = grad_maps[HW + p];
    if (gd == 0.0f || maps.source[p] == static_cast<int>(p))
      continue;
    const Vec3 &pt = cloud[static_cast<std::size_t>(i)];
    const float u = intr.project_u(pt), v = intr.project_v(pt);
    const float pcx = static_cast<float>(p % W) + 0.5f;
    const float pcy = static_cast<float>(p / W) + 0.5f;
    const float du = u - pcx, dv = v - pcy;
    const float d = std::sqrt(du * du + dv * dv);
    if (d == 0.0f)
      continue;
    const float ddu = gd * du / d, ddv = gd * dv / d;
    const float inv_z = 1.0f / pt.z;
    g.x += ddu * intr.fx * inv_z;
    g.y += ddv * intr.fy * inv_z;
    g.z += -(ddu * intr.fx * pt.x + ddv * intr.fy * pt.y) * inv_z * inv_z;
  }
  return grad;
}

Tensor lidar_input(const PointCloud &cloud, const CameraIntrinsics &intr, const DepthStats &stats,
                   DepthMaps *maps_out) {
  auto maps = densify(project_points(cloud, intr), intr.height, intr.width);
  Tensor t = normalize_depth(maps, stats);
  if (maps_out)
    *maps_out = std::move(maps);
  return t;
}

} // namespace fuselab
