#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "fuselab/errors.hpp"
#include "fuselab/lidarmap.hpp"
#include "fuselab/rng.hpp"
#include "fuselab/scenegen.hpp"
#include "oracles.hpp"

using namespace fuselab;

namespace {

CameraIntrinsics small_intr(int h, int w) {
  CameraIntrinsics i;
  i.height = h;
  i.width = w;
  i.fx = i.fy = 20;
  i.cx = w / 2.0f;
  i.cy = h / 2.0f;
  return i;
}

PointCloud random_cloud(std::mt19937_64 &rng, int n, float spread) {
  std::uniform_real_distribution<float> xy(-spread, spread), z(2, 12);
  PointCloud c;
  for (int i = 0; i < n; ++i)
    c.push_back({xy(rng), xy(rng), z(rng)});
  return c;
}

void expect_maps_identical(const DepthMaps &a, const DepthMaps &b) {
  ASSERT_EQ(a.depth.size(), b.depth.size());
  for (std::size_t p = 0; p < a.depth.size(); ++p) {
    ASSERT_EQ(std::memcmp(&a.depth[p], &b.depth[p], sizeof(float)), 0) << "depth at " << p;
    ASSERT_EQ(std::memcmp(&a.distance[p], &b.distance[p], sizeof(float)), 0) << "distance at " << p;
    ASSERT_EQ(a.assign[p], b.assign[p]) << p;
    ASSERT_EQ(a.source[p], b.source[p]) << p;
  }
}

} // namespace

TEST(Lidarmap, OnAxisPoint) {
  const CameraIntrinsics intr;
  const auto hits = project_points({{0, 0, 5}}, intr);
  ASSERT_EQ(hits.hits.size(), 1u);
  EXPECT_EQ(hits.hits[0].pixel, 48 * intr.width + 64);
  EXPECT_FLOAT_EQ(hits.hits[0].depth, 5);
  EXPECT_FLOAT_EQ(intr.project_u({1, 0, 10}), 76);
}

TEST(Lidarmap, ZBufferKeepsNearest) {
  const CameraIntrinsics intr;
  const auto hits = project_points({{0, 0, 9}, {0, 0, 5}, {-1, 0, -3}}, intr);
  ASSERT_EQ(hits.hits.size(), 1u);
  EXPECT_FLOAT_EQ(hits.hits[0].depth, 5);
  EXPECT_EQ(hits.hits[0].point, 1);
}

TEST(Lidarmap, SingleHitFillsEverything) {
  const CameraIntrinsics intr = small_intr(10, 12);
  const auto maps = densify(project_points({{0.1f, 0.1f, 4}}, intr), 10, 12);
  const int src = maps.source[0];
  float prev = -1;
  for (std::size_t p = 0; p < maps.depth.size(); ++p) {
    EXPECT_FLOAT_EQ(maps.depth[p], 4);
    EXPECT_EQ(maps.source[p], src);
  }
  // along the row of the hit, distance grows with |column offset|
  const int r = src / 12, c0 = src % 12;
  for (int c = c0 + 1; c < 12; ++c) {
    const float d = maps.distance[static_cast<std::size_t>(r) * 12 + c];
    EXPECT_GT(d, prev);
    prev = d;
  }
}

TEST(Lidarmap, FullyOccupiedGridSelfAssigns) {
  const CameraIntrinsics intr = small_intr(6, 7);
  PointCloud cloud;
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 7; ++c) {
      const float z = 3 + 0.1f * (r * 7 + c);
      cloud.push_back({(c + 0.3f - intr.cx) * z / intr.fx, (r + 0.6f - intr.cy) * z / intr.fy, z});
    }
  const auto hits = project_points(cloud, intr);
  ASSERT_EQ(hits.hits.size(), 42u);
  const auto maps = densify(hits, 6, 7);
  for (std::size_t p = 0; p < 42; ++p) {
    EXPECT_EQ(maps.source[p], static_cast<int>(p));
    EXPECT_FLOAT_EQ(maps.depth[p], cloud[p].z);
    EXPECT_LE(maps.distance[p], 1.0f);
  }
}

TEST(Lidarmap, MatchesBruteForceOnSmallGrid) {
  const CameraIntrinsics intr = small_intr(16, 16);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const PointCloud cloud = random_cloud(rng, 20, 3);
    expect_maps_identical(densify(project_points(cloud, intr), 16, 16), oracle::brute_depth_maps(cloud, intr));
  }
}

TEST(Lidarmap, MatchesBruteForceOnGeneratedScenes) {
  const CameraIntrinsics intr;
  for (int i = 0; i < 3; ++i) {
    const Scene s = generate_scene(SceneSpec{}, intr, split_mix(21, i));
    expect_maps_identical(densify(project_points(s.cloud, intr), intr.height, intr.width),
                          oracle::brute_depth_maps(s.cloud, intr));
  }
}

TEST(Lidarmap, EmptyCloudGivesEmptyMaps) {
  const auto maps = densify(project_points({}, small_intr(4, 4)), 4, 4);
  for (std::size_t p = 0; p < 16; ++p) {
    EXPECT_EQ(maps.assign[p], -1);
    EXPECT_EQ(maps.depth[p], 0);
  }
  EXPECT_THROW(densify(project_points({}, small_intr(4, 4)), 5, 4), ConfigError);
}

TEST(Lidarmap, Normalization) {
  DepthMaps m;
  m.height = 2;
  m.width = 3;
  m.depth = {7, 7, 7, 7, 7, 7};
  m.distance = {0, 1, 2, 3, 4, 5};
  m.assign = m.source = std::vector<int>(6, 0);
  const Tensor a = normalize_depth(m, {7.0, 2.0});
  for (int p = 0; p < 6; ++p)
    EXPECT_EQ(a[p], 0.0f);
  const Tensor b = normalize_depth(m, {0.0, 1.0});
  for (int p = 0; p < 6; ++p)
    EXPECT_EQ(b[p], 7.0f);
  EXPECT_THROW(normalize_depth(m, {0.0, 0.0}), ConfigError);
}

TEST(Lidarmap, OppositeCornerDistanceIsOne) {
  const CameraIntrinsics intr = small_intr(9, 13);
  // lands exactly on the centre of pixel (0,0)
  const float z = 5;
  const Vec3 p{(0.5f - intr.cx) * z / intr.fx, (0.5f - intr.cy) * z / intr.fy, z};
  DepthMaps maps;
  const Tensor t = lidar_input({p}, intr, {0.0, 1.0}, &maps);
  EXPECT_EQ(maps.source[0], 0);
  EXPECT_FLOAT_EQ(t[9 * 13 + 9 * 13 - 1], 1.0f);
}

TEST(Lidarmap, DepthGradientCountsAssignedPixels) {
  const CameraIntrinsics intr = small_intr(5, 5);
  const PointCloud cloud{{0, 0, 4}};
  const auto maps = densify(project_points(cloud, intr), 5, 5);
  Tensor g({2, 5, 5});
  for (int p = 0; p < 25; ++p)
    g[p] = 0.5f;
  const auto grad = maps_backward(g, maps, cloud, intr);
  EXPECT_FLOAT_EQ(grad[0].z, 25 * 0.5f);
  EXPECT_EQ(grad[0].x, 0);
  EXPECT_EQ(grad[0].y, 0);
}

TEST(Lidarmap, DistanceGradientVanishesAtDirectHit) {
  const CameraIntrinsics intr = small_intr(5, 5);
  const PointCloud cloud{{0.05f, -0.02f, 4}};
  const auto maps = densify(project_points(cloud, intr), 5, 5);
  const int hit = maps.source[0];
  Tensor g({2, 5, 5});
  g[25 + hit] = 3.0f;
  const auto grad = maps_backward(g, maps, cloud, intr);
  EXPECT_EQ(grad[0].x, 0);
  EXPECT_EQ(grad[0].y, 0);
  EXPECT_EQ(grad[0].z, 0);
}

TEST(Lidarmap, NormalizeBackwardIsChainRule) {
  Tensor g({2, 2, 2}, 1.0f);
  const Tensor r = normalize_depth_backward(g, {3.0, 4.0});
  EXPECT_FLOAT_EQ(r[0], 0.25f);
  EXPECT_FLOAT_EQ(r[4], 1.0f / max_pixel_distance(2, 2));
}

TEST(LidarmapGrad, FrozenAssignmentFiniteDifferences) {
  const CameraIntrinsics intr = small_intr(16, 16);
  std::mt19937_64 rng(8);
  oracle::GradCheck total;
  for (int trial = 0; trial < 5; ++trial) {
    const PointCloud cloud = random_cloud(rng, 20, 3);
    const auto maps = densify(project_points(cloud, intr), 16, 16);
    Tensor g({2, 16, 16});
    std::uniform_real_distribution<float> d(-1, 1);
    for (auto &v : g.data())
      v = d(rng);
    const auto grad = maps_backward(g, maps, cloud, intr);
    oracle::Vec xyz;
    std::vector<float> flat;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      xyz.insert(xyz.end(), {cloud[i].x, cloud[i].y, cloud[i].z});
      flat.insert(flat.end(), {grad[i].x, grad[i].y, grad[i].z});
    }
    const auto fd = oracle::fd_gradient(
        [&](const oracle::Vec &v) { return oracle::frozen_maps_objective(g, maps, v, intr); }, xyz);
    oracle::merge(total, oracle::compare(fd, flat));
  }
  EXPECT_TRUE(total.ok()) << total.failures << " of " << total.count << ", max rel " << total.max_rel;
}

TEST(Lidarmap, Deterministic) {
  const CameraIntrinsics intr;
  const Scene s = generate_scene(SceneSpec{}, intr, 17);
  expect_maps_identical(densify(project_points(s.cloud, intr), 96, 128), densify(project_points(s.cloud, intr), 96, 128));
}
