#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fuselab/attacks.hpp"
#include "fuselab/errors.hpp"
#include "fuselab/rng.hpp"
#include "fuselab/scenegen.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace fuselab;

namespace {

CameraIntrinsics tiny_intr() {
  CameraIntrinsics i;
  i.width = i.height = 16;
  i.fx = i.fy = 20;
  i.cx = i.cy = 8;
  return i;
}

Scene tiny_scene(std::mt19937_64 &rng, ObjectClass cls) {
  Scene s;
  s.rgb = testutil::random_tensor({3, 16, 16}, rng, 20, 200);
  std::uniform_real_distribution<float> xy(-2, 2), z(3, 8);
  for (int i = 0; i < 40; ++i)
    s.cloud.push_back({xy(rng), xy(rng), z(rng)});
  s.gt.push_back({{3.2f, 4.1f, 11.7f, 12.6f}, cls});
  return s;
}

// Rgb detector whose regression loss is linear in the image: every layer
// carries one positive-biased channel (so leaky stays in its identity part),
// and the tw head reads it with the smooth-L1 in its linear branch.
Model linear_surrogate(std::mt19937_64 &rng) {
  Model m;
  m.config.mode = FusionMode::Rgb;
  m.config.height = m.config.width = 16;
  m.params = init_params(m.config, 0);
  for (const auto &n : m.params.names())
    m.params.value(n).fill(0);
  std::uniform_real_distribution<float> w(-0.05f, 0.05f);
  for (int l = 1; l <= 4; ++l) {
    const std::string name = "backbone.conv" + std::to_string(l);
    Tensor &wt = m.params.value(name + ".weight");
    const int cin = wt.dim(1);
    const int ci_used = l == 1 ? 3 : 1;
    for (int ci = 0; ci < ci_used; ++ci)
      for (int k = 0; k < 9; ++k)
        wt[static_cast<std::size_t>(ci) * 9 + k] = w(rng);  // output channel 0
    (void)cin;
    m.params.value(name + ".bias")[0] = 10;
  }
  Tensor &head = m.params.value("head.weight");  // 8×64×1×1
  head[6 * 64 + 0] = 1;
  return m;
}

// tw logit of the positive cell as a function of the [0,255] image.
double surrogate_tw(const Model &m, const oracle::Vec &rgb255, std::size_t cell) {
  oracle::Vec x = rgb255;
  for (auto &v : x)
    v /= 255.0;
  int cin = 3, h = 16, w = 16;
  const int strides[] = {1, 2, 2, 2};
  for (int l = 1; l <= 4; ++l) {
    const std::string name = "backbone.conv" + std::to_string(l);
    const Tensor &wt = m.params.value(name + ".weight");
    int ho, wo;
    x = oracle::conv2d(x, cin, h, w, oracle::to_double(wt.data()),
                       oracle::to_double(m.params.value(name + ".bias").data()), wt.dim(0), 3, strides[l - 1], ho, wo);
    for (auto &v : x)
      v = oracle::leaky(v);
    cin = wt.dim(0);
    h = ho;
    w = wo;
  }
  return x[cell];  // channel 0 feeds tw with weight 1
}

DepthStats unit_stats() { return {5.0, 2.0}; }

std::size_t positive_cell(const Scene &s, const DetectorConfig &cfg) {
  const Targets t = assign_targets(s.gt, cfg);
  for (std::size_t c = 0; c < t.objectness.numel(); ++c)
    if (t.objectness[c] > 0.5f)
      return c;
  return 0;
}

} // namespace

TEST(Attacks, FullMaskCoversEverything) {
  std::mt19937_64 rng(1);
  const Scene s = tiny_scene(rng, ObjectClass::Car);
  const MaskSet m = build_masks(s, tiny_intr(), MaskMode::Full);
  EXPECT_EQ(std::count(m.image.begin(), m.image.end(), 1), 256);
  EXPECT_EQ(std::count(m.points.begin(), m.points.end(), 1), 40);
}

TEST(Attacks, CarMaskCountsBoxArea) {
  Scene s;
  s.rgb = Tensor({3, 96, 128});
  s.cloud = {{0, 0, 10}, {5, 0, 10}};
  s.gt = {{{54, 33, 74, 63}, ObjectClass::Car}, {{0, 0, 10, 10}, ObjectClass::Pedestrian}};
  const MaskSet m = build_masks(s, CameraIntrinsics{}, MaskMode::CarBoxes);
  EXPECT_EQ(std::count(m.image.begin(), m.image.end(), 1), 600);
  EXPECT_EQ(m.points[0], 1);
  EXPECT_EQ(m.points[1], 0);
  s.gt.erase(s.gt.begin());
  const MaskSet none = build_masks(s, CameraIntrinsics{}, MaskMode::CarBoxes);
  EXPECT_EQ(std::count(none.image.begin(), none.image.end(), 1), 0);
}

TEST(Attacks, SpecValidation) {
  AttackSpec a;
  EXPECT_THROW(a.validate(), ConfigError);
  a.image = true;
  a.eps_image = -1;
  EXPECT_THROW(a.validate(), ConfigError);
  a.eps_image = 2;
  a.steps = -1;
  EXPECT_THROW(a.validate(), ConfigError);
  EXPECT_EQ(mask_mode_from_name("car"), MaskMode::CarBoxes);
  EXPECT_THROW(mask_mode_from_name("boxes"), ConfigError);
}

TEST(Attacks, ZeroStepsGiveZeroPerturbation) {
  std::mt19937_64 rng(2);
  const Scene s = tiny_scene(rng, ObjectClass::Car);
  Model m = linear_surrogate(rng);
  AttackSpec spec;
  spec.image = true;
  spec.steps = 0;
  const Perturbation p = pgd_attack(m, s, spec, tiny_intr(), unit_stats());
  EXPECT_TRUE(p == Perturbation::zeros(tiny_intr(), s.cloud.size()));
}

TEST(Attacks, FgsmOnLinearSurrogateIsSignOfWeights) {
  std::mt19937_64 rng(3);
  const CameraIntrinsics intr = tiny_intr();
  for (MaskMode mode : {MaskMode::Full, MaskMode::CarBoxes}) {
    const Scene s = tiny_scene(rng, ObjectClass::Car);
    const Model m = linear_surrogate(rng);
    const std::size_t cell = positive_cell(s, m.config);
    // the loss is tw·(box weight) + const, so its gradient is the linear map w
    const oracle::Vec x0 = oracle::to_double(s.rgb.data());
    const double f0 = surrogate_tw(m, x0, cell);
    AttackSpec spec;
    spec.image = true;
    spec.eps_image = 2;
    spec.steps = 1;
    spec.step_image = 2;
    spec.mask = mode;
    const Perturbation p = pgd_attack(m, s, spec, intr, unit_stats());
    const MaskSet masks = build_masks(s, intr, mode);
    std::size_t nonzero = 0;
    for (std::size_t i = 0; i < x0.size(); ++i) {
      oracle::Vec x = x0;
      x[i] += 1.0;
      const double w = surrogate_tw(m, x, cell) - f0;
      const float expect = masks.image[i % 256] ? 2.0f * static_cast<float>((w > 0) - (w < 0)) : 0.0f;
      ASSERT_EQ(p.delta_image[i], expect) << "pixel " << i << " w " << w;
      nonzero += expect != 0;
    }
    EXPECT_GT(nonzero, 0u);
    for (const auto &d : p.delta_points)
      EXPECT_TRUE(d == Vec3{});
  }
}

TEST(Attacks, ApplyZeroIsIdentity) {
  std::mt19937_64 rng(4);
  const Scene s = tiny_scene(rng, ObjectClass::Car);
  const auto in = apply_perturbation(s, Perturbation::zeros(tiny_intr(), s.cloud.size()), tiny_intr(), unit_stats());
  EXPECT_TRUE(in.rgb == s.rgb);
  EXPECT_EQ(in.cloud, s.cloud);
  EXPECT_TRUE(in.lidar == lidar_input(s.cloud, tiny_intr(), unit_stats()));
}

TEST(Attacks, ApplyClipsAtWhite) {
  std::mt19937_64 rng(5);
  Scene s = tiny_scene(rng, ObjectClass::Car);
  s.rgb[7] = 255;
  Perturbation p = Perturbation::zeros(tiny_intr(), s.cloud.size());
  p.delta_image.fill(2);
  const auto in = apply_perturbation(s, p, tiny_intr(), unit_stats());
  EXPECT_EQ(in.rgb[7], 255.0f);
  EXPECT_EQ(in.rgb[8], std::min(255.0f, s.rgb[8] + 2));
}

TEST(Attacks, ApplyRegeneratesMaps) {
  const CameraIntrinsics intr = tiny_intr();
  Scene s;
  s.rgb = Tensor({3, 16, 16});
  s.cloud = {{0.1f, 0.1f, 4}, {-1.5f, -1.5f, 5}};
  Perturbation p = Perturbation::zeros(intr, 2);
  p.delta_points[0] = {1.2f, 0.6f, 0};  // moves several pixels right and down
  const auto in = apply_perturbation(s, p, intr, unit_stats());
  const auto ref = oracle::brute_depth_maps(in.cloud, intr);
  EXPECT_EQ(in.maps.assign, ref.assign);
  EXPECT_EQ(in.maps.source, ref.source);
  EXPECT_EQ(in.maps.depth, ref.depth);
  const auto before = densify(project_points(s.cloud, intr), 16, 16);
  EXPECT_NE(before.source, in.maps.source);
}

TEST(Attacks, ShapeMismatchThrows) {
  std::mt19937_64 rng(6);
  const Scene s = tiny_scene(rng, ObjectClass::Car);
  EXPECT_THROW(apply_perturbation(s, Perturbation::zeros(tiny_intr(), 3), tiny_intr(), unit_stats()), ConfigError);
  const Model m = linear_surrogate(rng);
  AttackSpec spec;
  spec.image = true;
  EXPECT_THROW(pgd_attack(m, s, spec, CameraIntrinsics{}, unit_stats()), ConfigError);
  Model big;
  big.params = init_params(big.config, 0);
  EXPECT_THROW(transfer_attack(m, big, s, spec, tiny_intr(), unit_stats()), ConfigError);
}

TEST(Attacks, FeasibleAtEveryIterate) {
  const CameraIntrinsics intr;
  Model m;
  m.params = init_params(m.config, 31);
  const DepthStats stats{15.0, 8.0};
  std::mt19937_64 rng(77);
  std::size_t violations = 0, iterates = 0;
  for (int run = 0; run < 12; ++run) {
    const Scene s = generate_scene(SceneSpec{}, intr, split_mix(9, run));
    AttackSpec spec;
    spec.image = run % 3 != 1;
    spec.lidar = run % 3 != 0;
    spec.mask = run % 2 ? MaskMode::CarBoxes : MaskMode::Full;
    spec.rand_init = run % 4 < 2;
    spec.steps = 3;
    spec.seed = rng();
    const MaskSet masks = build_masks(s, intr, spec.mask);
    pgd_attack(m, s, spec, intr, stats, [&](int, const Perturbation &p, double) {
      ++iterates;
      violations += feasibility_violations(p, s, spec, masks).size();
    });
  }
  EXPECT_EQ(iterates, 12u * 4u);
  EXPECT_EQ(violations, 0u);
}

TEST(Attacks, FeasibilityDetectsViolations) {
  std::mt19937_64 rng(8);
  const Scene s = tiny_scene(rng, ObjectClass::Car);
  AttackSpec spec;
  spec.image = true;
  const MaskSet car = build_masks(s, tiny_intr(), MaskMode::CarBoxes);
  Perturbation p = Perturbation::zeros(tiny_intr(), s.cloud.size());
  EXPECT_TRUE(feasibility_violations(p, s, spec, car).empty());
  p.delta_image[0] = 1;  // pixel (0,0) is outside the car box
  EXPECT_EQ(feasibility_violations(p, s, spec, car).size(), 1u);
  p.delta_image[0] = 0;
  p.delta_points[0].x = 0.1f;  // lidar not in the attacked set
  EXPECT_EQ(feasibility_violations(p, s, spec, car).size(), 1u);
  p.delta_points[0].x = 0;
  p.delta_image[3 * 16 + 5 + 5 * 16] = 2.5f;  // inside the box, beyond ε
  EXPECT_EQ(feasibility_violations(p, s, spec, car).size(), 1u);
}

TEST(Attacks, CarPerturbationIsFeasibleForFull) {
  const CameraIntrinsics intr;
  Model m;
  m.params = init_params(m.config, 4);
  const Scene s = generate_scene(SceneSpec{}, intr, 12);
  AttackSpec spec;
  spec.image = spec.lidar = true;
  spec.mask = MaskMode::CarBoxes;
  spec.steps = 2;
  spec.rand_init = true;
  const Perturbation p = pgd_attack(m, s, spec, intr, {15.0, 8.0});
  AttackSpec full = spec;
  full.mask = MaskMode::Full;
  EXPECT_TRUE(feasibility_violations(p, s, full, build_masks(s, intr, MaskMode::Full)).empty());
}

TEST(Attacks, DeterministicGivenSeed) {
  const CameraIntrinsics intr;
  Model m;
  m.params = init_params(m.config, 4);
  const Scene s = generate_scene(SceneSpec{}, intr, 13);
  AttackSpec spec;
  spec.image = spec.lidar = true;
  spec.steps = 2;
  spec.rand_init = true;
  spec.seed = 99;
  EXPECT_TRUE(pgd_attack(m, s, spec, intr, {15.0, 8.0}) == pgd_attack(m, s, spec, intr, {15.0, 8.0}));
}

TEST(Attacks, LargerBudgetDoesNotLowerMeanLoss) {
  const CameraIntrinsics intr;
  Model m;
  m.params = init_params(m.config, 5);
  const DepthStats stats{15.0, 8.0};
  auto mean_loss = [&](float eps) {
    double total = 0;
    for (int i = 0; i < 6; ++i) {
      const Scene s = generate_scene(SceneSpec{}, intr, split_mix(3, i));
      AttackSpec spec;
      spec.image = true;
      spec.eps_image = eps;
      spec.steps = 10;
      double last = 0;
      pgd_attack(m, s, spec, intr, stats, [&](int, const Perturbation &p, double) {
        const auto in = apply_perturbation(s, p, intr, stats);
        Tape t;
        const auto bound = m.params.bind(t, false);
        last = regression_loss(detector_forward(t, bound, m.config, t.constant(in.rgb01), t.constant(in.lidar)),
                               assign_targets(s.gt, m.config))
                   .value()
                   .item();
      });
      total += last;
    }
    return total / 6;
  };
  EXPECT_GE(mean_loss(4), mean_loss(2) - 1e-3);
}

TEST(Attacks, TransferToSelfEqualsWhiteBox) {
  const CameraIntrinsics intr;
  Model m;
  m.params = init_params(m.config, 6);
  const DepthStats stats{15.0, 8.0};
  const Scene s = generate_scene(SceneSpec{}, intr, 14);
  AttackSpec spec;
  spec.image = true;
  spec.steps = 2;
  const auto via_transfer = transfer_attack(m, m, s, spec, intr, stats, 0.01f);
  const auto in = apply_perturbation(s, pgd_attack(m, s, spec, intr, stats), intr, stats);
  const auto direct = decode(predict(m, &in.rgb01, &in.lidar), m.config, 0.01f);
  ASSERT_EQ(via_transfer.size(), direct.size());
  for (std::size_t i = 0; i < direct.size(); ++i) {
    EXPECT_EQ(via_transfer[i].score, direct[i].score);
    EXPECT_EQ(via_transfer[i].box, direct[i].box);
  }
}

TEST(Attacks, PerturbationFileRoundTrip) {
  std::mt19937_64 rng(9);
  const CameraIntrinsics intr = tiny_intr();
  Perturbation p = Perturbation::zeros(intr, 5);
  p.delta_image = testutil::random_tensor({3, 16, 16}, rng);
  p.delta_points[2] = {0.1f, -0.2f, 0.3f};
  const auto dir = testutil::temp_dir("pert");
  save_perturbation(dir / "pert_0.bin", p);
  EXPECT_TRUE(load_perturbation(dir / "pert_0.bin", intr, 5) == p);
  EXPECT_THROW(load_perturbation(dir / "pert_0.bin", intr, 6), IoError);
  EXPECT_THROW(load_perturbation(dir / "missing.bin", intr, 5), IoError);
  std::filesystem::remove_all(dir);
}
