#include <gtest/gtest.h>

#include <cmath>

#include "fuselab/detector.hpp"
#include "fuselab/errors.hpp"
#include "fuselab/evalkit.hpp"
#include "fuselab/rng.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace fuselab;

namespace {

// Raw prediction that decodes exactly to the targets.
Tensor perfect_prediction(const Targets &t, float obj_logit = 20) {
  const std::size_t cells = static_cast<std::size_t>(t.grid_h) * t.grid_w;
  Tensor p({DetectorConfig::kHeadChannels, t.grid_h, t.grid_w});
  for (std::size_t c = 0; c < cells; ++c) {
    const bool pos = t.objectness[c] > 0.5f;
    p[c] = pos ? obj_logit : -obj_logit;
    if (!pos)
      continue;
    p[(1 + t.labels[c]) * cells + c] = 20;
    for (int k = 0; k < 2; ++k) {
      const float v = t.box[k * cells + c];
      p[(4 + k) * cells + c] = std::log(v / (1 - v));
    }
    p[6 * cells + c] = t.box[2 * cells + c];
    p[7 * cells + c] = t.box[3 * cells + c];
  }
  return p;
}

LossTerms loss_of(const Tensor &pred, const Targets &t, Tape &tape) { return detector_loss(tape.constant(pred), t); }

} // namespace

TEST(Detector, ShapesPerMode) {
  for (auto mode : {FusionMode::Rgb, FusionMode::Depth, FusionMode::Early, FusionMode::Late}) {
    Model m{DetectorConfig{}, {}};
    m.config.mode = mode;
    m.params = init_params(m.config, 1);
    Tensor rgb({3, 96, 128}, 0.5f), lidar({2, 96, 128});
    const Tensor p = predict(m, uses_rgb(mode) ? &rgb : nullptr, uses_lidar(mode) ? &lidar : nullptr);
    EXPECT_EQ(p.shape(), (std::vector<int>{8, 12, 16})) << fusion_name(mode);
  }
}

TEST(Detector, ParameterCounts) {
  DetectorConfig early;
  const std::size_t early_n = init_params(early, 0).count();
  const std::size_t conv = [](int ci, int co) { return ci * co * 9 + co; }(5, 16);
  EXPECT_EQ(early_n, conv + (16 * 32 * 9 + 32) + (32 * 64 * 9 + 64) + (64 * 64 * 9 + 64) + (64 * 8 + 8));
  DetectorConfig late;
  late.mode = FusionMode::Late;
  const std::size_t route_tail = (16 * 32 * 9 + 32) + (32 * 32 * 9 + 32);
  const std::size_t late_n = (3 * 16 * 9 + 16) + route_tail + (2 * 16 * 9 + 16) + route_tail + (64 * 64 * 9 + 64) +
                             (64 * 8 + 8);
  EXPECT_EQ(init_params(late, 0).count(), late_n);
  EXPECT_EQ(late_n - early_n, 65976u - 61320u);
}

TEST(Detector, ZeroParamsGiveHalfObjectness) {
  Model m;
  m.params = init_params(m.config, 1);
  for (const auto &n : m.params.names())
    m.params.value(n).fill(0);
  Tensor rgb({3, 96, 128}, 0.3f), lidar({2, 96, 128}, 0.1f);
  const Tensor p = predict(m, &rgb, &lidar);
  for (int c = 0; c < 12 * 16; ++c)
    EXPECT_EQ(p[c], 0.0f);
  const auto dets = decode(p, m.config, 0.01f, 0.5f);
  ASSERT_FALSE(dets.empty());
  EXPECT_NEAR(dets[0].score, 0.5f / 3, 1e-6);
}

TEST(Detector, WrongInputsThrow) {
  Model m;
  m.params = init_params(m.config, 1);
  Tensor rgb({3, 96, 128});
  EXPECT_THROW(predict(m, &rgb, nullptr), ConfigError);
  Tensor bad({3, 32, 32}), lidar({2, 96, 128});
  EXPECT_THROW(predict(m, &bad, &lidar), ConfigError);
  DetectorConfig c;
  c.height = 100;
  EXPECT_THROW(c.validate(), ConfigError);
  DetectorConfig late;
  late.mode = FusionMode::Late;
  EXPECT_THROW(check_params(late, m.params), ConfigError);
}

TEST(Detector, TargetAtPrincipalPoint) {
  const DetectorConfig cfg;
  const Targets t = assign_targets({{{60, 44, 68, 52}, ObjectClass::Car}}, cfg);
  const std::size_t cells = 12 * 16, c = 6 * 16 + 8;
  EXPECT_EQ(t.positives, 1);
  EXPECT_EQ(t.objectness[c], 1.0f);
  EXPECT_FLOAT_EQ(t.box[c], 0.0f);
  EXPECT_FLOAT_EQ(t.box[cells + c], 0.0f);
}

TEST(Detector, FullImageBoxHasZeroLogSize) {
  const DetectorConfig cfg;
  const Targets t = assign_targets({{{0, 0, 128, 96}, ObjectClass::Cyclist}}, cfg);
  const std::size_t cells = 12 * 16, c = 6 * 16 + 8;
  EXPECT_FLOAT_EQ(t.box[2 * cells + c], 0.0f);
  EXPECT_FLOAT_EQ(t.box[3 * cells + c], 0.0f);
  EXPECT_EQ(t.labels[c], 2);
}

TEST(Detector, SharedCellKeepsLargerBox) {
  const DetectorConfig cfg;
  const Targets t = assign_targets(
      {{{30, 30, 34, 38}, ObjectClass::Pedestrian}, {{20, 20, 44, 48}, ObjectClass::Car}}, cfg);
  const std::size_t c = 4 * 16 + 4;
  EXPECT_EQ(t.positives, 1);
  EXPECT_EQ(t.dropped, 1);
  EXPECT_EQ(t.labels[c], 0);
}

TEST(Detector, PerfectLogitsGiveTinyLoss) {
  const DetectorConfig cfg;
  const Targets t = assign_targets({{{10.3f, 12.1f, 40.2f, 33.7f}, ObjectClass::Car},
                                    {{70.5f, 40.2f, 75.9f, 60.3f}, ObjectClass::Pedestrian}},
                                   cfg);
  Tape tape;
  const LossTerms l = loss_of(perfect_prediction(t), t, tape);
  EXPECT_LT(l.total.value().item(), 1e-3f);
  EXPECT_GE(l.objectness.value().item(), 0);
  EXPECT_GE(l.cls.value().item(), 0);
  EXPECT_GE(l.regression.value().item(), 0);
}

TEST(Detector, EmptySceneObjectnessIsLn2) {
  const DetectorConfig cfg;
  const Targets t = assign_targets({}, cfg);
  Tape tape;
  const LossTerms l = loss_of(Tensor({8, 12, 16}), t, tape);
  EXPECT_NEAR(l.objectness.value().item(), std::log(2.0), 1e-6);
  EXPECT_EQ(l.cls.value().item(), 0);
  EXPECT_EQ(l.regression.value().item(), 0);
}

TEST(Detector, RegressionGradientMatchesFiniteDifferences) {
  const DetectorConfig cfg;
  const Targets t = assign_targets({{{10.3f, 12.1f, 40.2f, 33.7f}, ObjectClass::Car},
                                    {{70.5f, 40.2f, 75.9f, 60.3f}, ObjectClass::Cyclist}},
                                   cfg);
  std::mt19937_64 rng(4);
  const Tensor pv = testutil::random_tensor({8, 12, 16}, rng, -2, 2);
  Tape tape;
  Var p = tape.leaf(pv, true);
  tape.backward(regression_loss(p, t));
  const std::size_t cells = 192;
  auto f = [&](const oracle::Vec &x) {
    oracle::Vec box(x.begin() + 4 * cells, x.end());
    for (std::size_t i = 0; i < 2 * cells; ++i)
      box[i] = oracle::sigmoid(box[i]);
    return oracle::smooth_l1(box, oracle::to_double(t.box.data()), oracle::to_double(t.box_weights.data()));
  };
  const auto c = oracle::compare(oracle::fd_gradient(f, oracle::to_double(pv.data())), p.grad().data());
  EXPECT_TRUE(c.ok()) << c.max_rel;
}

TEST(Detector, DecodeEmptyWhenObjectnessLow) {
  Tensor p({8, 12, 16});
  for (int c = 0; c < 192; ++c)
    p[c] = -20;
  EXPECT_TRUE(decode(p, DetectorConfig{}).empty());
}

TEST(Detector, EncodeDecodeRoundTrip) {
  const DetectorConfig cfg;
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<GroundTruth> gt;
    std::uniform_real_distribution<float> u(0, 1);
    for (int k = 0; k < 5; ++k) {
      const float w = 4 + 40 * u(rng), h = 4 + 40 * u(rng);
      const float x = u(rng) * (128 - w), y = u(rng) * (96 - h);
      gt.push_back({{x, y, x + w, y + h}, static_cast<ObjectClass>(k % 3)});
    }
    const Targets t = assign_targets(gt, cfg);
    const auto dets = decode(perfect_prediction(t), cfg, 0.1f, 1.0f);
    ASSERT_EQ(dets.size(), gt.size() - static_cast<std::size_t>(t.dropped));
    std::size_t found = 0;
    for (const auto &g : gt)
      for (const auto &d : dets)
        if (d.cls == g.cls && std::fabs(d.box.x_min - g.box.x_min) < 1e-3f &&
            std::fabs(d.box.y_min - g.box.y_min) < 1e-3f && std::fabs(d.box.x_max - g.box.x_max) < 1e-3f &&
            std::fabs(d.box.y_max - g.box.y_max) < 1e-3f) {
          ++found;
          break;
        }
    EXPECT_EQ(found, dets.size());
  }
}

TEST(Detector, NmsKeepsHigherScore) {
  const DetectorConfig cfg;
  // two cells predicting the same box, objectness 0.9 vs 0.8
  Tensor p({8, 12, 16});
  const std::size_t cells = 192;
  for (std::size_t c = 0; c < cells; ++c)
    p[c] = -20;
  const std::size_t a = 2 * 16 + 3, b = 2 * 16 + 4;
  p[a] = std::log(0.9f / 0.1f);
  p[b] = std::log(0.8f / 0.2f);
  for (auto c : {a, b})
    p[cells + c] = 30;
  auto set_box = [&](std::size_t c, float cx, float cy) {
    const float gx = static_cast<float>(c % 16), gy = static_cast<float>(c / 16);
    const float ox = cx / 8 - gx, oy = cy / 8 - gy;
    p[4 * cells + c] = std::log(ox / (1 - ox));
    p[5 * cells + c] = std::log(oy / (1 - oy));
    p[6 * cells + c] = std::log(16.0f / 128);
    p[7 * cells + c] = std::log(16.0f / 96);
  };
  set_box(a, 31.9f, 20);
  set_box(b, 32.1f, 20);
  const auto dets = decode(p, cfg, 0.1f, 0.5f);
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_NEAR(dets[0].score, 0.9f, 1e-5);
}
