#include <gtest/gtest.h>

#include <atomic>

#include "fuselab/errors.hpp"
#include "fuselab/evaluate.hpp"
#include "fuselab/rng.hpp"
#include "test_util.hpp"

using namespace fuselab;

namespace {

Dataset small_dataset(int n, std::uint64_t seed) {
  DatasetManifest m;
  m.split = "val";
  std::vector<Scene> scenes;
  for (int i = 0; i < n; ++i)
    scenes.push_back(generate_scene(SceneSpec{}, m.intrinsics, split_mix(seed, i)));
  const DepthStats stats = compute_depth_stats(scenes, m.intrinsics);
  return make_dataset(m, std::move(scenes), stats);
}

Model random_model(std::uint64_t seed) {
  Model m;
  m.params = init_params(m.config, seed);
  return m;
}

} // namespace

TEST(Evaluate, ParallelForCoversEveryIndexOnce) {
  std::vector<std::atomic<int>> hits(257);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i]++; });
  for (auto &h : hits)
    EXPECT_EQ(h.load(), 1);
}

TEST(Evaluate, ParallelForRethrowsLowestFailure) {
  try {
    parallel_for(50, 3, [](std::size_t i) {
      if (i == 17 || i == 31)
        throw IoError("index " + std::to_string(i));
    });
    FAIL();
  } catch (const IoError &e) {
    EXPECT_STREQ(e.what(), "index 17");
  }
}

TEST(Evaluate, UntrainedModelScoresNearZero) {
  const Dataset d = small_dataset(100, 1);
  EXPECT_LT(evaluate_map(random_model(2), d).ap.map, 0.05);
}

TEST(Evaluate, ZeroBudgetEqualsClean) {
  const Dataset d = small_dataset(6, 2);
  const Model m = random_model(3);
  EvalOptions opt;
  opt.score_thresh = 0.01f;
  const auto clean = evaluate_map(m, d, {}, opt);
  for (auto f : {AttackFamily::FullImage, AttackFamily::FullLidar, AttackFamily::CarImage}) {
    const auto zero = evaluate_map(m, d, PerturbationSource::white_box(family_spec(f, 0, 5)), opt);
    EXPECT_EQ(zero.ap.map, clean.ap.map);
  }
  const auto curve = robustness_curve(m, d, AttackFamily::FullImage, {0}, 7, opt);
  ASSERT_EQ(curve.points.size(), 1u);
  EXPECT_EQ(curve.points[0].ap.map, clean.ap.map);
  EXPECT_THROW(robustness_curve(m, d, AttackFamily::FullImage, {1, 2}, 7, opt), ConfigError);
}

TEST(Evaluate, JobsDoNotChangeResults) {
  const Dataset d = small_dataset(5, 3);
  const Model m = random_model(4);
  EvalOptions one, many;
  one.jobs = 1;
  many.jobs = 4;
  one.score_thresh = many.score_thresh = 0.01f;
  const auto spec = PerturbationSource::white_box(family_spec(AttackFamily::FullLidar, 0.3f, 9));
  const auto a = evaluate_map(m, d, spec, one), b = evaluate_map(m, d, spec, many);
  EXPECT_EQ(a.ap.map, b.ap.map);
  ASSERT_EQ(a.detections.size(), b.detections.size());
  for (std::size_t i = 0; i < a.detections.size(); ++i)
    ASSERT_EQ(a.detections[i].size(), b.detections[i].size());
}

TEST(Evaluate, StoredPerturbationsReproduceWhiteBox) {
  const Dataset d = small_dataset(3, 4);
  const Model m = random_model(5);
  const AttackSpec spec = family_spec(AttackFamily::FullImage, 2, 11);
  const auto dir = testutil::temp_dir("stored");
  write_perturbations(m, d, spec, dir, 1);
  EvalOptions opt;
  opt.score_thresh = 0.01f;
  const auto stored = evaluate_map(m, d, PerturbationSource::stored(dir), opt);
  const auto white = evaluate_map(m, d, PerturbationSource::white_box(spec), opt);
  EXPECT_EQ(stored.ap.map, white.ap.map);
  std::filesystem::remove(dir / "pert_1.bin");
  EXPECT_THROW(evaluate_map(m, d, PerturbationSource::stored(dir), opt), IoError);
  std::filesystem::remove_all(dir);
}

TEST(Evaluate, CarFamilyOnCarlessDataIsFlat) {
  DatasetManifest man;
  SceneSpec spec;
  spec.counts = {{{0, 0}, {1, 2}, {0, 1}}};
  std::vector<Scene> scenes;
  for (int i = 0; i < 3; ++i)
    scenes.push_back(generate_scene(spec, man.intrinsics, split_mix(8, i)));
  const DepthStats stats = compute_depth_stats(scenes, man.intrinsics);
  const Dataset d = make_dataset(man, std::move(scenes), stats);
  EvalOptions opt;
  opt.score_thresh = 0.01f;
  const auto curve = robustness_curve(random_model(6), d, AttackFamily::CarLidar, default_budgets(AttackFamily::CarLidar),
                                      1, opt);
  for (const auto &p : curve.points)
    EXPECT_EQ(p.ap.map, curve.points[0].ap.map);
}

TEST(Evaluate, CurveCsvFormat) {
  RobustnessCurve c;
  CurvePoint p;
  p.budget = 0.5f;
  p.ap.map = 0.25;
  p.ap.ap[0] = 0.5;
  p.ap.ap[2] = 0.0;
  c.points.push_back(p);
  EXPECT_EQ(curve_csv(c), "budget,map,ap_car,ap_pedestrian,ap_cyclist\n0.5,0.25,0.5,,0\n");
}

TEST(Evaluate, FamilyNamesAndBudgets) {
  for (auto f : {AttackFamily::FullImage, AttackFamily::CarImage, AttackFamily::FullLidar, AttackFamily::CarLidar})
    EXPECT_EQ(family_from_name(family_name(f)), f);
  EXPECT_THROW(family_from_name("everything"), ConfigError);
  EXPECT_EQ(default_budgets(AttackFamily::FullImage), (std::vector<float>{0, 0.5f, 1, 2, 4}));
  EXPECT_EQ(default_budgets(AttackFamily::CarLidar), (std::vector<float>{0, 0.1f, 0.2f, 0.3f, 0.5f}));
  const AttackSpec s = family_spec(AttackFamily::CarLidar, 0.2f, 1);
  EXPECT_TRUE(s.lidar);
  EXPECT_FALSE(s.image);
  EXPECT_EQ(s.mask, MaskMode::CarBoxes);
  EXPECT_FLOAT_EQ(s.lidar_step(), 0.05f);
  EXPECT_EQ(s.steps, 10);
}
