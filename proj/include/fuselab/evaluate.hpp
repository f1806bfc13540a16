#pragma once

// Dataset-level evaluation: mAP under an optional perturbation source, and
// robustness curves over attack budgets.

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "fuselab/attacks.hpp"
#include "fuselab/dataset.hpp"
#include "fuselab/evalkit.hpp"

namespace fuselab {

// Runs fn(0..n-1) on up to `jobs` threads (0 = hardware concurrency). The
// exception of the lowest failing index is rethrown.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)> &fn);

struct EvalOptions {
  float score_thresh = kDefaultScoreThresh;
  float nms_iou = kDefaultNmsIou;
  int jobs = 0;
};

struct PerturbationSource {
  enum class Kind { None, WhiteBox, Stored, Transfer };
  Kind kind = Kind::None;
  AttackSpec spec;                // WhiteBox, Transfer; scene i uses seed split_mix(spec.seed, i)
  const Model *source = nullptr;  // Transfer
  std::filesystem::path dir;      // Stored: pert_<i>.bin

  static PerturbationSource clean() { return {}; }
  static PerturbationSource white_box(const AttackSpec &spec) { return {Kind::WhiteBox, spec, nullptr, {}}; }
  static PerturbationSource stored(std::filesystem::path dir) { return {Kind::Stored, {}, nullptr, std::move(dir)}; }
  static PerturbationSource transfer(const Model &source, const AttackSpec &spec) {
    return {Kind::Transfer, spec, &source, {}};
  }
};

AttackSpec scene_spec(const AttackSpec &spec, std::size_t scene);

struct EvalResult {
  APResult ap;
  std::vector<std::vector<Detection>> detections;  // per scene
};

EvalResult evaluate_map(const Model &model, const Dataset &data, const PerturbationSource &source = {},
                        const EvalOptions &options = {});

// White-box perturbations of every scene, written as pert_<i>.bin into dir.
void write_perturbations(const Model &model, const Dataset &data, const AttackSpec &spec,
                         const std::filesystem::path &dir, int jobs = 0);

enum class AttackFamily { FullImage, CarImage, FullLidar, CarLidar };

std::string_view family_name(AttackFamily f);
AttackFamily family_from_name(std::string_view name);
bool family_attacks_image(AttackFamily f);
std::vector<float> default_budgets(AttackFamily f);
// ε (image) or γ (LiDAR) = budget, step budget/4, 10 steps, no random start.
AttackSpec family_spec(AttackFamily f, float budget, std::uint64_t seed);

struct CurvePoint {
  float budget = 0;
  APResult ap;
};

struct RobustnessCurve {
  AttackFamily family = AttackFamily::FullImage;
  std::uint64_t seed = 0;
  std::vector<CurvePoint> points;
};

RobustnessCurve robustness_curve(const Model &model, const Dataset &data, AttackFamily family,
                                 const std::vector<float> &budgets, std::uint64_t seed,
                                 const EvalOptions &options = {});

// budget,map,ap_car,ap_pedestrian,ap_cyclist; an absent class leaves its cell empty.
std::string curve_csv(const RobustnessCurve &curve);
std::string format_number(double v);

} // namespace fuselab
