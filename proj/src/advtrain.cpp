#include "fuselab/advtrain.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>

#include <nlohmann/json.hpp>

#include "fuselab/errors.hpp"
#include "fuselab/evaluate.hpp"
#include "fuselab/rng.hpp"

namespace fuselab {

void LrSchedule::validate() const {
  if (kind == Kind::Cosine) {
    if (!(start >= 0) || !(end >= 0) || !std::isfinite(start) || !std::isfinite(end))
      throw ConfigError("cosine schedule: start and end must be finite and >= 0");
  } else {
    if (!(max_lr >= 0) || !std::isfinite(max_lr))
      throw ConfigError("cyclic schedule: max_lr must be finite and >= 0");
    if (!(peak_fraction > 0 && peak_fraction < 1))
      throw ConfigError("cyclic schedule: peak_fraction must be in (0,1)");
  }
}

float lr_at(int step, int total_steps, const LrSchedule &s) {
  if (total_steps <= 0 || step < 0 || step >= total_steps)
    throw ConfigError("lr_at: step " + std::to_string(step) + " outside [0," + std::to_string(total_steps) + ")");
  const double t = step, T = total_steps;
  if (s.kind == LrSchedule::Kind::Cosine) {
    const double v = s.start * (1.0 + std::cos(std::numbers::pi * t / T)) / 2.0;
    return static_cast<float>(std::max<double>(s.end, v));
  }
  const double peak = s.peak_fraction * T;
  if (t <= peak)
    return static_cast<float>(s.max_lr * t / peak);
  return static_cast<float>(s.max_lr * (T - t) / (T - peak));
}

std::string_view at_variant_name(AtVariant v) {
  switch (v) {
  case AtVariant::None: return "none";
  case AtVariant::Image: return "at-image";
  case AtVariant::Car: return "at-car";
  case AtVariant::Lidar: return "at-lidar";
  case AtVariant::LidarCar: return "at-lidar-car";
  case AtVariant::Joint: return "at-joint";
  case AtVariant::JointCar: return "at-joint-car";
  }
  return "?";
}

AtVariant at_variant_from_name(std::string_view name) {
  for (auto v : {AtVariant::None, AtVariant::Image, AtVariant::Car, AtVariant::Lidar, AtVariant::LidarCar,
                 AtVariant::Joint, AtVariant::JointCar})
    if (at_variant_name(v) == name)
      return v;
  throw ConfigError("unknown AT variant '" + std::string(name) +
                    "' (expected none, at-image, at-car, at-lidar, at-lidar-car, at-joint, at-joint-car)");
}

namespace {

bool variant_image(AtVariant v) {
  return v == AtVariant::Image || v == AtVariant::Car || v == AtVariant::Joint || v == AtVariant::JointCar;
}
bool variant_lidar(AtVariant v) {
  return v == AtVariant::Lidar || v == AtVariant::LidarCar || v == AtVariant::Joint || v == AtVariant::JointCar;
}
bool variant_car(AtVariant v) { return v == AtVariant::Car || v == AtVariant::LidarCar || v == AtVariant::JointCar; }

} // namespace

LrSchedule TrainConfig::resolved_schedule() const {
  if (schedule)
    return *schedule;
  return LrSchedule::cyclic(kDefaultMaxLr, kDefaultPeakFraction);
}

void TrainConfig::validate(FusionMode mode) const {
  if (epochs < 1)
    throw ConfigError("train: epochs must be >= 1");
  if (batch_size < 1)
    throw ConfigError("train: batch_size must be >= 1");
  resolved_schedule().validate();
  if (!(eps_image >= 0) || !(gamma_lidar >= 0))
    throw ConfigError("train: eps_image and gamma_lidar must be >= 0");
  const auto vn = std::string(at_variant_name(variant));
  const auto mn = std::string(fusion_name(mode));
  if (variant_image(variant) && !uses_rgb(mode))
    throw ConfigError("AT variant " + vn + " perturbs the image, but a " + mn + " model has no image input");
  if (variant_lidar(variant) && !uses_lidar(mode))
    throw ConfigError("AT variant " + vn + " perturbs the LiDAR points, but a " + mn + " model has no LiDAR input");
}

AttackSpec at_attack_spec(const TrainConfig &config, std::uint64_t seed) {
  AttackSpec s;
  s.image = variant_image(config.variant);
  s.lidar = variant_lidar(config.variant);
  s.mask = variant_car(config.variant) ? MaskMode::CarBoxes : MaskMode::Full;
  s.eps_image = config.eps_image;
  s.gamma_lidar = config.gamma_lidar;
  s.step_image = config.eps_image;
  s.step_lidar = config.gamma_lidar;
  s.steps = 1;
  s.rand_init = true;
  s.seed = seed;
  return s;
}

PerturbedInputs at_inner(const Scene &scene, const Model &model, const TrainConfig &config,
                         const CameraIntrinsics &intr, const DepthStats &stats, std::uint64_t seed) {
  if (config.variant == AtVariant::None)
    throw ConfigError("at_inner: variant none has no inner maximization");
  const Perturbation p = pgd_attack(model, scene, at_attack_spec(config, seed), intr, stats);
  return apply_perturbation(scene, p, intr, stats);
}

Model train(const DetectorConfig &model_config, const Dataset &data, const TrainConfig &config,
            TrainReport &report, const Dataset *val, const EpochObserver &observer) {
  model_config.validate();
  config.validate(model_config.mode);
  if (data.samples.empty())
    throw ConfigError("train: training split is empty");
  const auto t0 = std::chrono::steady_clock::now();
  const LrSchedule schedule = config.resolved_schedule();
  Model model{model_config, init_params(model_config, config.seed)};
  const bool r = uses_rgb(model_config.mode), l = uses_lidar(model_config.mode);
  const std::size_t n = data.size();
  const auto B = static_cast<std::size_t>(config.batch_size);
  const int steps_per_epoch = static_cast<int>((n + B - 1) / B);
  const int total = steps_per_epoch * config.epochs;

  std::vector<Targets> targets;
  targets.reserve(n);
  report = TrainReport{};
  for (const auto &s : data.samples) {
    targets.push_back(assign_targets(s.scene.gt, model_config));
    report.dropped_objects += targets.back().dropped;
  }

  Rng shuffle_rng = named_stream(config.seed, "train.shuffle");
  const std::uint64_t at_root = split_mix(config.seed, fnv1a("train.at"));
  std::vector<std::size_t> order(n);
  int step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochStats es;
    es.epoch = epoch;
    for (std::size_t b0 = 0; b0 < n; b0 += B, ++step) {
      const std::size_t b1 = std::min(n, b0 + B);
      const float lr = lr_at(step, total, schedule);
      const float inv = 1.0f / static_cast<float>(b1 - b0);
      for (std::size_t j = b0; j < b1; ++j) {
        const std::size_t idx = order[j];
        const Sample &s = data.samples[idx];
        try {
          std::optional<PerturbedInputs> adv;
          if (config.variant != AtVariant::None)
            adv = at_inner(s.scene, model, config, data.intrinsics(), data.stats,
                           split_mix(at_root, static_cast<std::uint64_t>(step) * n + j));
          Tape tape;
          const auto params = model.params.bind(tape);
          std::optional<Var> rv, lv;
          if (r)
            rv = tape.constant(adv ? adv->rgb01 : s.rgb01);
          if (l)
            lv = tape.constant(adv ? adv->lidar : s.lidar);
          const LossTerms loss = detector_loss(detector_forward(tape, params, model_config, rv, lv), targets[idx]);
          tape.backward(loss.total);
          model.params.accumulate(params, inv);
          es.loss_total += loss.total.value().item();
          es.loss_obj += loss.objectness.value().item();
          es.loss_cls += loss.cls.value().item();
          es.loss_reg += loss.regression.value().item();
        } catch (const NumericError &e) {
          throw NumericError("non-finite value at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(step) + ", scene " + std::to_string(idx) + ": " + e.what());
        }
      }
      for (const auto &name : model.params.names())
        if (!model.params.grad(name).all_finite())
          throw NumericError("non-finite gradient for " + name + " at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(step));
      model.params.sgd_step(lr);
      report.lr_trace.push_back(lr);
      es.lr = lr;
    }
    const auto dn = static_cast<double>(n);
    es.loss_total /= dn;
    es.loss_obj /= dn;
    es.loss_cls /= dn;
    es.loss_reg /= dn;
    if (!std::isfinite(es.loss_total))
      throw NumericError("non-finite loss at epoch " + std::to_string(epoch));
    report.epochs.push_back(es);
    if (observer)
      observer(es, model);
  }
  report.steps = step;
  if (val)
    report.val_map = evaluate_map(model, *val).ap.map;
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return model;
}

std::string report_to_json(const TrainReport &report) {
  nlohmann::ordered_json j;
  auto &ep = j["epochs"] = nlohmann::json::array();
  for (const auto &e : report.epochs)
    ep.push_back({{"epoch", e.epoch},
                  {"loss_total", e.loss_total},
                  {"loss_obj", e.loss_obj},
                  {"loss_cls", e.loss_cls},
                  {"loss_reg", e.loss_reg},
                  {"lr", e.lr}});
  j["lr_trace"] = report.lr_trace;
  j["val_map"] = report.val_map ? nlohmann::json(*report.val_map) : nlohmann::json(nullptr);
  j["wall_seconds"] = report.wall_seconds;
  j["dropped_objects"] = report.dropped_objects;
  j["steps"] = report.steps;
  return j.dump(2) + "\n";
}

} // namespace fuselab
