#include "fuselab/evaluate.hpp"

#include <atomic>
#include <cstdio>
#include <exception>
#include <mutex>
#include <thread>

#include "fuselab/errors.hpp"
#include "fuselab/rng.hpp"

namespace fuselab {

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)> &fn) {
  if (jobs <= 0)
    jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  const auto workers = static_cast<std::size_t>(jobs) < n ? static_cast<std::size_t>(jobs) : n;
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i)
      fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::size_t failed_at = n;
  std::exception_ptr failure;
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (i < failed_at) {
          failed_at = i;
          failure = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back(work);
  for (auto &t : pool)
    t.join();
  if (failure)
    std::rethrow_exception(failure);
}

AttackSpec scene_spec(const AttackSpec &spec, std::size_t scene) {
  AttackSpec s = spec;
  s.seed = split_mix(spec.seed, scene);
  return s;
}

EvalResult evaluate_map(const Model &model, const Dataset &data, const PerturbationSource &source,
                        const EvalOptions &options) {
  if (data.samples.empty())
    throw ConfigError("evaluate: dataset split is empty");
  const auto &intr = data.intrinsics();
  if (model.config.height != intr.height || model.config.width != intr.width)
    throw ConfigError("evaluate: model geometry does not match the dataset");
  using Kind = PerturbationSource::Kind;
  if (source.kind == Kind::Transfer && !source.source)
    throw ConfigError("evaluate: transfer source model missing");

  const bool r = uses_rgb(model.config.mode), l = uses_lidar(model.config.mode);
  EvalResult res;
  res.detections.resize(data.size());
  parallel_for(data.size(), options.jobs, [&](std::size_t i) {
    const Sample &s = data.samples[i];
    Tensor pred;
    if (source.kind == Kind::None) {
      pred = predict(model, r ? &s.rgb01 : nullptr, l ? &s.lidar : nullptr);
    } else {
      Perturbation p;
      if (source.kind == Kind::Stored)
        p = load_perturbation(source.dir / ("pert_" + std::to_string(i) + ".bin"), intr, s.scene.cloud.size());
      else
        p = pgd_attack(source.kind == Kind::Transfer ? *source.source : model, s.scene, scene_spec(source.spec, i),
                       intr, data.stats);
      const PerturbedInputs in = apply_perturbation(s.scene, p, intr, data.stats);
      pred = predict(model, r ? &in.rgb01 : nullptr, l ? &in.lidar : nullptr);
    }
    res.detections[i] = decode(pred, model.config, options.score_thresh, options.nms_iou);
  });

  std::vector<SceneDetection> dets;
  std::vector<SceneGroundTruth> gts;
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (const auto &d : res.detections[i])
      dets.push_back({static_cast<int>(i), d});
    for (const auto &g : data.samples[i].scene.gt)
      gts.push_back({static_cast<int>(i), g});
  }
  res.ap = mean_average_precision(dets, gts);
  return res;
}

void write_perturbations(const Model &model, const Dataset &data, const AttackSpec &spec,
                         const std::filesystem::path &dir, int jobs) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec)
    throw IoError("cannot create " + dir.string() + ": " + ec.message());
  parallel_for(data.size(), jobs, [&](std::size_t i) {
    const Sample &s = data.samples[i];
    save_perturbation(dir / ("pert_" + std::to_string(i) + ".bin"),
                      pgd_attack(model, s.scene, scene_spec(spec, i), data.intrinsics(), data.stats));
  });
}

std::string_view family_name(AttackFamily f) {
  switch (f) {
  case AttackFamily::FullImage: return "full-image";
  case AttackFamily::CarImage: return "car-image";
  case AttackFamily::FullLidar: return "full-lidar";
  case AttackFamily::CarLidar: return "car-lidar";
  }
  return "?";
}

AttackFamily family_from_name(std::string_view name) {
  for (auto f : {AttackFamily::FullImage, AttackFamily::CarImage, AttackFamily::FullLidar, AttackFamily::CarLidar})
    if (family_name(f) == name)
      return f;
  throw ConfigError("unknown attack family '" + std::string(name) +
                    "' (expected full-image, car-image, full-lidar or car-lidar)");
}

bool family_attacks_image(AttackFamily f) { return f == AttackFamily::FullImage || f == AttackFamily::CarImage; }

std::vector<float> default_budgets(AttackFamily f) {
  if (family_attacks_image(f))
    return {0.0f, 0.5f, 1.0f, 2.0f, 4.0f};
  return {0.0f, 0.1f, 0.2f, 0.3f, 0.5f};
}

AttackSpec family_spec(AttackFamily f, float budget, std::uint64_t seed) {
  AttackSpec s;
  s.image = family_attacks_image(f);
  s.lidar = !s.image;
  s.mask = (f == AttackFamily::CarImage || f == AttackFamily::CarLidar) ? MaskMode::CarBoxes : MaskMode::Full;
  if (s.image) {
    s.eps_image = budget;
    s.step_image = budget / 4;
  } else {
    s.gamma_lidar = budget;
    s.step_lidar = budget / 4;
  }
  s.steps = 10;
  s.rand_init = false;
  s.seed = seed;
  return s;
}

RobustnessCurve robustness_curve(const Model &model, const Dataset &data, AttackFamily family,
                                 const std::vector<float> &budgets, std::uint64_t seed, const EvalOptions &options) {
  if (std::find(budgets.begin(), budgets.end(), 0.0f) == budgets.end())
    throw ConfigError("curve: budgets must include 0");
  RobustnessCurve c;
  c.family = family;
  c.seed = seed;
  for (std::size_t b = 0; b < budgets.size(); ++b) {
    if (!(budgets[b] >= 0))
      throw ConfigError("curve: budgets must be >= 0");
    const AttackSpec spec = family_spec(family, budgets[b], split_mix(seed, b));
    c.points.push_back({budgets[b], evaluate_map(model, data, PerturbationSource::white_box(spec), options).ap});
  }
  return c;
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string curve_csv(const RobustnessCurve &curve) {
  std::string out = "budget,map,ap_car,ap_pedestrian,ap_cyclist\n";
  for (const auto &p : curve.points) {
    out += format_number(p.budget) + "," + format_number(p.ap.map);
    for (const auto &ap : p.ap.ap)
      out += "," + (ap ? format_number(*ap) : std::string());
    out += "\n";
  }
  return out;
}

} // namespace fuselab
