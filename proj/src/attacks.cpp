#include "fuselab/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "fuselab/binio.hpp"
#include "fuselab/errors.hpp"
#include "fuselab/rng.hpp"

namespace fuselab {

std::string_view mask_mode_name(MaskMode m) { return m == MaskMode::Full ? "full" : "car"; }

MaskMode mask_mode_from_name(std::string_view name) {
  if (name == "full")
    return MaskMode::Full;
  if (name == "car")
    return MaskMode::CarBoxes;
  throw ConfigError("unknown mask mode '" + std::string(name) + "' (expected full or car)");
}

void AttackSpec::validate() const {
  if (!image && !lidar)
    throw ConfigError("attack: channel set is empty");
  if (!(eps_image >= 0) || !std::isfinite(eps_image))
    throw ConfigError("attack: eps_image must be >= 0");
  if (!(gamma_lidar >= 0) || !std::isfinite(gamma_lidar))
    throw ConfigError("attack: gamma_lidar must be >= 0");
  if (steps < 0)
    throw ConfigError("attack: steps must be >= 0");
  if (!(image_step() >= 0) || !(lidar_step() >= 0))
    throw ConfigError("attack: step sizes must be >= 0");
}

MaskSet build_masks(const Scene &scene, const CameraIntrinsics &intr, MaskMode mode) {
  MaskSet m;
  m.height = intr.height;
  m.width = intr.width;
  const std::size_t HW = static_cast<std::size_t>(m.height) * m.width;
  if (mode == MaskMode::Full) {
    m.image.assign(HW, 1);
    m.points.assign(scene.cloud.size(), 1);
    return m;
  }
  m.image.assign(HW, 0);
  m.points.assign(scene.cloud.size(), 0);
  for (const auto &g : scene.gt) {
    if (g.cls != ObjectClass::Car)
      continue;
    for (int y = 0; y < m.height; ++y)
      for (int x = 0; x < m.width; ++x)
        if (g.box.contains(static_cast<float>(x) + 0.5f, static_cast<float>(y) + 0.5f))
          m.image[static_cast<std::size_t>(y) * m.width + x] = 1;
    for (std::size_t i = 0; i < scene.cloud.size(); ++i) {
      const Vec3 &p = scene.cloud[i];
      if (p.z > 0 && g.box.contains(intr.project_u(p), intr.project_v(p)))
        m.points[i] = 1;
    }
  }
  return m;
}

Perturbation Perturbation::zeros(const CameraIntrinsics &intr, std::size_t points) {
  return Perturbation{Tensor({3, intr.height, intr.width}), std::vector<Vec3>(points)};
}

std::vector<std::string> feasibility_violations(const Perturbation &pert, const Scene &scene, const AttackSpec &spec,
                                                const MaskSet &masks) {
  std::vector<std::string> out;
  const std::size_t HW = masks.image.size();
  if (pert.delta_image.shape() != scene.rgb.shape() || pert.delta_image.numel() != 3 * HW)
    out.push_back("image delta shape " + shape_str(pert.delta_image.shape()));
  if (pert.delta_points.size() != scene.cloud.size() || masks.points.size() != scene.cloud.size())
    out.push_back("point delta count " + std::to_string(pert.delta_points.size()));
  if (!out.empty())
    return out;
  std::size_t bound = 0, mask = 0, channel = 0, range = 0;
  for (std::size_t i = 0; i < pert.delta_image.numel(); ++i) {
    const float d = pert.delta_image[i];
    if (!spec.image) {
      channel += d != 0.0f;
      continue;
    }
    bound += !(std::fabs(d) <= spec.eps_image);
    mask += masks.image[i % HW] == 0 && d != 0.0f;
    const float v = std::clamp(scene.rgb[i] + d, 0.0f, 255.0f);
    range += !(v >= 0.0f && v <= 255.0f);
  }
  for (std::size_t i = 0; i < pert.delta_points.size(); ++i) {
    const Vec3 &d = pert.delta_points[i];
    const bool nonzero = d.x != 0.0f || d.y != 0.0f || d.z != 0.0f;
    if (!spec.lidar) {
      channel += nonzero;
      continue;
    }
    bound += !(std::fabs(d.x) <= spec.gamma_lidar && std::fabs(d.y) <= spec.gamma_lidar &&
               std::fabs(d.z) <= spec.gamma_lidar);
    mask += masks.points[i] == 0 && nonzero;
  }
  if (bound)
    out.push_back(std::to_string(bound) + " entries exceed the L-inf bound");
  if (mask)
    out.push_back(std::to_string(mask) + " nonzero entries outside the mask");
  if (channel)
    out.push_back(std::to_string(channel) + " nonzero entries on an unattacked channel");
  if (range)
    out.push_back(std::to_string(range) + " perturbed pixels outside [0,255]");
  return out;
}

Tensor rgb_to_unit(const Tensor &rgb) {
  Tensor out(rgb.shape());
  for (std::size_t i = 0; i < rgb.numel(); ++i)
    out[i] = rgb[i] / 255.0f;
  return out;
}

PerturbedInputs apply_perturbation(const Scene &scene, const Perturbation &pert, const CameraIntrinsics &intr,
                                   const DepthStats &stats) {
  if (pert.delta_image.shape() != scene.rgb.shape())
    throw ConfigError("apply_perturbation: image delta shape " + shape_str(pert.delta_image.shape()) +
                      " vs rgb " + shape_str(scene.rgb.shape()));
  if (pert.delta_points.size() != scene.cloud.size())
    throw ConfigError("apply_perturbation: " + std::to_string(pert.delta_points.size()) + " point deltas for " +
                      std::to_string(scene.cloud.size()) + " points");
  PerturbedInputs r;
  r.rgb = Tensor(scene.rgb.shape());
  for (std::size_t i = 0; i < scene.rgb.numel(); ++i)
    r.rgb[i] = std::clamp(scene.rgb[i] + pert.delta_image[i], 0.0f, 255.0f);
  r.rgb01 = rgb_to_unit(r.rgb);
  r.cloud = scene.cloud;
  for (std::size_t i = 0; i < r.cloud.size(); ++i) {
    r.cloud[i].x += pert.delta_points[i].x;
    r.cloud[i].y += pert.delta_points[i].y;
    r.cloud[i].z += pert.delta_points[i].z;
  }
  r.lidar = lidar_input(r.cloud, intr, stats, &r.maps);
  return r;
}

namespace {

float sign(float g) { return g > 0 ? 1.0f : (g < 0 ? -1.0f : 0.0f); }

void project_image(Perturbation &p, const AttackSpec &spec, const MaskSet &masks) {
  const std::size_t HW = masks.image.size();
  for (std::size_t i = 0; i < p.delta_image.numel(); ++i) {
    float &d = p.delta_image[i];
    d = masks.image[i % HW] ? std::clamp(d, -spec.eps_image, spec.eps_image) : 0.0f;
  }
}

void project_points(Perturbation &p, const AttackSpec &spec, const MaskSet &masks) {
  const float g = spec.gamma_lidar;
  for (std::size_t i = 0; i < p.delta_points.size(); ++i) {
    Vec3 &d = p.delta_points[i];
    if (!masks.points[i]) {
      d = Vec3{};
      continue;
    }
    d.x = std::clamp(d.x, -g, g);
    d.y = std::clamp(d.y, -g, g);
    d.z = std::clamp(d.z, -g, g);
  }
}

} // namespace

Perturbation pgd_attack(const Model &model, const Scene &scene, const AttackSpec &spec, const CameraIntrinsics &intr,
                        const DepthStats &stats, const AttackObserver &observer) {
  spec.validate();
  const std::vector<int> rgb_shape{3, intr.height, intr.width};
  if (spec.image && scene.rgb.shape() != rgb_shape)
    throw ConfigError("attack: image channel requested but the scene has rgb shape " +
                      shape_str(scene.rgb.shape()));
  if (model.config.height != intr.height || model.config.width != intr.width)
    throw ConfigError("attack: model geometry does not match the camera");

  const MaskSet masks = build_masks(scene, intr, spec.mask);
  Perturbation p = Perturbation::zeros(intr, scene.cloud.size());
  if (spec.rand_init) {
    Rng rng = named_stream(spec.seed, "attack.init");
    if (spec.image && spec.eps_image > 0)
      for (std::size_t i = 0; i < p.delta_image.numel(); ++i)
        p.delta_image[i] = uniform(rng, -spec.eps_image, spec.eps_image);
    if (spec.lidar && spec.gamma_lidar > 0)
      for (auto &d : p.delta_points)
        d = Vec3{uniform(rng, -spec.gamma_lidar, spec.gamma_lidar), uniform(rng, -spec.gamma_lidar, spec.gamma_lidar),
                 uniform(rng, -spec.gamma_lidar, spec.gamma_lidar)};
    if (spec.image)
      project_image(p, spec, masks);
    if (spec.lidar)
      project_points(p, spec, masks);
  }
  if (observer)
    observer(0, p, std::nan(""));

  const Targets targets = assign_targets(scene.gt, model.config);
  const bool feed_rgb = uses_rgb(model.config.mode), feed_lidar = uses_lidar(model.config.mode);
  const float step_img = spec.image_step(), step_pts = spec.lidar_step();
  for (int it = 1; it <= spec.steps; ++it) {
    PerturbedInputs in = apply_perturbation(scene, p, intr, stats);
    Tape tape;
    const auto params = model.params.bind(tape, false);
    std::optional<Var> rgb, lidar;
    if (feed_rgb)
      rgb = tape.leaf(in.rgb01, spec.image);
    if (feed_lidar)
      lidar = tape.leaf(in.lidar, spec.lidar);
    Var loss = regression_loss(detector_forward(tape, params, model.config, rgb, lidar), targets);
    tape.backward(loss);

    if (spec.image && feed_rgb) {
      const Tensor &g = rgb->grad();
      for (std::size_t i = 0; i < g.numel(); ++i) {
        const float v = scene.rgb[i] + p.delta_image[i];
        // clip(x+δ) passes gradient only where it is not saturated
        const float gi = (v >= 0.0f && v <= 255.0f) ? g[i] : 0.0f;
        p.delta_image[i] += step_img * sign(gi);
      }
      project_image(p, spec, masks);
    }
    if (spec.lidar && feed_lidar) {
      const Tensor gmaps = normalize_depth_backward(lidar->grad(), stats);
      const auto gpts = maps_backward(gmaps, in.maps, in.cloud, intr);
      for (std::size_t i = 0; i < gpts.size(); ++i) {
        p.delta_points[i].x += step_pts * sign(gpts[i].x);
        p.delta_points[i].y += step_pts * sign(gpts[i].y);
        p.delta_points[i].z += step_pts * sign(gpts[i].z);
      }
      project_points(p, spec, masks);
    }
    if (observer)
      observer(it, p, loss.value().item());
  }
  return p;
}

std::vector<Detection> transfer_attack(const Model &source, const Model &target, const Scene &scene,
                                       const AttackSpec &spec, const CameraIntrinsics &intr,
                                       const DepthStats &stats, float score_thresh, float nms_iou) {
  if (source.config.height != target.config.height || source.config.width != target.config.width ||
      source.config.stride != target.config.stride)
    throw ConfigError("transfer: source and target models have different input geometry");
  const Perturbation p = pgd_attack(source, scene, spec, intr, stats);
  const PerturbedInputs in = apply_perturbation(scene, p, intr, stats);
  const bool r = uses_rgb(target.config.mode), l = uses_lidar(target.config.mode);
  return decode(predict(target, r ? &in.rgb01 : nullptr, l ? &in.lidar : nullptr), target.config, score_thresh,
                nms_iou);
}

void save_perturbation(const std::filesystem::path &path, const Perturbation &pert) {
  binio::Writer w;
  w.put<std::uint64_t>(pert.delta_image.numel());
  w.put_floats(pert.delta_image.data());
  w.put<std::uint64_t>(3 * pert.delta_points.size());
  for (const auto &d : pert.delta_points) {
    w.put(d.x);
    w.put(d.y);
    w.put(d.z);
  }
  binio::write_file(path, w.bytes());
}

Perturbation load_perturbation(const std::filesystem::path &path, const CameraIntrinsics &intr,
                               std::size_t points) {
  const auto bytes = binio::read_file(path);
  binio::Reader r(bytes);
  Perturbation p = Perturbation::zeros(intr, points);
  const auto ni = r.get<std::uint64_t>();
  if (ni != p.delta_image.numel())
    throw IoError(path.string() + ": image block has " + std::to_string(ni) + " values, expected " +
                  std::to_string(p.delta_image.numel()));
  auto img = r.get_floats(ni);
  std::copy(img.begin(), img.end(), p.delta_image.data().begin());
  const auto np = r.get<std::uint64_t>();
  if (np != 3 * points)
    throw IoError(path.string() + ": point block has " + std::to_string(np) + " values, expected " +
                  std::to_string(3 * points));
  auto pts = r.get_floats(np);
  for (std::size_t i = 0; i < points; ++i)
    p.delta_points[i] = Vec3{pts[3 * i], pts[3 * i + 1], pts[3 * i + 2]};
  if (!r.done())
    throw IoError(path.string() + ": trailing bytes");
  return p;
}

} // namespace fuselab
