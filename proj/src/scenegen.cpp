#include "fuselab/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "fuselab/binio.hpp"
#include "fuselab/errors.hpp"
#include "fuselab/lidarmap.hpp"
#include "fuselab/rng.hpp"

namespace fuselab {

using nlohmann::json;

std::string_view class_name(ObjectClass c) {
  switch (c) {
  case ObjectClass::Car: return "car";
  case ObjectClass::Pedestrian: return "pedestrian";
  case ObjectClass::Cyclist: return "cyclist";
  }
  return "?";
}

ObjectClass class_from_name(std::string_view name) {
  if (name == "car")
    return ObjectClass::Car;
  if (name == "pedestrian")
    return ObjectClass::Pedestrian;
  if (name == "cyclist")
    return ObjectClass::Cyclist;
  throw ConfigError("unknown object class \"" + std::string(name) + "\"");
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0 && fy > 0))
    throw ConfigError("intrinsics: focal lengths must be positive");
  if (width <= 0 || height <= 0)
    throw ConfigError("intrinsics: image size must be positive");
  if (!(cx >= 0 && cx < static_cast<float>(width) && cy >= 0 && cy < static_cast<float>(height)))
    throw ConfigError("intrinsics: principal point outside the image");
}

void SceneSpec::validate() const {
  for (const auto &r : counts)
    if (r.min < 0 || r.max < r.min)
      throw ConfigError("scene spec: object count range is empty or negative");
  if (!(x_min <= x_max))
    throw ConfigError("scene spec: empty lateral range");
  if (!(z_min > 0 && z_min <= z_max))
    throw ConfigError("scene spec: forward range must be non-empty and strictly positive");
  if (pixel_noise < 0 || point_noise < 0 || point_density < 0 || ground_points < 0 || brightness_jitter < 0 ||
      brightness_jitter >= 1)
    throw ConfigError("scene spec: noise and density parameters must be non-negative");
  if (!(dropout >= 0 && dropout < 1))
    throw ConfigError("scene spec: dropout must lie in [0,1)");
}

ClassDims class_dims(ObjectClass c) {
  switch (c) {
  case ObjectClass::Car: return {4.5f, 1.5f, 1.8f};
  case ObjectClass::Pedestrian: return {0.5f, 1.8f, 0.5f};
  case ObjectClass::Cyclist: return {1.8f, 1.7f, 0.6f};
  }
  return {1, 1, 1};
}

namespace {

struct Cuboid {
  ObjectClass cls;
  float xc, zc;
  float x0, x1, y0, y1, z0, z1;
  Box raw;      // unclipped projection
  Box clipped;  // gt box
  float shade;  // brightness jitter factor
};

using Quad = std::array<Vec3, 4>;

Cuboid make_cuboid(ObjectClass cls, float xc, float zc) {
  const auto d = class_dims(cls);
  Cuboid c{};
  c.cls = cls;
  c.xc = xc;
  c.zc = zc;
  c.x0 = xc - 0.5f * d.width;
  c.x1 = xc + 0.5f * d.width;
  c.y0 = kGroundY - d.height;
  c.y1 = kGroundY;
  c.z0 = zc - 0.5f * d.length;
  c.z1 = zc + 0.5f * d.length;
  return c;
}

Box project_cuboid(const Cuboid &c, const CameraIntrinsics &intr) {
  Box b{1e30f, 1e30f, -1e30f, -1e30f};
  for (float x : {c.x0, c.x1})
    for (float y : {c.y0, c.y1})
      for (float z : {c.z0, c.z1}) {
        const Vec3 p{x, y, z};
        const float u = intr.project_u(p), v = intr.project_v(p);
        b.x_min = std::min(b.x_min, u);
        b.x_max = std::max(b.x_max, u);
        b.y_min = std::min(b.y_min, v);
        b.y_max = std::max(b.y_max, v);
      }
  return b;
}

Box clip_box(const Box &b, const CameraIntrinsics &intr) {
  return Box{std::clamp(b.x_min, 0.0f, static_cast<float>(intr.width)),
             std::clamp(b.y_min, 0.0f, static_cast<float>(intr.height)),
             std::clamp(b.x_max, 0.0f, static_cast<float>(intr.width)),
             std::clamp(b.y_max, 0.0f, static_cast<float>(intr.height))};
}

float intersection(const Box &a, const Box &b) {
  const float w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const float h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  return (w > 0 && h > 0) ? w * h : 0.0f;
}

// Faces visible from the camera at the origin, with their shading factor.
std::vector<std::pair<Quad, float>> visible_faces(const Cuboid &c) {
  std::vector<std::pair<Quad, float>> faces;
  faces.push_back({Quad{Vec3{c.x0, c.y0, c.z0}, Vec3{c.x1, c.y0, c.z0}, Vec3{c.x1, c.y1, c.z0},
                        Vec3{c.x0, c.y1, c.z0}},
                   1.0f});
  if (c.x0 > 0)
    faces.push_back({Quad{Vec3{c.x0, c.y0, c.z0}, Vec3{c.x0, c.y0, c.z1}, Vec3{c.x0, c.y1, c.z1},
                          Vec3{c.x0, c.y1, c.z0}},
                     0.72f});
  if (c.x1 < 0)
    faces.push_back({Quad{Vec3{c.x1, c.y0, c.z0}, Vec3{c.x1, c.y0, c.z1}, Vec3{c.x1, c.y1, c.z1},
                          Vec3{c.x1, c.y1, c.z0}},
                     0.72f});
  if (c.y0 > 0)
    faces.push_back({Quad{Vec3{c.x0, c.y0, c.z0}, Vec3{c.x1, c.y0, c.z0}, Vec3{c.x1, c.y0, c.z1},
                          Vec3{c.x0, c.y0, c.z1}},
                     1.15f});
  return faces;
}

float quad_area(const Quad &q) {
  auto len = [](const Vec3 &a, const Vec3 &b) {
    return std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) + (a.z - b.z) * (a.z - b.z));
  };
  return len(q[0], q[1]) * len(q[1], q[2]);
}

std::array<float, 3> base_color(ObjectClass c) {
  switch (c) {
  case ObjectClass::Car: return {200, 55, 45};
  case ObjectClass::Pedestrian: return {60, 185, 75};
  case ObjectClass::Cyclist: return {55, 90, 215};
  }
  return {0, 0, 0};
}

void fill_quad(Tensor &rgb, const Quad &q, const CameraIntrinsics &intr, const std::array<float, 3> &color) {
  std::array<float, 4> us{}, vs{};
  for (int i = 0; i < 4; ++i) {
    us[i] = intr.project_u(q[i]);
    vs[i] = intr.project_v(q[i]);
  }
  const int H = intr.height, W = intr.width;
  const int c0 = std::max(0, static_cast<int>(std::floor(*std::min_element(us.begin(), us.end()))));
  const int c1 = std::min(W - 1, static_cast<int>(std::ceil(*std::max_element(us.begin(), us.end()))));
  const int r0 = std::max(0, static_cast<int>(std::floor(*std::min_element(vs.begin(), vs.end()))));
  const int r1 = std::min(H - 1, static_cast<int>(std::ceil(*std::max_element(vs.begin(), vs.end()))));
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) {
      const float px = static_cast<float>(c) + 0.5f, py = static_cast<float>(r) + 0.5f;
      bool pos = false, neg = false;
      for (int i = 0; i < 4; ++i) {
        const int j = (i + 1) % 4;
        const float cr = (us[j] - us[i]) * (py - vs[i]) - (vs[j] - vs[i]) * (px - us[i]);
        pos = pos || cr > 0;
        neg = neg || cr < 0;
      }
      if (pos && neg)
        continue;
      const std::size_t p = static_cast<std::size_t>(r) * W + c;
      for (int ch = 0; ch < 3; ++ch)
        rgb[ch * plane + p] = color[static_cast<std::size_t>(ch)];
    }
}

bool place_ok(const Cuboid &c, const std::vector<Cuboid> &placed, const CameraIntrinsics &intr) {
  const Box &raw = c.raw;
  const Box &cl = c.clipped;
  if (!(raw.center_x() >= 0 && raw.center_x() < static_cast<float>(intr.width) && raw.center_y() >= 0 &&
        raw.center_y() < static_cast<float>(intr.height)))
    return false;
  if (cl.width() < 2.0f || cl.height() < 2.0f || cl.area() < 0.5f * raw.area())
    return false;
  for (const auto &o : placed) {
    // 3D footprints with a small clearance
    if (c.x0 < o.x1 + 0.5f && o.x0 < c.x1 + 0.5f && c.z0 < o.z1 + 0.5f && o.z0 < c.z1 + 0.5f)
      return false;
    if (intersection(cl, o.clipped) > 0.3f * std::min(cl.area(), o.clipped.area()))
      return false;
  }
  return true;
}

// Point p hidden behind a nearer object other than its owner.
bool occluded(const Vec3 &p, int owner, const std::vector<Cuboid> &objs, const CameraIntrinsics &intr) {
  const float u = intr.project_u(p), v = intr.project_v(p);
  for (std::size_t j = 0; j < objs.size(); ++j) {
    if (static_cast<int>(j) == owner)
      continue;
    if (objs[j].z0 < p.z && objs[j].raw.contains(u, v))
      return true;
  }
  return false;
}

Vec3 sample_on_quad(const Quad &q, Rng &rng) {
  const float s = uniform(rng, 0.0f, 1.0f), t = uniform(rng, 0.0f, 1.0f);
  // q[0]→q[1] and q[1]→q[2] span the rectangle
  return Vec3{q[0].x + s * (q[1].x - q[0].x) + t * (q[2].x - q[1].x),
              q[0].y + s * (q[1].y - q[0].y) + t * (q[2].y - q[1].y),
              q[0].z + s * (q[1].z - q[0].z) + t * (q[2].z - q[1].z)};
}

} // namespace

Scene generate_scene(const SceneSpec &spec, const CameraIntrinsics &intr, std::uint64_t seed) {
  spec.validate();
  intr.validate();
  Rng rng(splitmix64(seed));
  std::normal_distribution<float> gauss(0.0f, 1.0f);

  std::array<int, kNumClasses> counts{};
  for (int k = 0; k < kNumClasses; ++k)
    counts[static_cast<std::size_t>(k)] =
        std::uniform_int_distribution<int>(spec.counts[static_cast<std::size_t>(k)].min,
                                           spec.counts[static_cast<std::size_t>(k)].max)(rng);

  std::vector<Cuboid> objs;
  for (;;) {
    objs.clear();
    int failed_class = -1;
    for (int k = 0; k < kNumClasses && failed_class < 0; ++k)
      for (int n = 0; n < counts[static_cast<std::size_t>(k)] && failed_class < 0; ++n) {
        bool ok = false;
        for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
          const float xc = uniform(rng, spec.x_min, spec.x_max);
          const float zc = uniform(rng, spec.z_min, spec.z_max);
          Cuboid c = make_cuboid(static_cast<ObjectClass>(k), xc, zc);
          c.raw = project_cuboid(c, intr);
          c.clipped = clip_box(c.raw, intr);
          if (place_ok(c, objs, intr)) {
            c.shade = 1.0f + uniform(rng, -spec.brightness_jitter, spec.brightness_jitter);
            objs.push_back(c);
            ok = true;
          }
        }
        if (!ok)
          failed_class = k;
      }
    if (failed_class < 0)
      break;
    --counts[static_cast<std::size_t>(failed_class)];
  }

  Scene scene;
  for (const auto &c : objs)
    scene.gt.push_back(GroundTruth{c.clipped, c.cls});

  // image
  const int H = intr.height, W = intr.width;
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  scene.rgb = Tensor({3, H, W});
  for (int r = 0; r < H; ++r) {
    std::array<float, 3> col{};
    if (static_cast<float>(r) + 0.5f < intr.cy) {
      const float t = (static_cast<float>(r) + 0.5f) / intr.cy;
      col = {120 + 40 * t, 160 + 25 * t, 205 + 15 * t};
    } else {
      const float t = (static_cast<float>(r) + 0.5f - intr.cy) / (static_cast<float>(H) - intr.cy);
      col = {85 + 35 * t, 85 + 35 * t, 90 + 35 * t};
    }
    for (int c = 0; c < W; ++c)
      for (int ch = 0; ch < 3; ++ch)
        scene.rgb[ch * plane + static_cast<std::size_t>(r) * W + c] = col[static_cast<std::size_t>(ch)];
  }
  std::vector<std::size_t> order(objs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return objs[a].zc > objs[b].zc; });
  for (std::size_t i : order) {
    const auto base = base_color(objs[i].cls);
    for (const auto &[quad, face_shade] : visible_faces(objs[i])) {
      std::array<float, 3> color{};
      for (int ch = 0; ch < 3; ++ch)
        color[static_cast<std::size_t>(ch)] =
            std::min(255.0f, base[static_cast<std::size_t>(ch)] * face_shade * objs[i].shade);
      fill_quad(scene.rgb, quad, intr, color);
    }
  }
  for (auto &v : scene.rgb.data())
    v = std::clamp(v + spec.pixel_noise * gauss(rng), 0.0f, 255.0f);

  // point cloud
  auto jitter = [&](Vec3 p) {
    p.x += spec.point_noise * gauss(rng);
    p.y += spec.point_noise * gauss(rng);
    p.z += spec.point_noise * gauss(rng);
    return p;
  };
  for (std::size_t i = 0; i < objs.size(); ++i) {
    const auto faces = visible_faces(objs[i]);
    std::vector<float> areas;
    for (const auto &f : faces)
      areas.push_back(quad_area(f.first));
    std::discrete_distribution<int> pick(areas.begin(), areas.end());
    const int n = std::max(4, static_cast<int>(std::lround(spec.point_density / (objs[i].zc * objs[i].zc))));
    bool any = false;
    for (int k = 0; k < n; ++k) {
      const Vec3 p = jitter(sample_on_quad(faces[static_cast<std::size_t>(pick(rng))].first, rng));
      const bool drop = uniform(rng, 0.0f, 1.0f) < spec.dropout;
      if (drop || p.z <= 0 || occluded(p, static_cast<int>(i), objs, intr))
        continue;
      scene.cloud.push_back(p);
      scene.point_owner.push_back(static_cast<int>(i));
      any = any || scene.gt[i].box.contains(intr.project_u(p), intr.project_v(p));
    }
    // every object keeps at least one LiDAR return inside its box
    for (int k = 0; k < 1000 && !any; ++k) {
      const Vec3 p = jitter(sample_on_quad(faces[static_cast<std::size_t>(pick(rng))].first, rng));
      if (p.z <= 0 || occluded(p, static_cast<int>(i), objs, intr))
        continue;
      const float u = intr.project_u(p), v = intr.project_v(p);
      if (!scene.gt[i].box.contains(u, v) || u >= static_cast<float>(W) || v >= static_cast<float>(H))
        continue;
      scene.cloud.push_back(p);
      scene.point_owner.push_back(static_cast<int>(i));
      any = true;
    }
  }
  const float zg0 = 3.0f, zg1 = 60.0f;
  for (int k = 0; k < spec.ground_points; ++k) {
    // density ∝ 1/z²
    const float inv = 1.0f / zg0 - uniform(rng, 0.0f, 1.0f) * (1.0f / zg0 - 1.0f / zg1);
    const float z = 1.0f / inv;
    const float half_l = z * intr.cx / intr.fx + 1.0f;
    const float half_r = z * (static_cast<float>(W) - intr.cx) / intr.fx + 1.0f;
    const float x = uniform(rng, -half_l, half_r);
    const Vec3 p = jitter(Vec3{x, kGroundY, z});
    const bool drop = uniform(rng, 0.0f, 1.0f) < spec.dropout;
    if (drop || p.z <= 0 || occluded(p, -1, objs, intr))
      continue;
    scene.cloud.push_back(p);
    scene.point_owner.push_back(-1);
  }
  return scene;
}

std::uint64_t val_split_seed(std::uint64_t master_seed) { return split_mix(master_seed, fnv1a("val-split")); }

namespace {

struct DepthAccumulator {
  double sum = 0, sumsq = 0;
  std::size_t n = 0;
  void add(const Scene &s, const CameraIntrinsics &intr) {
    auto maps = densify(project_points(s.cloud, intr), intr.height, intr.width);
    for (float d : maps.depth) {
      sum += d;
      sumsq += static_cast<double>(d) * d;
    }
    n += maps.depth.size();
  }
  DepthStats stats() const {
    if (n == 0)
      return DepthStats{0, 0};
    const double mean = sum / static_cast<double>(n);
    const double var = std::max(0.0, sumsq / static_cast<double>(n) - mean * mean);
    return DepthStats{mean, std::sqrt(var)};
  }
};

json spec_to_json(const SceneSpec &s) {
  json counts = json::object();
  for (int k = 0; k < kNumClasses; ++k)
    counts[std::string(class_name(static_cast<ObjectClass>(k)))] = {s.counts[static_cast<std::size_t>(k)].min,
                                                                    s.counts[static_cast<std::size_t>(k)].max};
  return json{{"counts", counts},
              {"x_range", {s.x_min, s.x_max}},
              {"z_range", {s.z_min, s.z_max}},
              {"pixel_noise", s.pixel_noise},
              {"brightness_jitter", s.brightness_jitter},
              {"point_noise", s.point_noise},
              {"point_density", s.point_density},
              {"ground_points", s.ground_points},
              {"dropout", s.dropout}};
}

SceneSpec spec_from_json(const json &j) {
  SceneSpec s;
  for (int k = 0; k < kNumClasses; ++k) {
    const auto &r = j.at("counts").at(std::string(class_name(static_cast<ObjectClass>(k))));
    s.counts[static_cast<std::size_t>(k)] = {r.at(0).get<int>(), r.at(1).get<int>()};
  }
  s.x_min = j.at("x_range").at(0).get<float>();
  s.x_max = j.at("x_range").at(1).get<float>();
  s.z_min = j.at("z_range").at(0).get<float>();
  s.z_max = j.at("z_range").at(1).get<float>();
  s.pixel_noise = j.at("pixel_noise").get<float>();
  s.brightness_jitter = j.at("brightness_jitter").get<float>();
  s.point_noise = j.at("point_noise").get<float>();
  s.point_density = j.at("point_density").get<float>();
  s.ground_points = j.at("ground_points").get<int>();
  s.dropout = j.at("dropout").get<float>();
  return s;
}

} // namespace

DepthStats compute_depth_stats(const std::vector<Scene> &scenes, const CameraIntrinsics &intr) {
  DepthAccumulator acc;
  for (const auto &s : scenes)
    acc.add(s, intr);
  return acc.stats();
}

std::string labels_to_json(const std::vector<GroundTruth> &gt) {
  json arr = json::array();
  for (const auto &g : gt)
    arr.push_back({{"box", {g.box.x_min, g.box.y_min, g.box.x_max, g.box.y_max}},
                   {"class", std::string(class_name(g.cls))}});
  return arr.dump(1);
}

std::vector<GroundTruth> labels_from_json(const std::string &text) {
  std::vector<GroundTruth> out;
  try {
    for (const auto &e : json::parse(text)) {
      const auto &b = e.at("box");
      GroundTruth g{Box{b.at(0).get<float>(), b.at(1).get<float>(), b.at(2).get<float>(), b.at(3).get<float>()},
                    class_from_name(e.at("class").get<std::string>())};
      out.push_back(g);
    }
  } catch (const json::exception &e) {
    throw IoError(std::string("malformed labels: ") + e.what());
  }
  return out;
}

std::string manifest_to_json(const DatasetManifest &m) {
  json scenes = json::array();
  for (const auto &f : m.scenes)
    scenes.push_back({{"rgb", f.rgb}, {"cloud", f.cloud}, {"labels", f.labels}});
  json j{{"format_version", m.format_version},
         {"split", m.split},
         {"master_seed", m.master_seed},
         {"intrinsics",
          {{"fx", m.intrinsics.fx},
           {"fy", m.intrinsics.fy},
           {"cx", m.intrinsics.cx},
           {"cy", m.intrinsics.cy},
           {"width", m.intrinsics.width},
           {"height", m.intrinsics.height}}},
         {"scene_spec", spec_to_json(m.spec)},
         {"scenes", scenes}};
  j["normalization"] = m.stats ? json{{"depth_mean", m.stats->mean}, {"depth_std", m.stats->std}} : json(nullptr);
  return j.dump(2) + "\n";
}

DatasetManifest manifest_from_json(const std::string &text) {
  DatasetManifest m;
  try {
    const auto j = json::parse(text);
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != DatasetManifest::kFormatVersion)
      throw IoError("unsupported dataset format version " + std::to_string(m.format_version));
    m.split = j.at("split").get<std::string>();
    m.master_seed = j.at("master_seed").get<std::uint64_t>();
    const auto &in = j.at("intrinsics");
    m.intrinsics = CameraIntrinsics{in.at("fx").get<float>(),   in.at("fy").get<float>(),
                                    in.at("cx").get<float>(),   in.at("cy").get<float>(),
                                    in.at("width").get<int>(), in.at("height").get<int>()};
    m.spec = spec_from_json(j.at("scene_spec"));
    for (const auto &s : j.at("scenes"))
      m.scenes.push_back(
          SceneFiles{s.at("rgb").get<std::string>(), s.at("cloud").get<std::string>(), s.at("labels").get<std::string>()});
    const auto &norm = j.at("normalization");
    if (!norm.is_null())
      m.stats = DepthStats{norm.at("depth_mean").get<double>(), norm.at("depth_std").get<double>()};
  } catch (const json::exception &e) {
    throw IoError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path &dir) {
  return manifest_from_json(binio::read_text(dir / "manifest.json"));
}

void save_scene(const std::filesystem::path &dir, const SceneFiles &files, const Scene &scene) {
  binio::write_f32_file(dir / files.rgb, scene.rgb.data());
  std::vector<float> flat;
  flat.reserve(scene.cloud.size() * 3);
  for (const auto &p : scene.cloud) {
    flat.push_back(p.x);
    flat.push_back(p.y);
    flat.push_back(p.z);
  }
  binio::write_f32_file(dir / files.cloud, flat);
  binio::write_text(dir / files.labels, labels_to_json(scene.gt) + "\n");
}

Scene load_scene(const std::filesystem::path &dir, const DatasetManifest &m, std::size_t index) {
  const auto &f = m.scenes.at(index);
  Scene s;
  const int H = m.intrinsics.height, W = m.intrinsics.width;
  auto rgb = binio::read_f32_file(dir / f.rgb);
  if (rgb.size() != static_cast<std::size_t>(3) * H * W)
    throw IoError((dir / f.rgb).string() + ": expected 3x" + std::to_string(H) + "x" + std::to_string(W) + " floats");
  s.rgb = Tensor({3, H, W}, std::move(rgb));
  auto flat = binio::read_f32_file(dir / f.cloud);
  if (flat.size() % 3 != 0)
    throw IoError((dir / f.cloud).string() + ": point count is not a multiple of 3");
  for (std::size_t i = 0; i < flat.size(); i += 3)
    s.cloud.push_back(Vec3{flat[i], flat[i + 1], flat[i + 2]});
  s.gt = labels_from_json(binio::read_text(dir / f.labels));
  return s;
}

DatasetManifest generate_dataset(const SceneSpec &spec, const CameraIntrinsics &intr, int count,
                                 std::uint64_t master_seed, const std::filesystem::path &out_dir,
                                 const std::string &split, std::optional<DepthStats> stats) {
  spec.validate();
  intr.validate();
  if (count < 0)
    throw ConfigError("dataset scene count must be non-negative");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec)
    throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  DatasetManifest m;
  m.split = split;
  m.master_seed = master_seed;
  m.intrinsics = intr;
  m.spec = spec;
  DepthAccumulator acc;
  for (int i = 0; i < count; ++i) {
    const auto id = std::to_string(i);
    SceneFiles files{"rgb_" + id + ".bin", "cloud_" + id + ".bin", "labels_" + id + ".json"};
    Scene s = generate_scene(spec, intr, split_mix(master_seed, static_cast<std::uint64_t>(i)));
    save_scene(out_dir, files, s);
    if (split == "train")
      acc.add(s, intr);
    m.scenes.push_back(files);
  }
  if (split == "train" && count > 0)
    m.stats = acc.stats();
  else
    m.stats = stats;
  binio::write_text(out_dir / "manifest.json", manifest_to_json(m));
  return m;
}

} // namespace fuselab
