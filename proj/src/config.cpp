#include "fuselab/config.hpp"

#include <cstdlib>
#include <set>

#include "fuselab/errors.hpp"

namespace fuselab {

using nlohmann::json;

namespace {

class Section {
public:
  Section(const json &j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object())
      throw ConfigError(where() + " must be an object");
  }

  const json *find(const char *key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <class T> void get(const char *key, T &out) {
    if (const json *v = find(key))
      out = convert<T>(*v, where(key));
  }

  template <class T> void get_opt(const char *key, std::optional<T> &out) {
    if (const json *v = find(key))
      out = v->is_null() ? std::nullopt : std::optional<T>(convert<T>(*v, where(key)));
  }

  Section sub(const char *key) {
    seen_.insert(key);
    static const json empty = json::object();
    auto it = j_.find(key);
    return Section(it == j_.end() ? empty : *it, path_.empty() ? key : path_ + "." + key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw ConfigError("unknown key " + where(it.key().c_str()));
  }

  std::string where(const char *key = nullptr) const {
    if (!key)
      return path_.empty() ? "config" : "'" + path_ + "'";
    return "'" + (path_.empty() ? std::string(key) : path_ + "." + key) + "'";
  }

  template <class T> static T convert(const json &v, const std::string &where) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean())
        throw ConfigError(where + " must be a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_unsigned())
        throw ConfigError(where + " must be a non-negative integer");
      return v.get<std::uint64_t>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer())
        throw ConfigError(where + " must be an integer");
      const auto x = v.get<std::int64_t>();
      if (x < std::numeric_limits<T>::min() || x > std::numeric_limits<T>::max())
        throw ConfigError(where + " is out of range");
      return static_cast<T>(x);
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number())
        throw ConfigError(where + " must be a number");
      return static_cast<T>(v.get<double>());
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string())
        throw ConfigError(where + " must be a string");
      return v.get<std::string>();
    } else {
      if (!v.is_array())
        throw ConfigError(where + " must be an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i)
        out.push_back(convert<typename T::value_type>(v[i], where + "[" + std::to_string(i) + "]"));
      return out;
    }
  }

private:
  const json &j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::pair<float, float> get_range(Section &s, const char *key, std::pair<float, float> dflt) {
  std::optional<std::vector<float>> v;
  s.get_opt(key, v);
  if (!v)
    return dflt;
  if (v->size() != 2)
    throw ConfigError(s.where(key) + " must have two entries");
  return {(*v)[0], (*v)[1]};
}

void line_col(const std::string &text, std::size_t byte, std::size_t &line, std::size_t &col) {
  line = 1;
  col = 1;
  for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
}

} // namespace

std::uint64_t ExperimentConfig::master_seed() const {
  if (!seed)
    throw ConfigError("a master seed is required: set \"seed\" in the config, FUSELAB_SEED, or --seed");
  return *seed;
}

DetectorConfig ExperimentConfig::detector() const {
  DetectorConfig d;
  d.mode = fusion;
  d.height = intrinsics.height;
  d.width = intrinsics.width;
  return d;
}

std::vector<float> ExperimentConfig::resolved_budgets() const { return budgets ? *budgets : default_budgets(family); }

ExperimentConfig parse_config(const std::string &text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error &e) {
    std::size_t line, col;
    line_col(text, e.byte, line, col);
    throw ConfigError("invalid JSON at line " + std::to_string(line) + ", column " + std::to_string(col) + ": " +
                      e.what());
  }
  ExperimentConfig c;
  Section root(j, "");
  root.get_opt("seed", c.seed);

  {
    Section d = root.sub("dataset");
    d.get("train_count", c.train_count);
    d.get("val_count", c.val_count);
    Section in = d.sub("intrinsics");
    in.get("fx", c.intrinsics.fx);
    in.get("fy", c.intrinsics.fy);
    in.get("cx", c.intrinsics.cx);
    in.get("cy", c.intrinsics.cy);
    in.get("width", c.intrinsics.width);
    in.get("height", c.intrinsics.height);
    in.finish();
    Section sp = d.sub("scene_spec");
    {
      Section counts = sp.sub("counts");
      for (int k = 0; k < kNumClasses; ++k) {
        auto &r = c.scene_spec.counts[static_cast<std::size_t>(k)];
        const auto name = std::string(class_name(static_cast<ObjectClass>(k)));
        std::optional<std::vector<int>> v;
        counts.get_opt(name.c_str(), v);
        if (v) {
          if (v->size() != 2)
            throw ConfigError(counts.where(name.c_str()) + " must have two entries");
          r = {(*v)[0], (*v)[1]};
        }
      }
      counts.finish();
    }
    std::tie(c.scene_spec.x_min, c.scene_spec.x_max) = get_range(sp, "x_range", {c.scene_spec.x_min, c.scene_spec.x_max});
    std::tie(c.scene_spec.z_min, c.scene_spec.z_max) = get_range(sp, "z_range", {c.scene_spec.z_min, c.scene_spec.z_max});
    sp.get("pixel_noise", c.scene_spec.pixel_noise);
    sp.get("brightness_jitter", c.scene_spec.brightness_jitter);
    sp.get("point_noise", c.scene_spec.point_noise);
    sp.get("point_density", c.scene_spec.point_density);
    sp.get("ground_points", c.scene_spec.ground_points);
    sp.get("dropout", c.scene_spec.dropout);
    sp.finish();
    d.finish();
  }
  {
    Section m = root.sub("model");
    std::string fusion(fusion_name(c.fusion));
    m.get("fusion", fusion);
    c.fusion = fusion_from_name(fusion);
    m.finish();
  }
  {
    Section t = root.sub("train");
    t.get("epochs", c.train.epochs);
    t.get("batch_size", c.train.batch_size);
    std::string variant(at_variant_name(c.train.variant));
    t.get("at_variant", variant);
    c.train.variant = at_variant_from_name(variant);
    t.get("eps_image", c.train.eps_image);
    t.get("gamma_lidar", c.train.gamma_lidar);
    if (const json *s = t.find("schedule"); s && !s->is_null()) {
      if (s->is_string()) {
        if (s->get<std::string>() != "auto")
          throw ConfigError(t.where("schedule") + " must be \"auto\" or an object");
      } else {
        Section ss(*s, "train.schedule");
        std::string kind;
        ss.get("kind", kind);
        if (kind == "cosine") {
          LrSchedule l = LrSchedule::cosine(0.01f, 0.002f);
          ss.get("start", l.start);
          ss.get("end", l.end);
          c.train.schedule = l;
        } else if (kind == "cyclic") {
          LrSchedule l = LrSchedule::cyclic(1e-3f, 0.4f);
          ss.get("max_lr", l.max_lr);
          ss.get("peak_fraction", l.peak_fraction);
          c.train.schedule = l;
        } else {
          throw ConfigError("'train.schedule.kind' must be cosine or cyclic");
        }
        ss.finish();
      }
    }
    t.finish();
  }
  {
    Section a = root.sub("attack");
    std::string family(family_name(c.family));
    a.get("family", family);
    c.family = family_from_name(family);
    a.get("image", c.attack.image);
    a.get("lidar", c.attack.lidar);
    a.get("eps_image", c.attack.eps_image);
    a.get("gamma_lidar", c.attack.gamma_lidar);
    a.get("steps", c.attack.steps);
    a.get_opt("step_image", c.attack.step_image);
    a.get_opt("step_lidar", c.attack.step_lidar);
    std::string mask(mask_mode_name(c.attack.mask));
    a.get("mask", mask);
    c.attack.mask = mask_mode_from_name(mask);
    a.get("rand_init", c.attack.rand_init);
    a.finish();
  }
  {
    Section e = root.sub("eval");
    e.get("split", c.split);
    if (c.split != "train" && c.split != "val")
      throw ConfigError("'eval.split' must be train or val");
    e.get("score_thresh", c.eval.score_thresh);
    e.get("nms_iou", c.eval.nms_iou);
    e.get_opt("budgets", c.budgets);
    e.get("jobs", c.eval.jobs);
    e.finish();
  }
  root.finish();

  if (c.train_count < 0 || c.val_count < 0)
    throw ConfigError("dataset counts must be >= 0");
  c.intrinsics.validate();
  c.scene_spec.validate();
  c.detector().validate();
  c.train.validate(c.fusion);
  c.attack.validate();
  if (!(c.eval.score_thresh > 0 && c.eval.score_thresh < 1) || !(c.eval.nms_iou > 0 && c.eval.nms_iou < 1))
    throw ConfigError("eval thresholds must lie in (0,1)");
  if (c.eval.jobs < 0)
    throw ConfigError("'eval.jobs' must be >= 0");
  return c;
}

nlohmann::ordered_json config_to_json(const ExperimentConfig &c) {
  using oj = nlohmann::ordered_json;
  oj j;
  j["seed"] = c.seed ? oj(*c.seed) : oj(nullptr);
  oj counts = oj::object();
  for (int k = 0; k < kNumClasses; ++k) {
    const auto &r = c.scene_spec.counts[static_cast<std::size_t>(k)];
    counts[std::string(class_name(static_cast<ObjectClass>(k)))] = {r.min, r.max};
  }
  const auto &s = c.scene_spec;
  j["dataset"] = {{"train_count", c.train_count},
                  {"val_count", c.val_count},
                  {"intrinsics",
                   {{"fx", c.intrinsics.fx},
                    {"fy", c.intrinsics.fy},
                    {"cx", c.intrinsics.cx},
                    {"cy", c.intrinsics.cy},
                    {"width", c.intrinsics.width},
                    {"height", c.intrinsics.height}}},
                  {"scene_spec",
                   {{"counts", counts},
                    {"x_range", {s.x_min, s.x_max}},
                    {"z_range", {s.z_min, s.z_max}},
                    {"pixel_noise", s.pixel_noise},
                    {"brightness_jitter", s.brightness_jitter},
                    {"point_noise", s.point_noise},
                    {"point_density", s.point_density},
                    {"ground_points", s.ground_points},
                    {"dropout", s.dropout}}}};
  j["model"] = {{"fusion", fusion_name(c.fusion)}};
  const LrSchedule l = c.train.resolved_schedule();
  oj sched = l.kind == LrSchedule::Kind::Cosine
                 ? oj{{"kind", "cosine"}, {"start", l.start}, {"end", l.end}}
                 : oj{{"kind", "cyclic"}, {"max_lr", l.max_lr}, {"peak_fraction", l.peak_fraction}};
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"at_variant", at_variant_name(c.train.variant)},
                {"eps_image", c.train.eps_image},
                {"gamma_lidar", c.train.gamma_lidar},
                {"schedule", sched}};
  auto opt = [](const std::optional<float> &v) { return v ? oj(*v) : oj(nullptr); };
  j["attack"] = {{"family", family_name(c.family)},
                 {"image", c.attack.image},
                 {"lidar", c.attack.lidar},
                 {"eps_image", c.attack.eps_image},
                 {"gamma_lidar", c.attack.gamma_lidar},
                 {"steps", c.attack.steps},
                 {"step_image", opt(c.attack.step_image)},
                 {"step_lidar", opt(c.attack.step_lidar)},
                 {"mask", mask_mode_name(c.attack.mask)},
                 {"rand_init", c.attack.rand_init}};
  j["eval"] = {{"split", c.split},
               {"score_thresh", c.eval.score_thresh},
               {"nms_iou", c.eval.nms_iou},
               {"budgets", c.budgets ? oj(*c.budgets) : oj(nullptr)},
               {"jobs", c.eval.jobs}};
  return j;
}

void apply_seed_override(ExperimentConfig &c, std::optional<std::uint64_t> flag) {
  if (flag) {
    c.seed = flag;
    return;
  }
  if (const char *env = std::getenv("FUSELAB_SEED"); env && *env) {
    char *end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (errno || *end || env[0] == '-')
      throw ConfigError(std::string("FUSELAB_SEED is not an unsigned integer: ") + env);
    c.seed = v;
  }
}

} // namespace fuselab
