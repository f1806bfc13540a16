#include "fuselab/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fuselab/errors.hpp"
#include "fuselab/evalkit.hpp"

namespace fuselab {

std::string_view fusion_name(FusionMode m) {
  switch (m) {
  case FusionMode::Rgb: return "rgb";
  case FusionMode::Depth: return "depth";
  case FusionMode::Early: return "early";
  case FusionMode::Late: return "late";
  }
  return "?";
}

FusionMode fusion_from_name(std::string_view name) {
  if (name == "rgb")
    return FusionMode::Rgb;
  if (name == "depth")
    return FusionMode::Depth;
  if (name == "early")
    return FusionMode::Early;
  if (name == "late")
    return FusionMode::Late;
  throw ConfigError("unknown fusion mode \"" + std::string(name) + "\" (expected rgb, depth, early or late)");
}

bool uses_rgb(FusionMode m) { return m != FusionMode::Depth; }
bool uses_lidar(FusionMode m) { return m != FusionMode::Rgb; }

int DetectorConfig::input_channels() const {
  switch (mode) {
  case FusionMode::Rgb: return 3;
  case FusionMode::Depth: return 2;
  case FusionMode::Early: return 5;
  case FusionMode::Late: return 5;
  }
  return 0;
}

void DetectorConfig::validate() const {
  if (stride != 8)
    throw ConfigError("detector: only stride 8 is supported");
  if (height <= 0 || width <= 0 || height % stride != 0 || width % stride != 0)
    throw ConfigError("detector: stride " + std::to_string(stride) + " must divide image size " +
                      std::to_string(height) + "x" + std::to_string(width));
  if (backbone_widths.size() != 4 || route_widths.size() != 3)
    throw ConfigError("detector: expected 4 backbone widths and 3 route widths");
  auto positive = [](int w) { return w > 0; };
  if (!std::all_of(backbone_widths.begin(), backbone_widths.end(), positive) ||
      !std::all_of(route_widths.begin(), route_widths.end(), positive) || fuse_width <= 0)
    throw ConfigError("detector: channel widths must be positive");
  if (leaky_slope < 0)
    throw ConfigError("detector: leaky slope must be non-negative");
}

namespace {

struct ConvSpec {
  std::string name;
  int cin, cout, k, stride;
};

std::vector<ConvSpec> route(const std::string &prefix, int cin, const std::vector<int> &widths,
                            const std::vector<int> &strides) {
  std::vector<ConvSpec> out;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    out.push_back({prefix + ".conv" + std::to_string(i + 1), cin, widths[i], 3, strides[i]});
    cin = widths[i];
  }
  return out;
}

struct Layout {
  std::vector<ConvSpec> main;   // single backbone, or fuse conv for Late
  std::vector<ConvSpec> rgb;    // Late only
  std::vector<ConvSpec> lidar;  // Late only
  ConvSpec head;
};

Layout layout(const DetectorConfig &c) {
  Layout l;
  if (c.mode == FusionMode::Late) {
    l.rgb = route("rgb", 3, c.route_widths, {2, 2, 2});
    l.lidar = route("lidar", 2, c.route_widths, {2, 2, 2});
    l.main = {{"fuse.conv1", 2 * c.route_widths.back(), c.fuse_width, 3, 1}};
  } else {
    l.main = route("backbone", c.input_channels(), c.backbone_widths, {1, 2, 2, 2});
  }
  l.head = {"head", l.main.back().cout, DetectorConfig::kHeadChannels, 1, 1};
  return l;
}

std::vector<ConvSpec> all_convs(const Layout &l) {
  std::vector<ConvSpec> all = l.rgb;
  all.insert(all.end(), l.lidar.begin(), l.lidar.end());
  all.insert(all.end(), l.main.begin(), l.main.end());
  all.push_back(l.head);
  return all;
}

Var apply_conv(Var x, const ConvSpec &s, const std::map<std::string, Var> &p) {
  return conv2d(x, p.at(s.name + ".weight"), p.at(s.name + ".bias"), s.stride);
}

Var apply_route(Var x, const std::vector<ConvSpec> &convs, const std::map<std::string, Var> &p, float slope) {
  for (const auto &s : convs)
    x = leaky_relu(apply_conv(x, s, p), slope);
  return x;
}

float sigmoidf(float x) { return 1.0f / (1.0f + std::exp(-x)); }

} // namespace

ParamStore init_params(const DetectorConfig &config, std::uint64_t seed) {
  config.validate();
  ParamStore ps;
  for (const auto &s : all_convs(layout(config))) {
    const int fan_in = s.cin * s.k * s.k;
    ps.add(s.name + ".weight", he_uniform({s.cout, s.cin, s.k, s.k}, fan_in, seed, s.name + ".weight"));
    ps.add(s.name + ".bias", Tensor({s.cout}));
  }
  return ps;
}

void check_params(const DetectorConfig &config, const ParamStore &params) {
  const ParamStore expected = init_params(config, 0);
  if (expected.names() != params.names())
    throw ConfigError("checkpoint parameters do not match a " + std::string(fusion_name(config.mode)) +
                      " detector");
  for (const auto &n : expected.names())
    if (expected.value(n).shape() != params.value(n).shape())
      throw ConfigError("checkpoint parameter " + n + " has shape " + shape_str(params.value(n).shape()) +
                        ", expected " + shape_str(expected.value(n).shape()));
}

Var detector_forward(Tape &tape, const std::map<std::string, Var> &params, const DetectorConfig &config,
                     std::optional<Var> rgb, std::optional<Var> lidar) {
  (void)tape;
  const auto mode_name = std::string(fusion_name(config.mode));
  if (uses_rgb(config.mode) && !rgb)
    throw ConfigError("detector mode " + mode_name + " requires an RGB input");
  if (uses_lidar(config.mode) && !lidar)
    throw ConfigError("detector mode " + mode_name + " requires a LiDAR input");
  const std::vector<int> rgb_shape{3, config.height, config.width};
  const std::vector<int> lidar_shape{2, config.height, config.width};
  if (uses_rgb(config.mode) && rgb->shape() != rgb_shape)
    throw ConfigError("detector: RGB input shape " + shape_str(rgb->shape()) + ", expected " + shape_str(rgb_shape));
  if (uses_lidar(config.mode) && lidar->shape() != lidar_shape)
    throw ConfigError("detector: LiDAR input shape " + shape_str(lidar->shape()) + ", expected " +
                      shape_str(lidar_shape));

  const Layout l = layout(config);
  const float slope = config.leaky_slope;
  Var features;
  switch (config.mode) {
  case FusionMode::Rgb: features = apply_route(*rgb, l.main, params, slope); break;
  case FusionMode::Depth: features = apply_route(*lidar, l.main, params, slope); break;
  case FusionMode::Early: features = apply_route(concat_channels(*rgb, *lidar), l.main, params, slope); break;
  case FusionMode::Late: {
    Var a = apply_route(*rgb, l.rgb, params, slope);
    Var b = apply_route(*lidar, l.lidar, params, slope);
    features = apply_route(concat_channels(a, b), l.main, params, slope);
    break;
  }
  }
  return apply_conv(features, l.head, params);
}

Tensor predict(const Model &model, const Tensor *rgb, const Tensor *lidar) {
  Tape tape;
  const auto bound = model.params.bind(tape, false);
  std::optional<Var> r, d;
  if (rgb)
    r = tape.constant(*rgb);
  if (lidar)
    d = tape.constant(*lidar);
  return detector_forward(tape, bound, model.config, r, d).value();
}

Targets assign_targets(const std::vector<GroundTruth> &gt, const DetectorConfig &config) {
  const int gh = config.grid_h(), gw = config.grid_w();
  const int cells = gh * gw;
  const auto stride = static_cast<float>(config.stride);
  Targets t;
  t.grid_h = gh;
  t.grid_w = gw;
  t.objectness = Tensor({1, gh, gw});
  t.obj_weights = Tensor({1, gh, gw}, 1.0f / static_cast<float>(cells));
  t.labels.assign(static_cast<std::size_t>(cells), 0);
  t.cls_weights = Tensor({1, gh, gw});
  t.box = Tensor({4, gh, gw});
  t.box_weights = Tensor({4, gh, gw});

  std::vector<int> owner(static_cast<std::size_t>(cells), -1);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const Box &b = gt[i].box;
    const int gx = std::clamp(static_cast<int>(std::floor(b.center_x() / stride)), 0, gw - 1);
    const int gy = std::clamp(static_cast<int>(std::floor(b.center_y() / stride)), 0, gh - 1);
    auto &o = owner[static_cast<std::size_t>(gy * gw + gx)];
    if (o < 0) {
      o = static_cast<int>(i);
    } else {
      ++t.dropped;
      if (b.area() > gt[static_cast<std::size_t>(o)].box.area())
        o = static_cast<int>(i);
    }
  }
  for (int c = 0; c < cells; ++c)
    t.positives += owner[static_cast<std::size_t>(c)] >= 0;
  const float wpos = t.positives > 0 ? 1.0f / static_cast<float>(t.positives) : 0.0f;
  const auto W = static_cast<float>(config.width), H = static_cast<float>(config.height);
  for (int c = 0; c < cells; ++c) {
    const int o = owner[static_cast<std::size_t>(c)];
    if (o < 0)
      continue;
    const auto cu = static_cast<std::size_t>(c);
    const GroundTruth &g = gt[static_cast<std::size_t>(o)];
    const int gx = c % gw, gy = c / gw;
    t.objectness[cu] = 1.0f;
    t.labels[cu] = static_cast<int>(g.cls);
    t.cls_weights[cu] = wpos;
    const float tx = g.box.center_x() / stride - static_cast<float>(gx);
    const float ty = g.box.center_y() / stride - static_cast<float>(gy);
    t.box[cu] = std::clamp(tx, 0.0f, 1.0f);
    t.box[cells + cu] = std::clamp(ty, 0.0f, 1.0f);
    t.box[2 * cells + cu] = std::log(g.box.width() / W);
    t.box[3 * cells + cu] = std::log(g.box.height() / H);
    for (int k = 0; k < 4; ++k)
      t.box_weights[k * cells + cu] = wpos;
  }
  return t;
}

namespace {

Var box_params(Var pred) {
  // tx, ty squashed into (0,1); tw, th raw
  return concat_channels(sigmoid(slice_channels(pred, 1 + kNumClasses, 3 + kNumClasses)),
                         slice_channels(pred, 3 + kNumClasses, 5 + kNumClasses));
}

void check_pred(Var pred, const Targets &t) {
  const std::vector<int> want{DetectorConfig::kHeadChannels, t.grid_h, t.grid_w};
  if (pred.shape() != want)
    throw ConfigError("loss: prediction shape " + shape_str(pred.shape()) + " does not match targets " +
                      shape_str(want));
}

} // namespace

Var regression_loss(Var pred, const Targets &targets) {
  check_pred(pred, targets);
  return smooth_l1(box_params(pred), targets.box, targets.box_weights);
}

LossTerms detector_loss(Var pred, const Targets &targets) {
  check_pred(pred, targets);
  LossTerms l;
  l.objectness = bce_with_logits(slice_channels(pred, 0, 1), targets.objectness, targets.obj_weights);
  l.cls = softmax_cross_entropy(slice_channels(pred, 1, 1 + kNumClasses), targets.labels, targets.cls_weights);
  l.regression = smooth_l1(box_params(pred), targets.box, targets.box_weights);
  l.total = add(add(l.objectness, l.cls), scale(l.regression, kRegressionWeight));
  return l;
}

std::vector<Detection> decode(const Tensor &pred, const DetectorConfig &config, float score_thresh,
                              float iou_thresh) {
  const int gh = config.grid_h(), gw = config.grid_w();
  if (pred.shape() != std::vector<int>{DetectorConfig::kHeadChannels, gh, gw})
    throw ConfigError("decode: prediction shape " + shape_str(pred.shape()) + " does not match config");
  const std::size_t cells = static_cast<std::size_t>(gh) * gw;
  const auto stride = static_cast<float>(config.stride);
  const auto W = static_cast<float>(config.width), H = static_cast<float>(config.height);

  std::vector<Detection> cand;
  for (std::size_t c = 0; c < cells; ++c) {
    const float obj = sigmoidf(pred[c]);
    float mx = pred[cells + c];
    int best = 0;
    for (int k = 1; k < kNumClasses; ++k)
      if (pred[(1 + k) * cells + c] > mx) {
        mx = pred[(1 + k) * cells + c];
        best = k;
      }
    float z = 0.0f;
    for (int k = 0; k < kNumClasses; ++k)
      z += std::exp(pred[(1 + k) * cells + c] - mx);
    const float score = obj * (1.0f / z);
    if (!(score >= score_thresh))
      continue;
    const float gx = static_cast<float>(c % static_cast<std::size_t>(gw));
    const float gy = static_cast<float>(c / static_cast<std::size_t>(gw));
    const float cx = (gx + sigmoidf(pred[(4 + 0) * cells + c])) * stride;
    const float cy = (gy + sigmoidf(pred[(4 + 1) * cells + c])) * stride;
    const float w = std::exp(pred[(4 + 2) * cells + c]) * W;
    const float h = std::exp(pred[(4 + 3) * cells + c]) * H;
    Box b{std::clamp(cx - 0.5f * w, 0.0f, W), std::clamp(cy - 0.5f * h, 0.0f, H), std::clamp(cx + 0.5f * w, 0.0f, W),
          std::clamp(cy + 0.5f * h, 0.0f, H)};
    if (!b.valid() || !std::isfinite(b.area()))
      continue;
    cand.push_back(Detection{b, static_cast<ObjectClass>(best), score});
  }
  // candidates are in cell order, so the stable sort breaks score ties by cell
  std::stable_sort(cand.begin(), cand.end(), [](const Detection &a, const Detection &b) { return a.score > b.score; });
  std::vector<Detection> kept;
  for (const auto &d : cand) {
    bool suppressed = false;
    for (const auto &k : kept)
      if (k.cls == d.cls && iou(k.box, d.box) >= iou_thresh) {
        suppressed = true;
        break;
      }
    if (!suppressed)
      kept.push_back(d);
  }
  return kept;
}

} // namespace fuselab
