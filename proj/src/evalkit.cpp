#include "fuselab/evalkit.hpp"

#include <algorithm>
#include <numeric>

#include "fuselab/errors.hpp"

namespace fuselab {

double iou(const Box &a, const Box &b) {
  if (!a.valid() || !b.valid())
    throw ConfigError("iou: degenerate box");
  const double w = std::min<double>(a.x_max, b.x_max) - std::max<double>(a.x_min, b.x_min);
  const double h = std::min<double>(a.y_max, b.y_max) - std::max<double>(a.y_min, b.y_min);
  if (w <= 0 || h <= 0)
    return 0.0;
  const double inter = w * h;
  const double area_a = static_cast<double>(a.width()) * a.height();
  const double area_b = static_cast<double>(b.width()) * b.height();
  return inter / (area_a + area_b - inter);
}

std::optional<double> average_precision(const std::vector<SceneDetection> &dets,
                                        const std::vector<SceneGroundTruth> &gts, ObjectClass cls,
                                        double iou_thresh, std::vector<PRPoint> *pr_out) {
  std::vector<std::size_t> gt_idx;
  for (std::size_t i = 0; i < gts.size(); ++i)
    if (gts[i].gt.cls == cls)
      gt_idx.push_back(i);
  if (pr_out)
    pr_out->clear();
  if (gt_idx.empty())
    return std::nullopt;

  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < dets.size(); ++i)
    if (dets[i].det.cls == cls)
      order.push_back(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].det.score > dets[b].det.score; });

  std::vector<bool> matched(gts.size(), false);
  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const auto &d = dets[order[rank]];
    double best = -1;
    std::size_t best_j = 0;
    for (std::size_t j : gt_idx) {
      if (matched[j] || gts[j].scene != d.scene)
        continue;
      const double o = iou(d.det.box, gts[j].gt.box);
      if (o > best) {
        best = o;
        best_j = j;
      }
    }
    if (best >= iou_thresh) {
      matched[best_j] = true;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(rank + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(gt_idx.size()));
  }

  // precision envelope, right to left
  std::vector<double> env = precision;
  for (std::size_t i = env.size(); i-- > 1;)
    env[i - 1] = std::max(env[i - 1], env[i]);
  double ap = 0, prev_recall = 0;
  for (std::size_t i = 0; i < env.size(); ++i) {
    ap += (recall[i] - prev_recall) * env[i];
    prev_recall = recall[i];
    if (pr_out)
      pr_out->push_back(PRPoint{recall[i], env[i]});
  }
  return ap;
}

APResult mean_average_precision(const std::vector<SceneDetection> &dets, const std::vector<SceneGroundTruth> &gts,
                                double iou_thresh) {
  APResult r;
  double sum = 0;
  int n = 0;
  for (int k = 0; k < kNumClasses; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    r.ap[ku] = average_precision(dets, gts, static_cast<ObjectClass>(k), iou_thresh, &r.pr[ku]);
    if (r.ap[ku]) {
      sum += *r.ap[ku];
      ++n;
    }
  }
  r.map = n > 0 ? sum / n : 0.0;
  return r;
}

} // namespace fuselab
