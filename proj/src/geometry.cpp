#include "fscascade/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fscascade {

double iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::array<double, 4> encode_deltas(const Box& proposal, const Box& gt,
                                    const std::array<double, 4>& stds) {
  const double pw = proposal.width(), ph = proposal.height();
  const double gw = gt.width(), gh = gt.height();
  if (pw <= 0.0 || ph <= 0.0 || gw <= 0.0 || gh <= 0.0) {
    throw std::invalid_argument("encode_deltas: boxes must have positive size");
  }
  const double px = proposal.x1 + 0.5 * pw, py = proposal.y1 + 0.5 * ph;
  const double gx = gt.x1 + 0.5 * gw, gy = gt.y1 + 0.5 * gh;
  return {(gx - px) / pw / stds[0], (gy - py) / ph / stds[1],
          std::log(gw / pw) / stds[2], std::log(gh / ph) / stds[3]};
}

Box decode_deltas(const Box& proposal, const std::array<double, 4>& deltas,
                  const std::array<double, 4>& stds, double image_w,
                  double image_h) {
  const double pw = proposal.width(), ph = proposal.height();
  const double px = proposal.x1 + 0.5 * pw, py = proposal.y1 + 0.5 * ph;
  static const double kMaxLogScale = std::log(1000.0 / 16.0);
  const double dx = deltas[0] * stds[0];
  const double dy = deltas[1] * stds[1];
  const double dw = std::min(deltas[2] * stds[2], kMaxLogScale);
  const double dh = std::min(deltas[3] * stds[3], kMaxLogScale);
  const double cx = px + dx * pw;
  const double cy = py + dy * ph;
  const double w = pw * std::exp(dw);
  const double h = ph * std::exp(dh);
  Box b{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  return clip_to_image(b, image_w, image_h);
}

Box clip_to_image(const Box& b, double image_w, double image_h) {
  Box c;
  c.x1 = std::clamp(b.x1, 0.0, image_w);
  c.y1 = std::clamp(b.y1, 0.0, image_h);
  c.x2 = std::clamp(b.x2, 0.0, image_w);
  c.y2 = std::clamp(b.y2, 0.0, image_h);
  if (c.x2 < c.x1) c.x2 = c.x1;
  if (c.y2 < c.y1) c.y2 = c.y1;
  return c;
}

namespace {

// Descending score, ties by lower original index.
std::vector<size_t> score_order(const std::vector<ScoredBox>& dets) {
  std::vector<size_t> order(dets.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return dets[a].score > dets[b].score;
  });
  return order;
}

}  // namespace

std::vector<ScoredBox> nms(const std::vector<ScoredBox>& dets,
                           double iou_threshold) {
  if (iou_threshold <= 0.0 || iou_threshold > 1.0) {
    throw std::invalid_argument("nms: iou_threshold must be in (0,1]");
  }
  const std::vector<size_t> order = score_order(dets);
  std::vector<bool> suppressed(dets.size(), false);
  std::vector<ScoredBox> kept;
  for (size_t oi = 0; oi < order.size(); ++oi) {
    const size_t i = order[oi];
    if (suppressed[i]) continue;
    kept.push_back(dets[i]);
    for (size_t oj = oi + 1; oj < order.size(); ++oj) {
      const size_t j = order[oj];
      if (suppressed[j] || dets[j].class_id != dets[i].class_id) continue;
      if (iou(dets[i].box, dets[j].box) > iou_threshold) suppressed[j] = true;
    }
  }
  return kept;
}

std::vector<bool> match_to_gt(const std::vector<ScoredBox>& dets,
                              const std::vector<LabeledBox>& gts,
                              double iou_threshold) {
  const std::vector<size_t> order = score_order(dets);
  std::vector<bool> gt_used(gts.size(), false);
  std::vector<bool> flags(dets.size(), false);
  for (size_t i : order) {
    double best = -1.0;
    size_t best_gt = gts.size();
    for (size_t g = 0; g < gts.size(); ++g) {
      if (gt_used[g] || gts[g].class_id != dets[i].class_id) continue;
      const double v = iou(dets[i].box, gts[g].box);
      if (v >= iou_threshold && v > best) {
        best = v;
        best_gt = g;
      }
    }
    if (best_gt < gts.size()) {
      gt_used[best_gt] = true;
      flags[i] = true;
    }
  }
  return flags;
}

}  // namespace fscascade
