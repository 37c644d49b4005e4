#pragma once

#include <array>
#include <cstdint>
#include <vector>

// Axis-aligned box arithmetic in corner form (x1,y1,x2,y2), width = x2-x1
// with no "+1" convention.

namespace fscascade {

struct Box {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;
  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
};

struct ScoredBox {
  Box box;
  double score = 0.0;
  int64_t class_id = 1;  // foreground classes start at 1
};

struct LabeledBox {
  Box box;
  int64_t class_id = 1;
};

// Intersection area / union area; 0 when the union is empty.
double iou(const Box& a, const Box& b);

// R-CNN delta parameterization, normalized by per-coordinate stds.
std::array<double, 4> encode_deltas(const Box& proposal, const Box& gt,
                                    const std::array<double, 4>& stds);

// Inverse of encode_deltas; dw/dh clamped to log(1000/16) before exp, result
// clipped to [0,W]x[0,H].
Box decode_deltas(const Box& proposal, const std::array<double, 4>& deltas,
                  const std::array<double, 4>& stds, double image_w,
                  double image_h);

Box clip_to_image(const Box& b, double image_w, double image_h);

// Greedy per-class suppression: keep the highest score, drop same-class boxes
// with IoU > threshold; score ties broken by lower original index. Output is
// sorted by descending score.
std::vector<ScoredBox> nms(const std::vector<ScoredBox>& dets,
                           double iou_threshold);

// Greedy matching in descending-score order: detection k is a true positive
// iff some unmatched same-class GT has IoU >= threshold (takes the highest
// IoU one); each GT matches at most once. Flags align with the input order.
std::vector<bool> match_to_gt(const std::vector<ScoredBox>& dets,
                              const std::vector<LabeledBox>& gts,
                              double iou_threshold);

}  // namespace fscascade
