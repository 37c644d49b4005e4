#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fscascade/detection_dump.hpp"
#include "fscascade/geometry.hpp"
#include "fscascade/synth.hpp"

// COCO-style evaluation: 101-point interpolated AP over the 10 IoU
// thresholds 0.50..0.95, per-threshold gap reports between two AP sweeps,
// and the confidence histogram of mid-IoU detections.

namespace fscascade {

struct GtRecord {
  int64_t image_id = 0;
  LabeledBox gt;
};

std::vector<GtRecord> collect_gts(const std::vector<SceneRecord>& records);

struct APReport {
  std::vector<double> thresholds;  // 0.50, 0.55, ..., 0.95
  std::vector<double> ap;          // one value per threshold
  double mean_ap = 0.0;
  std::vector<int64_t> classes_evaluated;  // classes present in GT
  std::vector<int64_t> classes_flagged;    // detected classes with no GT
  std::string label;                       // free-form metadata (variant/stage/seed)
};

struct GapReport {
  std::vector<double> thresholds;
  std::vector<double> delta;  // ap_a - ap_b
  std::string label_a, label_b;
};

struct ConfidenceHistogram {
  double iou_low = 0.5, iou_high = 0.75;
  std::vector<int64_t> counts;  // uniform score bins over [0,1]
  int64_t total = 0;
  std::string label;
};

// 101-point interpolated AP for one class at one threshold; nullopt when the
// class has no ground truth (excluded from means, flagged upstream).
std::optional<double> average_precision(const std::vector<Detection>& dets,
                                        const std::vector<GtRecord>& gts,
                                        int64_t class_id,
                                        double iou_threshold);

std::vector<double> ap_threshold_grid();  // the 10 standard thresholds

// AP at each threshold, averaged over the classes present in GT.
APReport ap_sweep(const std::vector<Detection>& dets,
                  const std::vector<GtRecord>& gts);

// Elementwise a - b on an identical threshold grid.
GapReport gap_report(const APReport& a, const APReport& b);

// Scores of detections whose max same-class GT IoU lies in [iou_low,
// iou_high), histogrammed into `bins` uniform bins over [0,1].
ConfidenceHistogram confidence_histogram(const std::vector<Detection>& dets,
                                         const std::vector<GtRecord>& gts,
                                         double iou_low = 0.5,
                                         double iou_high = 0.75,
                                         int64_t bins = 20);

// Plot-ready tab-separated tables (one row per threshold or bin).
std::string ap_report_table(const APReport& r);
std::string gap_report_table(const GapReport& r);
std::string histogram_table(const ConfidenceHistogram& h);

}  // namespace fscascade
