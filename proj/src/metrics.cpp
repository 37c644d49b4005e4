#include "fscascade/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "fscascade/textkv.hpp"

namespace fscascade {

std::vector<GtRecord> collect_gts(const std::vector<SceneRecord>& records) {
  std::vector<GtRecord> out;
  for (const SceneRecord& rec : records) {
    for (const LabeledBox& g : rec.gts) out.push_back(GtRecord{rec.id, g});
  }
  return out;
}

std::vector<double> ap_threshold_grid() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.50 + 0.05 * i);
  return t;
}

std::optional<double> average_precision(const std::vector<Detection>& dets,
                                        const std::vector<GtRecord>& gts,
                                        int64_t class_id,
                                        double iou_threshold) {
  if (iou_threshold <= 0.0 || iou_threshold >= 1.0) {
    throw std::invalid_argument("average_precision: threshold must be in (0,1)");
  }
  // Class GTs per image, with a used flag each.
  std::map<int64_t, std::vector<std::pair<Box, bool>>> gt_by_image;
  int64_t total_gt = 0;
  for (const GtRecord& g : gts) {
    if (g.gt.class_id != class_id) continue;
    gt_by_image[g.image_id].emplace_back(g.gt.box, false);
    ++total_gt;
  }
  if (total_gt == 0) return std::nullopt;

  std::vector<size_t> order;
  for (size_t i = 0; i < dets.size(); ++i) {
    if (dets[i].det.class_id == class_id) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (dets[a].det.score != dets[b].det.score) {
      return dets[a].det.score > dets[b].det.score;
    }
    return dets[a].image_id < dets[b].image_id;
  });

  std::vector<double> precision, recall;
  int64_t tp = 0, fp = 0;
  for (size_t i : order) {
    auto it = gt_by_image.find(dets[i].image_id);
    double best = -1.0;
    size_t best_g = 0;
    if (it != gt_by_image.end()) {
      for (size_t g = 0; g < it->second.size(); ++g) {
        if (it->second[g].second) continue;
        const double v = iou(dets[i].det.box, it->second[g].first);
        if (v >= iou_threshold && v > best) {
          best = v;
          best_g = g;
        }
      }
    }
    if (best >= 0.0) {
      it->second[best_g].second = true;
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
  }

  // Precision envelope, then the 101-point recall grid.
  for (size_t i = precision.size(); i-- > 1;) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double ap = 0.0;
  size_t k = 0;
  for (int r = 0; r <= 100; ++r) {
    const double rr = static_cast<double>(r) / 100.0;
    while (k < recall.size() && recall[k] < rr - 1e-12) ++k;
    if (k < recall.size()) ap += precision[k];
  }
  return ap / 101.0;
}

APReport ap_sweep(const std::vector<Detection>& dets,
                  const std::vector<GtRecord>& gts) {
  if (gts.empty()) throw std::invalid_argument("ap_sweep: empty GT set");
  std::set<int64_t> present, detected;
  for (const GtRecord& g : gts) present.insert(g.gt.class_id);
  for (const Detection& d : dets) detected.insert(d.det.class_id);

  APReport report;
  report.thresholds = ap_threshold_grid();
  report.classes_evaluated.assign(present.begin(), present.end());
  for (int64_t c : detected) {
    if (!present.count(c)) report.classes_flagged.push_back(c);
  }
  for (double t : report.thresholds) {
    double sum = 0.0;
    for (int64_t c : present) {
      sum += average_precision(dets, gts, c, t).value();
    }
    report.ap.push_back(sum / static_cast<double>(present.size()));
  }
  report.mean_ap =
      std::accumulate(report.ap.begin(), report.ap.end(), 0.0) /
      static_cast<double>(report.ap.size());
  return report;
}

GapReport gap_report(const APReport& a, const APReport& b) {
  if (a.thresholds != b.thresholds) {
    throw std::invalid_argument("gap_report: threshold grids differ");
  }
  GapReport g;
  g.thresholds = a.thresholds;
  g.label_a = a.label;
  g.label_b = b.label;
  for (size_t i = 0; i < a.ap.size(); ++i) g.delta.push_back(a.ap[i] - b.ap[i]);
  return g;
}

ConfidenceHistogram confidence_histogram(const std::vector<Detection>& dets,
                                         const std::vector<GtRecord>& gts,
                                         double iou_low, double iou_high,
                                         int64_t bins) {
  if (!(0.0 <= iou_low && iou_low < iou_high && iou_high <= 1.0)) {
    throw std::invalid_argument(
        "confidence_histogram: need 0 <= iou_low < iou_high <= 1");
  }
  if (bins < 1) throw std::invalid_argument("confidence_histogram: bins >= 1");
  ConfidenceHistogram h;
  h.iou_low = iou_low;
  h.iou_high = iou_high;
  h.counts.assign(static_cast<size_t>(bins), 0);
  for (const Detection& d : dets) {
    double best = 0.0;
    for (const GtRecord& g : gts) {
      if (g.image_id != d.image_id || g.gt.class_id != d.det.class_id) continue;
      best = std::max(best, iou(d.det.box, g.gt.box));
    }
    if (best < iou_low || best >= iou_high) continue;
    int64_t bin = static_cast<int64_t>(d.det.score * static_cast<double>(bins));
    bin = std::clamp<int64_t>(bin, 0, bins - 1);  // score 1.0 lands on top bin
    ++h.counts[static_cast<size_t>(bin)];
    ++h.total;
  }
  return h;
}

std::string ap_report_table(const APReport& r) {
  std::ostringstream os;
  os << "# fscascade ap report\n";
  os << "# label=" << r.label << "\n";
  os << "# classes_evaluated=";
  for (size_t i = 0; i < r.classes_evaluated.size(); ++i) {
    os << (i ? "," : "") << r.classes_evaluated[i];
  }
  os << "\n# classes_flagged_no_gt=";
  for (size_t i = 0; i < r.classes_flagged.size(); ++i) {
    os << (i ? "," : "") << r.classes_flagged[i];
  }
  os << "\nthreshold\tap\n";
  for (size_t i = 0; i < r.thresholds.size(); ++i) {
    os << format_double(r.thresholds[i]) << "\t" << format_double(r.ap[i])
       << "\n";
  }
  os << "mean\t" << format_double(r.mean_ap) << "\n";
  return os.str();
}

std::string gap_report_table(const GapReport& r) {
  std::ostringstream os;
  os << "# fscascade gap report: delta = ap(a) - ap(b)\n";
  os << "# a=" << r.label_a << "\n";
  os << "# b=" << r.label_b << "\n";
  os << "threshold\tdelta\n";
  for (size_t i = 0; i < r.thresholds.size(); ++i) {
    os << format_double(r.thresholds[i]) << "\t" << format_double(r.delta[i])
       << "\n";
  }
  return os.str();
}

std::string histogram_table(const ConfidenceHistogram& h) {
  std::ostringstream os;
  os << "# fscascade confidence histogram: detections with max same-class GT "
        "IoU in ["
     << format_double(h.iou_low) << "," << format_double(h.iou_high) << ")\n";
  os << "# label=" << h.label << "\n";
  os << "# total=" << h.total << "\n";
  os << "bin_lo\tbin_hi\tcount\n";
  const int64_t bins = static_cast<int64_t>(h.counts.size());
  for (int64_t b = 0; b < bins; ++b) {
    os << format_double(static_cast<double>(b) / static_cast<double>(bins))
       << "\t"
       << format_double(static_cast<double>(b + 1) / static_cast<double>(bins))
       << "\t" << h.counts[static_cast<size_t>(b)] << "\n";
  }
  return os.str();
}

}  // namespace fscascade
