#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fscascade/geometry.hpp"

// Detection dump: the on-disk exchange format between inference and the
// evaluation/diagnose commands. One line per detection with named fields:
//
//   image_id=<int> class_id=<int> score=<float> x1=<f> y1=<f> x2=<f> y2=<f>
//
// Blank lines and '#' comments are ignored. Floats carry 17 significant
// digits so scores and coordinates round-trip exactly.

namespace fscascade {

struct Detection {
  int64_t image_id = 0;
  ScoredBox det;
};

std::string serialize_detections(const std::vector<Detection>& dets);
std::vector<Detection> parse_detections(const std::string& text);

void save_detections(const std::string& path,
                     const std::vector<Detection>& dets);
std::vector<Detection> load_detections(const std::string& path);

}  // namespace fscascade
