#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fscascade/geometry.hpp"
#include "fscascade/tensor.hpp"

// Deterministic synthetic detection scenes: filled shapes with class-coded
// colors over a uniform-noise background. Class ids: 1 rectangle, 2 ellipse,
// 3 triangle. The ground-truth box of a shape is the tight bounding box of
// its rasterized mask (pixel (row i, col j) covers [j,j+1) x [i,i+1)).

namespace fscascade {

struct SceneSpec {
  int64_t image_h = 96;
  int64_t image_w = 96;
  int64_t num_classes = 3;
  int64_t objects_min = 1;
  int64_t objects_max = 4;
  double size_min = 0.15;  // shape extent as a fraction of the image side
  double size_max = 0.40;
  double max_gt_iou = 0.2;  // rejection cap on pairwise GT overlap
  double noise = 0.25;      // background amplitude: channel ~ U[0, noise]
  uint64_t seed = 1;
};

struct SceneRecord {
  int64_t id = 0;
  Tensor image;  // [3,H,W], values in [0,1]
  std::vector<LabeledBox> gts;
};

struct Dataset {
  SceneSpec spec;
  std::vector<SceneRecord> records;
};

// Deterministic per (spec.seed, scene_id). Throws if rejection sampling
// cannot place the requested objects within the retry budget.
SceneRecord generate_scene(const SceneSpec& spec, int64_t scene_id);

std::vector<SceneRecord> generate_dataset(const SceneSpec& spec, int64_t count,
                                          int64_t first_id = 0);

// Directory layout: manifest.txt (spec echo + scene ids), and per scene
// scene_<id>.img (raw binary doubles) + scene_<id>.ann (structured text).
void save_dataset(const std::vector<SceneRecord>& records,
                  const SceneSpec& spec, const std::string& dir);
Dataset load_dataset(const std::string& dir);

// SHA-1 of the manifest bytes; run records carry it to pin the dataset.
std::string dataset_manifest_hash(const std::string& dir);

}  // namespace fscascade
