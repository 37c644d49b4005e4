#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fscascade/geometry.hpp"
#include "fscascade/tensor.hpp"
#include "fscascade/textkv.hpp"

// The cascade detector: small strided backbone, RoI pooling, controlled
// proposal sampling, per-stage target assignment and the four head variants:
//
//   baseline   per-stage FC trunk for classification; boxes share that trunk
//   cfs        classification features summed over preceding stages' FC
//              transforms (parallel paths); convolutional box trunk
//   lfs        serial residual conv chain for box features; plain per-stage
//              classification
//   fscascade  cfs + lfs combined
//
// With a single stage every variant collapses to the same FC-trunk head, so
// the four variants are interchangeable there.

namespace fscascade {

enum class Variant { kBaseline, kCfs, kLfs, kFscascade };

std::string variant_name(Variant v);
std::optional<Variant> parse_variant(const std::string& name);

struct ModelConfig {
  Variant variant = Variant::kFscascade;
  int64_t num_stages = 3;  // 1 or 3
  int64_t num_classes = 3;
  int64_t channels = 64;
  int64_t hidden_width = 256;
  int64_t pooled_size = 7;
  int64_t input_h = 96;
  int64_t input_w = 96;
  int64_t num_blocks = 3;  // stride-2 conv blocks; feature stride = 2^blocks
  std::vector<double> fg_thresholds = {0.5, 0.6, 0.7};
  std::vector<std::array<double, 4>> delta_stds = {
      {0.1, 0.1, 0.2, 0.2},
      {0.05, 0.05, 0.1, 0.1},
      {0.033, 0.033, 0.067, 0.067},
  };
  // Ablation switch: stop gradients from a stage's loss into the preceding
  // stages' shared classification transforms.
  bool detach_shared_cls = false;
};

// Throws std::invalid_argument describing the first violated constraint.
void validate_config(const ModelConfig& cfg);

KvMap config_to_kv(const ModelConfig& cfg);
ModelConfig config_from_kv(const KvMap& kv);
void save_model_config(const std::string& path, const ModelConfig& cfg);
ModelConfig load_model_config(const std::string& path);

class CascadeModel {
 public:
  // Creates all parameters zero-valued; call init_params for training.
  explicit CascadeModel(const ModelConfig& cfg);
  void init_params(uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // False for the baseline variant and for every 1-stage model: those use
  // the FC classification trunk for box regression instead.
  bool uses_conv_box_trunk() const;

 private:
  ModelConfig cfg_;
  ParamStore params_;
};

struct StageOutput {
  Tensor class_logits;            // [N, K+1]
  Tensor deltas;                  // [N, 4], class-agnostic
  std::vector<Box> refined_boxes;  // decoded + clipped, one per proposal
  Tensor box_feature;  // [N,C,p,p] B_i; null when the variant has no conv trunk
  Tensor pooled;       // [N,C,p,p] pooled on this stage's input boxes
  std::vector<Box> input_boxes;
};

Tensor backbone_forward(const CascadeModel& m, const Tensor& image);

// Align-style pooling: one bilinear sample per bin center. Boxes are image
// coordinates; spatial_scale maps them onto the feature grid. Differentiable
// w.r.t. feature values only; box coordinates are constants.
Tensor roi_pool(const Tensor& feature, const std::vector<Box>& boxes,
                int64_t out_size, double spatial_scale);

struct ProposalConfig {
  int64_t jitter_per_gt = 8;
  int64_t background = 8;
  double iou_min = 0.3;  // jittered copies target IoUs stratified over
  double iou_max = 0.95;  // [iou_min, iou_max]
  double max_jitter = 1.0;  // 0 = exact GT copies, no jitter
};

// The stand-in for a region proposal network: per GT, jitter_per_gt copies
// whose IoU with the GT is stratified over [iou_min, iou_max], plus
// `background` uniform random boxes. Deterministic per seed.
std::vector<Box> sample_proposals(const std::vector<LabeledBox>& gts,
                                  double image_w, double image_h,
                                  const ProposalConfig& cfg, uint64_t seed);

struct Assignment {
  int64_t label = 0;  // 0 = background
  bool foreground = false;
  std::array<double, 4> deltas{};  // encoded regression target, fg only
};

std::vector<Assignment> assign_targets(const std::vector<Box>& proposals,
                                       const std::vector<LabeledBox>& gts,
                                       double fg_iou_threshold,
                                       const std::array<double, 4>& stds);

// Classification feature of stage `stage` (1-based) on flattened pooled
// features [N, C*p*p]: the sum over paths ReLU(W_j^2(ReLU(W_j^1(x)))) for
// j <= stage (cfs/fscascade) or the stage's own path only (baseline/lfs).
Tensor cfs_forward(const CascadeModel& m, int64_t stage,
                   const Tensor& flat_pooled);

// cfs_forward followed by the stage's class predictor.
Tensor stage_cls_logits(const CascadeModel& m, int64_t stage,
                        const Tensor& flat_pooled);

// Box feature B_i. Stage 1: ReLU(F_1^2(ReLU(F_1^1(pooled)))). Later stages:
// residual chain pooled + G(ReLU(F(B_{i-1}))) for lfs/fscascade, or the
// stage's own (non-residual) conv stack on pooled for cfs. Requires a conv
// box trunk (not the baseline variant).
Tensor lfs_forward(const CascadeModel& m, int64_t stage, const Tensor& pooled,
                   const Tensor& prev_box_feature);

// Full multi-stage pass. Boxes entering stage i+1 are stage i's refined
// boxes as plain values (gradients do not flow through coordinates); box
// FEATURES B_i do flow. refined_boxes[k] descends from proposals[k] at every
// stage.
std::vector<StageOutput> cascade_forward(const CascadeModel& m,
                                         const Tensor& image,
                                         const std::vector<Box>& proposals);

// Scalar-count audit per component: backbone, cls_trunk, cls_predictors,
// box_trunk, box_predictors, total.
std::map<std::string, int64_t> count_parameters(const CascadeModel& m);

}  // namespace fscascade
