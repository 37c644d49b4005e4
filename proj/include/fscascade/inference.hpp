#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fscascade/metrics.hpp"
#include "fscascade/model.hpp"
#include "fscascade/synth.hpp"

// Inference modes. stageK scores boxes with stage K's classifier on stage
// K's own pass; ensemble keeps the final stage's boxes and averages the
// per-stage classifiers' softmax outputs, each re-applied to the final
// stage's input proposals' pooled features ("the testing ensemble").

namespace fscascade {

enum class InferMode { kEnsemble = 0, kStage1 = 1, kStage2 = 2, kStage3 = 3 };

std::string infer_mode_name(InferMode mode);
std::optional<InferMode> parse_infer_mode(const std::string& name);

struct InferSettings {
  double score_thresh = 0.05;
  double nms_thresh = 0.5;
};

// Detections for one image from an already-computed cascade pass.
std::vector<ScoredBox> detections_from_outputs(
    const CascadeModel& m, const std::vector<StageOutput>& outs,
    InferMode mode, const InferSettings& settings);

std::vector<ScoredBox> infer(const CascadeModel& m, const Tensor& image,
                             const std::vector<Box>& proposals, InferMode mode,
                             const InferSettings& settings = {});

// One forward pass, every stage mode plus the ensemble.
std::map<InferMode, std::vector<ScoredBox>> infer_all_modes(
    const CascadeModel& m, const Tensor& image,
    const std::vector<Box>& proposals, const InferSettings& settings = {});

// Runs the whole eval set with seeded proposal sampling (image id keyed).
std::map<InferMode, std::vector<Detection>> evaluate_dataset_all_modes(
    const CascadeModel& m, const std::vector<SceneRecord>& records,
    const ProposalConfig& proposal_cfg, uint64_t seed,
    const InferSettings& settings = {});

std::vector<Detection> evaluate_dataset(const CascadeModel& m,
                                        const std::vector<SceneRecord>& records,
                                        const ProposalConfig& proposal_cfg,
                                        uint64_t seed, InferMode mode,
                                        const InferSettings& settings = {});

}  // namespace fscascade
