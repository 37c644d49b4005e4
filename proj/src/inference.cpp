#include "fscascade/inference.hpp"

#include <cmath>
#include <stdexcept>

#include "fscascade/rng.hpp"

namespace fscascade {

namespace {

constexpr uint64_t kEvalProposalStream = 0xE7A1;

std::vector<double> softmax_rows(const Tensor& logits) {
  const int64_t n = logits->shape[0], k = logits->shape[1];
  std::vector<double> probs(logits->value.size());
  for (int64_t i = 0; i < n; ++i) {
    const double* row = logits->value.data() + i * k;
    double m = row[0];
    for (int64_t j = 1; j < k; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (int64_t j = 0; j < k; ++j) z += std::exp(row[j] - m);
    for (int64_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(row[j] - m) / z;
  }
  return probs;
}

std::vector<ScoredBox> score_and_suppress(const std::vector<Box>& boxes,
                                          const std::vector<double>& probs,
                                          int64_t num_classes,
                                          const InferSettings& settings) {
  std::vector<ScoredBox> raw;
  const int64_t k = num_classes + 1;
  for (size_t i = 0; i < boxes.size(); ++i) {
    for (int64_t c = 1; c <= num_classes; ++c) {  // class 0 is background
      const double p = probs[static_cast<int64_t>(i) * k + c];
      if (p >= settings.score_thresh) {
        raw.push_back(ScoredBox{boxes[i], p, c});
      }
    }
  }
  return nms(raw, settings.nms_thresh);
}

}  // namespace

std::string infer_mode_name(InferMode mode) {
  switch (mode) {
    case InferMode::kEnsemble: return "ensemble";
    case InferMode::kStage1: return "stage1";
    case InferMode::kStage2: return "stage2";
    case InferMode::kStage3: return "stage3";
  }
  return "?";
}

std::optional<InferMode> parse_infer_mode(const std::string& name) {
  if (name == "ensemble") return InferMode::kEnsemble;
  if (name == "stage1") return InferMode::kStage1;
  if (name == "stage2") return InferMode::kStage2;
  if (name == "stage3") return InferMode::kStage3;
  return std::nullopt;
}

std::vector<ScoredBox> detections_from_outputs(
    const CascadeModel& m, const std::vector<StageOutput>& outs,
    InferMode mode, const InferSettings& settings) {
  const ModelConfig& cfg = m.config();
  const int64_t stages = cfg.num_stages;
  if (mode != InferMode::kEnsemble) {
    const int64_t s = static_cast<int64_t>(mode);
    if (s > stages) {
      throw std::invalid_argument("infer: mode " + infer_mode_name(mode) +
                                  " needs " + std::to_string(s) +
                                  " stages, model has " +
                                  std::to_string(stages));
    }
    const StageOutput& out = outs[static_cast<size_t>(s - 1)];
    return score_and_suppress(out.refined_boxes,
                              softmax_rows(out.class_logits), cfg.num_classes,
                              settings);
  }
  // Ensemble: final-stage boxes; mean over every stage's classifier applied
  // to the final stage's input proposals' pooled features.
  const StageOutput& last = outs.back();
  const int64_t n = last.class_logits->shape[0];
  const int64_t k = cfg.num_classes + 1;
  const int64_t flat_dim = cfg.channels * cfg.pooled_size * cfg.pooled_size;
  std::vector<double> mean_probs(static_cast<size_t>(n * k), 0.0);
  {
    NoGradGuard frozen;
    Tensor flat = reshape(last.pooled, {n, flat_dim});
    for (int64_t s = 1; s <= stages; ++s) {
      // The last stage's logits on these features are already computed.
      const std::vector<double> probs =
          s == stages ? softmax_rows(last.class_logits)
                      : softmax_rows(stage_cls_logits(m, s, flat));
      for (size_t i = 0; i < mean_probs.size(); ++i) mean_probs[i] += probs[i];
    }
  }
  for (double& p : mean_probs) p /= static_cast<double>(stages);
  return score_and_suppress(last.refined_boxes, mean_probs, cfg.num_classes,
                            settings);
}

std::vector<ScoredBox> infer(const CascadeModel& m, const Tensor& image,
                             const std::vector<Box>& proposals, InferMode mode,
                             const InferSettings& settings) {
  NoGradGuard frozen;
  const std::vector<StageOutput> outs = cascade_forward(m, image, proposals);
  return detections_from_outputs(m, outs, mode, settings);
}

std::map<InferMode, std::vector<ScoredBox>> infer_all_modes(
    const CascadeModel& m, const Tensor& image,
    const std::vector<Box>& proposals, const InferSettings& settings) {
  NoGradGuard frozen;
  const std::vector<StageOutput> outs = cascade_forward(m, image, proposals);
  std::map<InferMode, std::vector<ScoredBox>> result;
  for (int64_t s = 1; s <= m.config().num_stages; ++s) {
    const InferMode mode = static_cast<InferMode>(s);
    result[mode] = detections_from_outputs(m, outs, mode, settings);
  }
  result[InferMode::kEnsemble] =
      detections_from_outputs(m, outs, InferMode::kEnsemble, settings);
  return result;
}

std::map<InferMode, std::vector<Detection>> evaluate_dataset_all_modes(
    const CascadeModel& m, const std::vector<SceneRecord>& records,
    const ProposalConfig& proposal_cfg, uint64_t seed,
    const InferSettings& settings) {
  const ModelConfig& cfg = m.config();
  std::map<InferMode, std::vector<Detection>> result;
  for (const SceneRecord& rec : records) {
    const std::vector<Box> proposals = sample_proposals(
        rec.gts, static_cast<double>(cfg.input_w),
        static_cast<double>(cfg.input_h), proposal_cfg,
        mix_seed(seed, static_cast<uint64_t>(rec.id), kEvalProposalStream));
    Tensor image = reshape(rec.image, {1, 3, cfg.input_h, cfg.input_w});
    for (auto& [mode, dets] : infer_all_modes(m, image, proposals, settings)) {
      for (const ScoredBox& d : dets) {
        result[mode].push_back(Detection{rec.id, d});
      }
    }
  }
  return result;
}

std::vector<Detection> evaluate_dataset(const CascadeModel& m,
                                        const std::vector<SceneRecord>& records,
                                        const ProposalConfig& proposal_cfg,
                                        uint64_t seed, InferMode mode,
                                        const InferSettings& settings) {
  const ModelConfig& cfg = m.config();
  if (mode != InferMode::kEnsemble &&
      static_cast<int64_t>(mode) > cfg.num_stages) {
    throw std::invalid_argument("evaluate_dataset: mode " +
                                infer_mode_name(mode) + " exceeds the model's " +
                                std::to_string(cfg.num_stages) + " stage(s)");
  }
  std::vector<Detection> out;
  for (const SceneRecord& rec : records) {
    const std::vector<Box> proposals = sample_proposals(
        rec.gts, static_cast<double>(cfg.input_w),
        static_cast<double>(cfg.input_h), proposal_cfg,
        mix_seed(seed, static_cast<uint64_t>(rec.id), kEvalProposalStream));
    Tensor image = reshape(rec.image, {1, 3, cfg.input_h, cfg.input_w});
    for (const ScoredBox& d : infer(m, image, proposals, mode, settings)) {
      out.push_back(Detection{rec.id, d});
    }
  }
  return out;
}

}  // namespace fscascade
