#include "fscascade/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "fscascade/textkv.hpp"

namespace fscascade {

namespace {

constexpr uint64_t kProposalStream = 0xA1;
constexpr uint64_t kSubsampleStream = 0xB000;  // + stage index

}  // namespace

void validate_train_config(const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw std::invalid_argument("train config: epochs >= 1");
  if (cfg.base_lr <= 0.0) throw std::invalid_argument("train config: base_lr > 0");
  if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) {
    throw std::invalid_argument("train config: momentum in [0,1)");
  }
  if (cfg.fg_fraction <= 0.0 || cfg.fg_fraction >= 1.0) {
    throw std::invalid_argument("train config: fg_fraction in (0,1)");
  }
  if (cfg.rois_per_image < 1) {
    throw std::invalid_argument("train config: rois_per_image >= 1");
  }
  for (size_t i = 1; i < cfg.decay_epochs.size(); ++i) {
    if (cfg.decay_epochs[i] <= cfg.decay_epochs[i - 1]) {
      throw std::invalid_argument(
          "train config: decay_epochs must strictly increase");
    }
  }
  for (double w : cfg.stage_loss_weights) {
    if (w <= 0.0) {
      throw std::invalid_argument(
          "train config: stage_loss_weights must be positive");
    }
  }
}

double lr_at(double epoch, const TrainConfig& cfg) {
  if (epoch < cfg.warmup_epochs) return cfg.base_lr * cfg.decay_factor;
  double lr = cfg.base_lr;
  for (double d : cfg.decay_epochs) {
    if (epoch >= d) lr *= cfg.decay_factor;
  }
  return lr;
}

std::vector<int64_t> subsample_rois(const std::vector<Assignment>& assignments,
                                    int64_t rois_per_image, double fg_fraction,
                                    Rng& rng) {
  if (assignments.empty()) {
    throw std::invalid_argument("subsample_rois: zero proposals");
  }
  std::vector<int64_t> fg, bg;
  for (size_t i = 0; i < assignments.size(); ++i) {
    (assignments[i].foreground ? fg : bg).push_back(static_cast<int64_t>(i));
  }
  rng.shuffle(fg);
  rng.shuffle(bg);
  const int64_t want_fg = std::min<int64_t>(
      static_cast<int64_t>(std::llround(fg_fraction *
                                        static_cast<double>(rois_per_image))),
      static_cast<int64_t>(fg.size()));
  int64_t take_fg = want_fg;
  int64_t take_bg = std::min<int64_t>(rois_per_image - take_fg,
                                      static_cast<int64_t>(bg.size()));
  // Top up from the deeper bucket when the other ran short.
  take_fg = std::min<int64_t>(rois_per_image - take_bg,
                              static_cast<int64_t>(fg.size()));
  std::vector<int64_t> out;
  out.insert(out.end(), fg.begin(), fg.begin() + take_fg);
  out.insert(out.end(), bg.begin(), bg.begin() + take_bg);
  std::sort(out.begin(), out.end());
  return out;
}

StageLosses stage_loss(const StageOutput& out,
                       const std::vector<Assignment>& assignments,
                       const std::vector<int64_t>& sampled) {
  StageLosses losses;
  std::vector<int64_t> labels;
  labels.reserve(sampled.size());
  std::vector<int64_t> fg_rows;
  std::vector<double> fg_targets;
  for (int64_t idx : sampled) {
    const Assignment& a = assignments[static_cast<size_t>(idx)];
    labels.push_back(a.label);
    if (a.foreground) {
      fg_rows.push_back(idx);
      fg_targets.insert(fg_targets.end(), a.deltas.begin(), a.deltas.end());
    }
  }
  losses.cls =
      softmax_cross_entropy(gather_rows(out.class_logits, sampled), labels);
  if (fg_rows.empty()) {
    losses.box = constant({1}, {0.0});
  } else {
    Tensor target = constant({static_cast<int64_t>(fg_rows.size()), 4},
                             std::move(fg_targets));
    losses.box = smooth_l1(gather_rows(out.deltas, fg_rows), target);
  }
  return losses;
}

TrainResult train(CascadeModel& model, const std::vector<SceneRecord>& dataset,
                  const TrainConfig& cfg, const std::string& metric_log_path) {
  validate_train_config(cfg);
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  const ModelConfig& mc = model.config();
  if (static_cast<int64_t>(cfg.stage_loss_weights.size()) < mc.num_stages) {
    throw std::invalid_argument("train: need a loss weight per stage");
  }

  std::ofstream log;
  if (!metric_log_path.empty()) {
    log.open(metric_log_path, std::ios::trunc);
    if (!log) {
      throw std::runtime_error("cannot write metric log: " + metric_log_path);
    }
    log << "# fscascade metric log: tab-separated, one record per epoch\n";
    log << "epoch\tlr";
    for (int64_t s = 1; s <= mc.num_stages; ++s) {
      log << "\ts" << s << "_cls\ts" << s << "_box";
    }
    log << "\ttotal\twall_s\n";
  }

  TrainResult result;
  const int64_t num_images = static_cast<int64_t>(dataset.size());
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.cls_loss.assign(static_cast<size_t>(mc.num_stages), 0.0);
    rec.box_loss.assign(static_cast<size_t>(mc.num_stages), 0.0);
    const auto e0 = std::chrono::steady_clock::now();
    for (int64_t img = 0; img < num_images; ++img) {
      const SceneRecord& scene = dataset[static_cast<size_t>(img)];
      const double epoch_f =
          static_cast<double>(epoch) +
          static_cast<double>(img) / static_cast<double>(num_images);
      rec.lr = lr_at(epoch_f, cfg);

      const std::vector<Box> proposals = sample_proposals(
          scene.gts, static_cast<double>(mc.input_w),
          static_cast<double>(mc.input_h), cfg.proposals,
          mix_seed(cfg.seed, static_cast<uint64_t>(epoch),
                   static_cast<uint64_t>(img), kProposalStream));
      Tensor image =
          reshape(scene.image, {1, 3, mc.input_h, mc.input_w});
      const std::vector<StageOutput> outs =
          cascade_forward(model, image, proposals);

      std::vector<Tensor> terms;
      for (int64_t s = 0; s < mc.num_stages; ++s) {
        const StageOutput& out = outs[static_cast<size_t>(s)];
        const std::vector<Assignment> assigned = assign_targets(
            out.input_boxes, scene.gts,
            mc.fg_thresholds[static_cast<size_t>(s)],
            mc.delta_stds[static_cast<size_t>(s)]);
        Rng srng(mix_seed(cfg.seed, static_cast<uint64_t>(epoch),
                          static_cast<uint64_t>(img),
                          kSubsampleStream + static_cast<uint64_t>(s)));
        const std::vector<int64_t> sampled =
            subsample_rois(assigned, cfg.rois_per_image, cfg.fg_fraction, srng);
        const StageLosses losses = stage_loss(out, assigned, sampled);
        const double w = cfg.stage_loss_weights[static_cast<size_t>(s)];
        terms.push_back(scale(losses.cls, w));
        terms.push_back(scale(losses.box, w));
        rec.cls_loss[static_cast<size_t>(s)] += losses.cls->value[0];
        rec.box_loss[static_cast<size_t>(s)] += losses.box->value[0];
      }
      const Tensor total = elementwise_sum(terms);
      if (!std::isfinite(total->value[0])) {
        throw std::runtime_error(
            "train: non-finite loss at epoch " + std::to_string(epoch) +
            ", image " + std::to_string(img) + " (iteration " +
            std::to_string(result.iterations) + ")");
      }
      rec.total_loss += total->value[0];
      const GradientMap grads = backward(total, model.params());
      sgd_step(model.params(), grads, rec.lr, cfg.momentum, cfg.weight_decay);
      ++result.iterations;
    }
    for (int64_t s = 0; s < mc.num_stages; ++s) {
      rec.cls_loss[static_cast<size_t>(s)] /= static_cast<double>(num_images);
      rec.box_loss[static_cast<size_t>(s)] /= static_cast<double>(num_images);
    }
    rec.total_loss /= static_cast<double>(num_images);
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - e0)
            .count();
    if (log.is_open()) {
      log << rec.epoch << "\t" << format_double(rec.lr);
      for (int64_t s = 0; s < mc.num_stages; ++s) {
        log << "\t" << format_double(rec.cls_loss[static_cast<size_t>(s)])
            << "\t" << format_double(rec.box_loss[static_cast<size_t>(s)]);
      }
      log << "\t" << format_double(rec.total_loss) << "\t"
          << format_double(rec.wall_seconds) << "\n";
      log.flush();
    }
    result.epochs.push_back(std::move(rec));
  }
  return result;
}

}  // namespace fscascade
