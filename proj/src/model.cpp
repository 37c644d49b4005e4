#include "fscascade/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "fscascade/kernels.hpp"
#include "fscascade/rng.hpp"

namespace fscascade {

namespace {

constexpr uint64_t kInitStream = 0x1217;

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

}  // namespace

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kBaseline: return "baseline";
    case Variant::kCfs: return "cfs";
    case Variant::kLfs: return "lfs";
    case Variant::kFscascade: return "fscascade";
  }
  return "?";
}

std::optional<Variant> parse_variant(const std::string& name) {
  if (name == "baseline") return Variant::kBaseline;
  if (name == "cfs") return Variant::kCfs;
  if (name == "lfs") return Variant::kLfs;
  if (name == "fscascade") return Variant::kFscascade;
  return std::nullopt;
}

void validate_config(const ModelConfig& cfg) {
  if (cfg.num_stages != 1 && cfg.num_stages != 3) {
    fail("config: num_stages must be 1 or 3");
  }
  if (cfg.num_classes < 1) fail("config: num_classes must be >= 1");
  if (cfg.channels < 8) fail("config: channels must be >= 8");
  if (cfg.hidden_width < 1) fail("config: hidden_width must be >= 1");
  if (cfg.pooled_size < 1) fail("config: pooled_size must be >= 1");
  if (cfg.num_blocks < 1) fail("config: num_blocks must be >= 1");
  const int64_t stride = int64_t{1} << cfg.num_blocks;
  if (cfg.input_h % stride != 0 || cfg.input_w % stride != 0) {
    fail("config: input size must be divisible by 2^num_blocks");
  }
  if (static_cast<int64_t>(cfg.fg_thresholds.size()) != cfg.num_stages) {
    fail("config: need one fg_threshold per stage");
  }
  for (size_t i = 0; i < cfg.fg_thresholds.size(); ++i) {
    const double t = cfg.fg_thresholds[i];
    if (t <= 0.0 || t >= 1.0) fail("config: fg_thresholds must lie in (0,1)");
    if (i > 0 && t <= cfg.fg_thresholds[i - 1]) {
      fail("config: fg_thresholds must strictly increase across stages");
    }
  }
  if (static_cast<int64_t>(cfg.delta_stds.size()) != cfg.num_stages) {
    fail("config: need one delta_stds quad per stage");
  }
  for (const auto& stds : cfg.delta_stds) {
    for (double s : stds) {
      if (s <= 0.0) fail("config: delta_stds must be positive");
    }
  }
}

KvMap config_to_kv(const ModelConfig& cfg) {
  KvMap kv;
  kv.set("format", "fscascade-model");
  kv.set("variant", variant_name(cfg.variant));
  kv.set_int("stages", cfg.num_stages);
  kv.set_int("num_classes", cfg.num_classes);
  kv.set_int("channels", cfg.channels);
  kv.set_int("hidden_width", cfg.hidden_width);
  kv.set_int("pooled_size", cfg.pooled_size);
  kv.set_int("input_h", cfg.input_h);
  kv.set_int("input_w", cfg.input_w);
  kv.set_int("num_blocks", cfg.num_blocks);
  kv.set_doubles("fg_thresholds", cfg.fg_thresholds);
  for (int64_t i = 0; i < cfg.num_stages; ++i) {
    const auto& s = cfg.delta_stds[static_cast<size_t>(i)];
    kv.set_doubles("delta_stds_stage" + std::to_string(i + 1),
                   {s[0], s[1], s[2], s[3]});
  }
  kv.set_int("detach_shared_cls", cfg.detach_shared_cls ? 1 : 0);
  return kv;
}

ModelConfig config_from_kv(const KvMap& kv) {
  if (kv.get("format") != "fscascade-model") {
    throw std::runtime_error("not a model config (format key mismatch)");
  }
  ModelConfig cfg;
  const auto v = parse_variant(kv.get("variant"));
  if (!v) throw std::runtime_error("unknown variant: " + kv.get("variant"));
  cfg.variant = *v;
  cfg.num_stages = kv.get_int("stages");
  cfg.num_classes = kv.get_int("num_classes");
  cfg.channels = kv.get_int("channels");
  cfg.hidden_width = kv.get_int("hidden_width");
  cfg.pooled_size = kv.get_int("pooled_size");
  cfg.input_h = kv.get_int("input_h");
  cfg.input_w = kv.get_int("input_w");
  cfg.num_blocks = kv.get_int("num_blocks");
  cfg.fg_thresholds = kv.get_doubles("fg_thresholds");
  cfg.delta_stds.clear();
  for (int64_t i = 0; i < cfg.num_stages; ++i) {
    const auto v4 = kv.get_doubles("delta_stds_stage" + std::to_string(i + 1));
    if (v4.size() != 4) {
      throw std::runtime_error("delta_stds_stage" + std::to_string(i + 1) +
                               " needs 4 values");
    }
    cfg.delta_stds.push_back({v4[0], v4[1], v4[2], v4[3]});
  }
  cfg.detach_shared_cls = kv.get_int("detach_shared_cls") != 0;
  validate_config(cfg);
  return cfg;
}

void save_model_config(const std::string& path, const ModelConfig& cfg) {
  write_kv_file(path, config_to_kv(cfg));
}

ModelConfig load_model_config(const std::string& path) {
  try {
    return config_from_kv(read_kv_file(path));
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

bool CascadeModel::uses_conv_box_trunk() const {
  return cfg_.num_stages > 1 && cfg_.variant != Variant::kBaseline;
}

CascadeModel::CascadeModel(const ModelConfig& cfg) : cfg_(cfg) {
  validate_config(cfg_);
  const int64_t c = cfg_.channels;
  const int64_t hidden = cfg_.hidden_width;
  const int64_t flat = c * cfg_.pooled_size * cfg_.pooled_size;
  const int64_t k1 = cfg_.num_classes + 1;

  auto zero = [](int64_t n) { return std::vector<double>(static_cast<size_t>(n), 0.0); };

  int64_t in_ch = 3;
  for (int64_t b = 1; b <= cfg_.num_blocks; ++b) {
    const std::string p = "backbone.block" + std::to_string(b) + ".conv";
    params_.create(p + ".w", {c, in_ch, 3, 3}, zero(c * in_ch * 9));
    params_.create(p + ".b", {c}, zero(c));
    in_ch = c;
  }
  for (int64_t s = 1; s <= cfg_.num_stages; ++s) {
    const std::string p = "stage" + std::to_string(s) + ".";
    params_.create(p + "cls_fc1.w", {flat, hidden}, zero(flat * hidden));
    params_.create(p + "cls_fc1.b", {hidden}, zero(hidden));
    params_.create(p + "cls_fc2.w", {hidden, hidden}, zero(hidden * hidden));
    params_.create(p + "cls_fc2.b", {hidden}, zero(hidden));
    params_.create(p + "cls_pred.w", {hidden, k1}, zero(hidden * k1));
    params_.create(p + "cls_pred.b", {k1}, zero(k1));
    if (uses_conv_box_trunk()) {
      // Stage 1 carries two 3x3 convs; later stages one 3x3 plus one 1x1.
      params_.create(p + "box_conv1.w", {c, c, 3, 3}, zero(c * c * 9));
      params_.create(p + "box_conv1.b", {c}, zero(c));
      const int64_t k2 = s == 1 ? 3 : 1;
      params_.create(p + "box_conv2.w", {c, c, k2, k2}, zero(c * c * k2 * k2));
      params_.create(p + "box_conv2.b", {c}, zero(c));
      params_.create(p + "box_pred.w", {flat, 4}, zero(flat * 4));
      params_.create(p + "box_pred.b", {4}, zero(4));
    } else {
      params_.create(p + "box_pred.w", {hidden, 4}, zero(hidden * 4));
      params_.create(p + "box_pred.b", {4}, zero(4));
    }
  }
}

void CascadeModel::init_params(uint64_t seed) {
  Rng rng(mix_seed(seed, kInitStream));
  for (const std::string& name : params_.names()) {
    Parameter& p = params_.at(name);
    const auto& shape = p.tensor->shape;
    std::fill(p.momentum.begin(), p.momentum.end(), 0.0);
    if (shape.size() == 1) {  // biases stay zero
      std::fill(p.tensor->value.begin(), p.tensor->value.end(), 0.0);
      continue;
    }
    double stddev;
    if (name.find(".cls_pred.") != std::string::npos) {
      stddev = 0.01;
    } else if (name.find(".box_pred.") != std::string::npos) {
      stddev = 0.001;
    } else if (shape.size() == 4) {  // conv: He over fan-in
      stddev = std::sqrt(2.0 / static_cast<double>(shape[1] * shape[2] * shape[3]));
    } else {  // fc: He over fan-in
      stddev = std::sqrt(2.0 / static_cast<double>(shape[0]));
    }
    for (double& v : p.tensor->value) v = stddev * rng.normal();
  }
}

Tensor backbone_forward(const CascadeModel& m, const Tensor& image) {
  const ModelConfig& cfg = m.config();
  if (image->shape.size() != 4 || image->shape[0] != 1 ||
      image->shape[1] != 3 || image->shape[2] != cfg.input_h ||
      image->shape[3] != cfg.input_w) {
    fail("backbone_forward: image " + shape_str(image->shape) +
         " does not match config [1,3," + std::to_string(cfg.input_h) + "," +
         std::to_string(cfg.input_w) + "]");
  }
  Tensor x = image;
  for (int64_t b = 1; b <= cfg.num_blocks; ++b) {
    const std::string p = "backbone.block" + std::to_string(b) + ".conv";
    x = relu(conv2d(x, m.params().at(p + ".w").tensor,
                    m.params().at(p + ".b").tensor, /*stride=*/2, /*pad=*/1));
  }
  return x;
}

Tensor roi_pool(const Tensor& feature, const std::vector<Box>& boxes,
                int64_t out_size, double spatial_scale) {
  if (feature->shape.size() != 4 || feature->shape[0] != 1) {
    fail("roi_pool: want feature [1,C,h,w], got " + shape_str(feature->shape));
  }
  const int64_t c = feature->shape[1];
  const int64_t fh = feature->shape[2];
  const int64_t fw = feature->shape[3];
  const int64_t n = static_cast<int64_t>(boxes.size());
  std::vector<double> rois(static_cast<size_t>(n * 4));
  for (int64_t i = 0; i < n; ++i) {
    rois[i * 4 + 0] = boxes[i].x1 * spatial_scale;
    rois[i * 4 + 1] = boxes[i].y1 * spatial_scale;
    rois[i * 4 + 2] = boxes[i].x2 * spatial_scale;
    rois[i * 4 + 3] = boxes[i].y2 * spatial_scale;
  }
  std::vector<double> y(static_cast<size_t>(n * c * out_size * out_size));
  kernels::roi_pool_forward(feature->value.data(), c, fh, fw, rois.data(), n,
                            out_size, y.data());
  return make_node(
      {n, c, out_size, out_size}, std::move(y), {feature},
      [rois = std::move(rois), n, out_size, c, fh, fw](TensorNode& self) {
        TensorNode& f = *self.inputs[0];
        if (!f.requires_grad) return;
        f.ensure_grad();
        kernels::roi_pool_backward(self.grad.data(), rois.data(), n, out_size,
                                   c, fh, fw, f.grad.data());
      });
}

namespace {

// Jitters `gt` along a random direction until its IoU with the original hits
// `target` (bisection on the magnitude; IoU decreases monotonically along a
// ray for the magnitudes involved).
Box jitter_to_iou(const Box& gt, double target, double image_w, double image_h,
                  Rng& rng) {
  const double w = gt.width(), h = gt.height();
  const double cx = gt.x1 + 0.5 * w, cy = gt.y1 + 0.5 * h;
  for (int attempt = 0; attempt < 20; ++attempt) {
    const double d0 = rng.normal(), d1 = rng.normal();
    const double d2 = 0.5 * rng.normal(), d3 = 0.5 * rng.normal();
    auto at = [&](double a) {
      const double nw = w * std::exp(a * d2), nh = h * std::exp(a * d3);
      const double nx = cx + a * d0 * w, ny = cy + a * d1 * h;
      return Box{nx - 0.5 * nw, ny - 0.5 * nh, nx + 0.5 * nw, ny + 0.5 * nh};
    };
    double hi = 0.05;
    while (iou(at(hi), gt) > target && hi < 8.0) hi *= 2.0;
    if (iou(at(hi), gt) > target) continue;  // direction too tame, resample
    double lo = 0.0;
    for (int it = 0; it < 50; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (iou(at(mid), gt) > target) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    const Box cand = clip_to_image(at(0.5 * (lo + hi)), image_w, image_h);
    // Clipping can spoil the overlap; keep the stratification honest.
    if (cand.area() > 1.0 && iou(cand, gt) >= std::max(0.05, target - 0.25)) {
      return cand;
    }
  }
  return gt;  // rejection budget exhausted: degrade to an exact copy
}

}  // namespace

std::vector<Box> sample_proposals(const std::vector<LabeledBox>& gts,
                                  double image_w, double image_h,
                                  const ProposalConfig& cfg, uint64_t seed) {
  if (gts.empty()) fail("sample_proposals: need at least one GT box");
  if (cfg.iou_min <= 0.0 || cfg.iou_max > 1.0 || cfg.iou_min > cfg.iou_max) {
    fail("sample_proposals: bad IoU band");
  }
  Rng rng(mix_seed(seed, 0x9b0a));
  std::vector<Box> out;
  out.reserve(gts.size() * static_cast<size_t>(cfg.jitter_per_gt) +
              static_cast<size_t>(cfg.background));
  for (const LabeledBox& g : gts) {
    for (int64_t j = 0; j < cfg.jitter_per_gt; ++j) {
      // Stratified target IoU, then shrunk toward 1 by (1 - max_jitter).
      const double u = rng.uniform();
      const double band = (cfg.iou_max - cfg.iou_min) /
                          static_cast<double>(cfg.jitter_per_gt);
      const double t0 = cfg.iou_min + (static_cast<double>(j) + u) * band;
      const double target = 1.0 - cfg.max_jitter * (1.0 - t0);
      if (target >= 1.0) {
        out.push_back(g.box);
        continue;
      }
      out.push_back(jitter_to_iou(g.box, target, image_w, image_h, rng));
    }
  }
  for (int64_t r = 0; r < cfg.background; ++r) {
    const double w = rng.uniform(0.08, 0.5) * image_w;
    const double h = rng.uniform(0.08, 0.5) * image_h;
    const double x1 = rng.uniform(0.0, image_w - w);
    const double y1 = rng.uniform(0.0, image_h - h);
    out.push_back(Box{x1, y1, x1 + w, y1 + h});
  }
  return out;
}

std::vector<Assignment> assign_targets(const std::vector<Box>& proposals,
                                       const std::vector<LabeledBox>& gts,
                                       double fg_iou_threshold,
                                       const std::array<double, 4>& stds) {
  if (fg_iou_threshold <= 0.0 || fg_iou_threshold >= 1.0) {
    fail("assign_targets: threshold must be in (0,1)");
  }
  std::vector<Assignment> out(proposals.size());
  for (size_t i = 0; i < proposals.size(); ++i) {
    double best = 0.0;
    size_t best_gt = gts.size();
    for (size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(proposals[i], gts[g].box);
      if (v > best) {
        best = v;
        best_gt = g;
      }
    }
    if (best_gt < gts.size() && best >= fg_iou_threshold) {
      out[i].label = gts[best_gt].class_id;
      out[i].foreground = true;
      out[i].deltas = encode_deltas(proposals[i], gts[best_gt].box, stds);
    }
  }
  return out;
}

namespace {

Tensor fc_layer(const CascadeModel& m, const std::string& prefix,
                const Tensor& x) {
  return fully_connected(x, m.params().at(prefix + ".w").tensor,
                         m.params().at(prefix + ".b").tensor);
}

Tensor conv_layer(const CascadeModel& m, const std::string& prefix,
                  const Tensor& x, int64_t pad) {
  return conv2d(x, m.params().at(prefix + ".w").tensor,
                m.params().at(prefix + ".b").tensor, /*stride=*/1, pad);
}

bool shares_cls_paths(Variant v) {
  return v == Variant::kCfs || v == Variant::kFscascade;
}

bool shares_box_chain(Variant v) {
  return v == Variant::kLfs || v == Variant::kFscascade;
}

}  // namespace

Tensor cfs_forward(const CascadeModel& m, int64_t stage,
                   const Tensor& flat_pooled) {
  const ModelConfig& cfg = m.config();
  if (stage < 1 || stage > cfg.num_stages) {
    fail("cfs_forward: stage " + std::to_string(stage) + " out of range");
  }
  const int64_t first = shares_cls_paths(cfg.variant) ? 1 : stage;
  std::vector<Tensor> paths;
  for (int64_t j = first; j <= stage; ++j) {
    const std::string p = "stage" + std::to_string(j) + ".";
    Tensor h = relu(fc_layer(m, p + "cls_fc1", flat_pooled));
    h = relu(fc_layer(m, p + "cls_fc2", h));
    if (j < stage && cfg.detach_shared_cls) h = detach(h);
    paths.push_back(h);
  }
  return paths.size() == 1 ? paths[0] : elementwise_sum(paths);
}

Tensor stage_cls_logits(const CascadeModel& m, int64_t stage,
                        const Tensor& flat_pooled) {
  const std::string p = "stage" + std::to_string(stage) + ".";
  return fc_layer(m, p + "cls_pred", cfs_forward(m, stage, flat_pooled));
}

Tensor lfs_forward(const CascadeModel& m, int64_t stage, const Tensor& pooled,
                   const Tensor& prev_box_feature) {
  const ModelConfig& cfg = m.config();
  if (!m.uses_conv_box_trunk()) {
    fail("lfs_forward: variant '" + variant_name(cfg.variant) +
         "' with " + std::to_string(cfg.num_stages) +
         " stage(s) has no convolutional box trunk");
  }
  if (stage < 1 || stage > cfg.num_stages) {
    fail("lfs_forward: stage " + std::to_string(stage) + " out of range");
  }
  const std::string p = "stage" + std::to_string(stage) + ".";
  if (stage == 1) {
    Tensor t = relu(conv_layer(m, p + "box_conv1", pooled, /*pad=*/1));
    return relu(conv_layer(m, p + "box_conv2", t, /*pad=*/1));
  }
  if (shares_box_chain(cfg.variant)) {
    if (!prev_box_feature) {
      fail("lfs_forward: stage " + std::to_string(stage) +
           " needs the previous stage's box feature");
    }
    Tensor t = relu(conv_layer(m, p + "box_conv1", prev_box_feature, /*pad=*/1));
    Tensor r = conv_layer(m, p + "box_conv2", t, /*pad=*/0);
    return elementwise_sum({pooled, r});  // residual, no trailing ReLU
  }
  // cfs: the stage's own stack on its own pooled features, no residual.
  Tensor t = relu(conv_layer(m, p + "box_conv1", pooled, /*pad=*/1));
  return relu(conv_layer(m, p + "box_conv2", t, /*pad=*/0));
}

std::vector<StageOutput> cascade_forward(const CascadeModel& m,
                                         const Tensor& image,
                                         const std::vector<Box>& proposals) {
  if (proposals.empty()) fail("cascade_forward: no proposals");
  const ModelConfig& cfg = m.config();
  const double scale = 1.0 / static_cast<double>(int64_t{1} << cfg.num_blocks);
  const int64_t n = static_cast<int64_t>(proposals.size());
  const int64_t flat_dim = cfg.channels * cfg.pooled_size * cfg.pooled_size;

  Tensor feat = backbone_forward(m, image);
  std::vector<StageOutput> outputs;
  std::vector<Box> boxes = proposals;
  Tensor prev_box_feature;
  for (int64_t s = 1; s <= cfg.num_stages; ++s) {
    const std::string p = "stage" + std::to_string(s) + ".";
    StageOutput out;
    out.input_boxes = boxes;
    out.pooled = roi_pool(feat, boxes, cfg.pooled_size, scale);
    Tensor flat = reshape(out.pooled, {n, flat_dim});
    Tensor cls_feat = cfs_forward(m, s, flat);
    out.class_logits = fc_layer(m, p + "cls_pred", cls_feat);
    if (m.uses_conv_box_trunk()) {
      out.box_feature = lfs_forward(m, s, out.pooled, prev_box_feature);
      out.deltas =
          fc_layer(m, p + "box_pred", reshape(out.box_feature, {n, flat_dim}));
    } else {
      out.deltas = fc_layer(m, p + "box_pred", cls_feat);
    }
    out.refined_boxes.resize(static_cast<size_t>(n));
    const auto& stds = cfg.delta_stds[static_cast<size_t>(s - 1)];
    for (int64_t k = 0; k < n; ++k) {
      const std::array<double, 4> d = {
          out.deltas->value[k * 4 + 0], out.deltas->value[k * 4 + 1],
          out.deltas->value[k * 4 + 2], out.deltas->value[k * 4 + 3]};
      out.refined_boxes[static_cast<size_t>(k)] =
          decode_deltas(boxes[static_cast<size_t>(k)], d, stds,
                        static_cast<double>(cfg.input_w),
                        static_cast<double>(cfg.input_h));
    }
    // Next stage consumes refined boxes as plain values: coordinate
    // gradients stop here, feature gradients continue through B_i.
    boxes = out.refined_boxes;
    prev_box_feature = out.box_feature;
    outputs.push_back(std::move(out));
  }
  return outputs;
}

std::map<std::string, int64_t> count_parameters(const CascadeModel& m) {
  std::map<std::string, int64_t> buckets = {
      {"backbone", 0},        {"cls_trunk", 0}, {"cls_predictors", 0},
      {"box_trunk", 0},       {"box_predictors", 0}, {"total", 0},
  };
  for (const std::string& name : m.params().names()) {
    const int64_t n = m.params().at(name).tensor->numel();
    if (name.rfind("backbone.", 0) == 0) {
      buckets["backbone"] += n;
    } else if (name.find(".cls_fc") != std::string::npos) {
      buckets["cls_trunk"] += n;
    } else if (name.find(".cls_pred.") != std::string::npos) {
      buckets["cls_predictors"] += n;
    } else if (name.find(".box_conv") != std::string::npos) {
      buckets["box_trunk"] += n;
    } else if (name.find(".box_pred.") != std::string::npos) {
      buckets["box_predictors"] += n;
    } else {
      fail("count_parameters: unbucketed parameter " + name);
    }
    buckets["total"] += n;
  }
  return buckets;
}

}  // namespace fscascade
