// Operator surface: generate synthetic detection data, train the cascade
// variants, evaluate checkpoints, and emit the diagnostic tables (AP sweeps,
// stage gap reports, confidence histograms) as plot-ready text files.
//
// Exit codes: 0 success, 2 usage/validation error, 1 runtime failure.
// FSCASCADE_OUT_ROOT sets the default output root (default ./fscascade_out).

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fscascade/checkpoint.hpp"
#include "fscascade/detection_dump.hpp"
#include "fscascade/inference.hpp"
#include "fscascade/metrics.hpp"
#include "fscascade/model.hpp"
#include "fscascade/synth.hpp"
#include "fscascade/textkv.hpp"
#include "fscascade/trainer.hpp"

namespace fs = std::filesystem;
using namespace fscascade;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string out_root() {
  const char* env = std::getenv("FSCASCADE_OUT_ROOT");
  return env && *env ? std::string(env) : std::string("fscascade_out");
}

std::string sanitize_id(const std::string& s) {
  std::string out = s;
  for (char& c : out) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                    (c >= '0' && c <= '9') || c == '.' || c == '-' || c == '_';
    if (!ok) c = '_';
  }
  return out.empty() ? std::string("run") : out;
}

// ---------------------------------------------------------------- gen-data

struct GenDataArgs {
  std::string out;
  int64_t count = 600;
  SceneSpec spec;
};

int cmd_gen_data(const GenDataArgs& a) {
  SceneSpec spec = a.spec;
  if (a.count < 0) throw UsageError("--count must be >= 0");
  if (spec.image_h < 16 || spec.image_w < 16) {
    throw UsageError("--image-h/--image-w must be >= 16");
  }
  if (spec.objects_min < 1 || spec.objects_max < spec.objects_min) {
    throw UsageError("--objects-min/--objects-max must satisfy 1 <= min <= max");
  }
  if (spec.size_min <= 0.0 || spec.size_max >= 1.0 ||
      spec.size_min > spec.size_max) {
    throw UsageError("--size-min/--size-max must satisfy 0 < min <= max < 1");
  }
  if (spec.max_gt_iou < 0.0 || spec.max_gt_iou >= 1.0) {
    throw UsageError("--max-gt-iou must lie in [0,1)");
  }
  if (spec.noise < 0.0 || spec.noise > 1.0) {
    throw UsageError("--noise must lie in [0,1]");
  }
  const std::string dir = a.out.empty() ? out_root() + "/dataset" : a.out;
  const std::vector<SceneRecord> records = generate_dataset(spec, a.count);
  save_dataset(records, spec, dir);
  std::cout << "wrote " << records.size() << " scenes to " << dir << "\n";
  std::cout << "manifest sha1 " << dataset_manifest_hash(dir) << "\n";
  return kExitOk;
}

// ------------------------------------------------------------------- train

struct TrainArgs {
  std::string variant = "fscascade";
  int64_t stages = 3;
  std::string data;
  std::string out;
  std::string run_id;
  uint64_t seed = 1;
  ModelConfig model;   // dims; variant/stages/classes/input filled in below
  TrainConfig train;
  bool detach_shared_cls = false;
};

Dataset load_dataset_checked(const std::string& dir) {
  if (!fs::exists(dir)) throw UsageError("dataset directory not found: " + dir);
  return load_dataset(dir);
}

int cmd_train(const TrainArgs& a) {
  const std::optional<Variant> v = parse_variant(a.variant);
  if (!v) {
    throw UsageError("unknown variant '" + a.variant +
                     "' (expected baseline, cfs, lfs or fscascade)");
  }
  if (a.stages != 1 && a.stages != 3) throw UsageError("--stages must be 1 or 3");

  Dataset data = load_dataset_checked(a.data);
  if (data.records.empty()) throw UsageError("dataset is empty: " + a.data);

  ModelConfig mc = a.model;
  mc.variant = *v;
  mc.num_stages = a.stages;
  mc.num_classes = data.spec.num_classes;
  mc.input_h = data.spec.image_h;
  mc.input_w = data.spec.image_w;
  mc.detach_shared_cls = a.detach_shared_cls;
  if (a.stages == 1) {
    mc.fg_thresholds.resize(1);
    mc.delta_stds.resize(1);
  }
  try {
    validate_config(mc);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  TrainConfig tc = a.train;
  tc.seed = a.seed;
  tc.stage_loss_weights.resize(static_cast<size_t>(a.stages));
  try {
    validate_train_config(tc);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  const std::string run_id = sanitize_id(
      a.run_id.empty() ? a.variant + "-s" + std::to_string(a.stages) +
                             "-seed" + std::to_string(a.seed)
                       : a.run_id);
  const std::string dir =
      a.out.empty() ? out_root() + "/runs/" + run_id : a.out;
  if (fs::exists(fs::path(dir) / "run.txt")) {
    throw UsageError("run record already exists in " + dir +
                     "; choose a fresh --out directory");
  }
  fs::create_directories(dir);

  CascadeModel model(mc);
  model.init_params(a.seed);

  const std::string config_path = dir + "/model.txt";
  const std::string ckpt_path = dir + "/checkpoint.bin";
  const std::string log_path = dir + "/metrics.tsv";
  save_model_config(config_path, mc);

  std::cout << "training " << run_id << ": " << data.records.size()
            << " scenes, " << tc.epochs << " epochs\n";
  const TrainResult result = train(model, data.records, tc, log_path);
  save_checkpoint(ckpt_path, model.params());

  KvMap rec;
  rec.set("format", "fscascade-run");
  rec.set("run_id", run_id);
  rec.set("model_config", "model.txt");
  rec.set("checkpoint", "checkpoint.bin");
  rec.set("metric_log", "metrics.tsv");
  rec.set("dataset", a.data);
  rec.set("dataset_manifest_sha1", dataset_manifest_hash(a.data));
  rec.set_int("seed", static_cast<int64_t>(a.seed));
  rec.set_int("iterations", result.iterations);
  const KvMap echo = config_to_kv(mc);
  for (const std::string& k : echo.keys()) rec.set("model." + k, echo.get(k));
  rec.set_int("train.epochs", tc.epochs);
  rec.set_double("train.base_lr", tc.base_lr);
  rec.set_double("train.warmup_epochs", tc.warmup_epochs);
  rec.set_doubles("train.decay_epochs", tc.decay_epochs);
  rec.set_double("train.decay_factor", tc.decay_factor);
  rec.set_double("train.momentum", tc.momentum);
  rec.set_double("train.weight_decay", tc.weight_decay);
  rec.set_int("train.rois_per_image", tc.rois_per_image);
  rec.set_double("train.fg_fraction", tc.fg_fraction);
  rec.set_doubles("train.stage_loss_weights", tc.stage_loss_weights);
  rec.set_int("train.jitter_per_gt", tc.proposals.jitter_per_gt);
  rec.set_int("train.background", tc.proposals.background);
  rec.set_double("train.iou_min", tc.proposals.iou_min);
  rec.set_double("train.iou_max", tc.proposals.iou_max);
  rec.set_double("train.max_jitter", tc.proposals.max_jitter);
  write_kv_file(dir + "/run.txt", rec);

  if (!result.epochs.empty()) {
    const EpochRecord& last = result.epochs.back();
    std::cout << "final total loss " << format_double(last.total_loss) << "\n";
  }
  std::cout << "run record " << dir << "/run.txt\n";
  return kExitOk;
}

// -------------------------------------------------------------------- eval

struct LoadedRun {
  std::string dir;
  std::string run_id;
  ModelConfig config;
  CascadeModel model;
};

LoadedRun load_run(const std::string& dir) {
  const fs::path rec_path = fs::path(dir) / "run.txt";
  if (!fs::exists(rec_path)) {
    throw UsageError("no run record at " + rec_path.string());
  }
  const KvMap rec = read_kv_file(rec_path.string());
  if (!rec.has("format") || rec.get("format") != "fscascade-run") {
    throw std::runtime_error(rec_path.string() + ": not a run record");
  }
  const ModelConfig mc =
      load_model_config((fs::path(dir) / rec.get("model_config")).string());
  LoadedRun run{dir, rec.get("run_id"), mc, CascadeModel(mc)};
  load_checkpoint((fs::path(dir) / rec.get("checkpoint")).string(),
                  run.model.params());
  return run;
}

// Table-1 style view: one column per IoU threshold plus the mean.
std::string ap_wide_table(const APReport& r) {
  std::ostringstream head, row;
  for (size_t i = 0; i < r.thresholds.size(); ++i) {
    const int pct = static_cast<int>(r.thresholds[i] * 100.0 + 0.5);
    head << "AP" << pct << "\t";
    row << format_double(r.ap[i]) << "\t";
  }
  head << "mean";
  row << format_double(r.mean_ap);
  return head.str() + "\n" + row.str() + "\n";
}

struct EvalArgs {
  std::string run;
  std::string data;
  std::string mode = "ensemble";
  uint64_t seed = 1;
  ProposalConfig proposals;
};

int cmd_eval(const EvalArgs& a) {
  const std::optional<InferMode> mode = parse_infer_mode(a.mode);
  if (!mode) {
    throw UsageError("unknown mode '" + a.mode +
                     "' (expected stage1, stage2, stage3 or ensemble)");
  }
  LoadedRun run = load_run(a.run);
  if (*mode != InferMode::kEnsemble &&
      static_cast<int64_t>(*mode) > run.config.num_stages) {
    throw UsageError("mode " + a.mode + " needs " +
                     std::to_string(static_cast<int64_t>(*mode)) +
                     " stages; run " + run.run_id + " has " +
                     std::to_string(run.config.num_stages));
  }
  const Dataset data = load_dataset_checked(a.data);
  const std::vector<Detection> dets = evaluate_dataset(
      run.model, data.records, a.proposals, a.seed, *mode);
  APReport report = ap_sweep(dets, collect_gts(data.records));
  report.label = run.run_id + " " + a.mode;

  save_detections(run.dir + "/detections_" + a.mode + ".txt", dets);
  write_text_file(run.dir + "/eval_" + a.mode + ".tsv",
                  ap_report_table(report));

  std::cout << "run " << run.run_id << " mode " << a.mode << " ("
            << dets.size() << " detections on " << data.records.size()
            << " scenes)\n";
  std::cout << ap_wide_table(report);
  if (!report.classes_flagged.empty()) {
    std::cout << "# warning: detections for classes absent from ground truth:";
    for (int64_t c : report.classes_flagged) std::cout << " " << c;
    std::cout << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------- diagnose

struct DiagnoseArgs {
  std::vector<std::string> runs;
  std::string data;
  std::string out;
  uint64_t seed = 1;
  ProposalConfig proposals;
};

int cmd_diagnose(const DiagnoseArgs& a) {
  if (a.runs.empty()) throw UsageError("--runs needs at least one run directory");
  const Dataset data = load_dataset_checked(a.data);
  const std::vector<GtRecord> gts = collect_gts(data.records);
  const std::string dir = a.out.empty() ? out_root() + "/diagnostics" : a.out;
  fs::create_directories(dir);

  struct RunDiag {
    std::string run_id;
    int64_t stages = 0;
    std::map<InferMode, APReport> reports;
  };
  std::vector<RunDiag> diags;

  for (const std::string& run_dir : a.runs) {
    LoadedRun run = load_run(run_dir);
    RunDiag d;
    d.run_id = sanitize_id(run.run_id);
    d.stages = run.config.num_stages;
    const auto det_sets = evaluate_dataset_all_modes(
        run.model, data.records, a.proposals, a.seed);
    for (const auto& [mode, dets] : det_sets) {
      const std::string mode_name = infer_mode_name(mode);
      APReport rep = ap_sweep(dets, gts);
      rep.label = d.run_id + " " + mode_name;
      write_text_file(dir + "/ap_" + d.run_id + "_" + mode_name + ".tsv",
                      ap_report_table(rep));
      ConfidenceHistogram hist = confidence_histogram(dets, gts);
      hist.label = rep.label;
      write_text_file(dir + "/hist_" + d.run_id + "_" + mode_name + ".tsv",
                      histogram_table(hist));
      d.reports[mode] = rep;
    }
    diags.push_back(std::move(d));
  }

  // Within-run gap: each stage after the first against its predecessor.
  for (const RunDiag& d : diags) {
    for (int64_t s = 2; s <= d.stages; ++s) {
      const GapReport gap =
          gap_report(d.reports.at(static_cast<InferMode>(s)),
                     d.reports.at(static_cast<InferMode>(s - 1)));
      write_text_file(dir + "/gap_" + d.run_id + "_stage" + std::to_string(s) +
                          "_vs_stage" + std::to_string(s - 1) + ".tsv",
                      gap_report_table(gap));
    }
  }

  // Cross-run gap: every later run's last stage against the first run's.
  const RunDiag& ref = diags.front();
  const APReport& ref_last =
      ref.reports.at(static_cast<InferMode>(ref.stages));
  for (size_t i = 1; i < diags.size(); ++i) {
    const APReport& last =
        diags[i].reports.at(static_cast<InferMode>(diags[i].stages));
    const GapReport gap = gap_report(last, ref_last);
    write_text_file(
        dir + "/gap_" + diags[i].run_id + "_vs_" + ref.run_id + ".tsv",
        gap_report_table(gap));
  }

  std::cout << "diagnostics in " << dir << "\n";
  for (const RunDiag& d : diags) {
    for (const auto& [mode, rep] : d.reports) {
      std::cout << d.run_id << "\t" << infer_mode_name(mode) << "\tmean_ap\t"
                << format_double(rep.mean_ap) << "\n";
    }
  }
  return kExitOk;
}

// ------------------------------------------------------------------ params

int cmd_params(const std::string& config_path) {
  if (!fs::exists(config_path)) {
    throw UsageError("config file not found: " + config_path);
  }
  const ModelConfig base = load_model_config(config_path);

  std::map<Variant, std::map<std::string, int64_t>> counts;
  for (Variant v : {Variant::kBaseline, Variant::kCfs, Variant::kLfs,
                    Variant::kFscascade}) {
    ModelConfig mc = base;
    mc.variant = v;
    counts[v] = count_parameters(CascadeModel(mc));
  }

  std::cout << "config " << config_path << " (" << variant_name(base.variant)
            << ", " << base.num_stages << " stages, C=" << base.channels
            << ", hidden=" << base.hidden_width << ")\n\n";
  std::cout << "component\t";
  for (const auto& [v, c] : counts) std::cout << variant_name(v) << "\t";
  std::cout << "\n";
  for (const std::string key : {"backbone", "cls_trunk", "cls_predictors",
                                "box_trunk", "box_predictors", "total"}) {
    std::cout << key;
    for (const auto& [v, c] : counts) std::cout << "\t" << c.at(key);
    std::cout << "\n";
  }

  // Cost of each sharing mechanism. Classification sharing reuses the
  // per-stage FC stacks that already exist, so enabling it on top of the
  // box-sharing variant adds nothing; box sharing is the serial conv trunk.
  const int64_t cfs_delta = counts[Variant::kFscascade].at("total") -
                            counts[Variant::kLfs].at("total");
  const int64_t lfs_delta = counts[Variant::kLfs].at("box_trunk");
  std::cout << "\ncls feature sharing extra parameters: " << cfs_delta << "\n";
  std::cout << "box feature sharing extra parameters: " << lfs_delta << "\n";
  std::cout << "combined extra parameters: " << cfs_delta + lfs_delta << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "fscascade: multi-stage detection heads with feature sharing on "
      "synthetic scenes"};
  app.require_subcommand(1);

  GenDataArgs gen;
  CLI::App* c_gen = app.add_subcommand(
      "gen-data", "generate a synthetic scene dataset directory");
  c_gen->add_option("--out", gen.out, "output directory (default <root>/dataset)");
  c_gen->add_option("--count", gen.count, "number of scenes")->capture_default_str();
  c_gen->add_option("--seed", gen.spec.seed, "dataset seed")->capture_default_str();
  c_gen->add_option("--image-h", gen.spec.image_h, "image height")->capture_default_str();
  c_gen->add_option("--image-w", gen.spec.image_w, "image width")->capture_default_str();
  c_gen->add_option("--objects-min", gen.spec.objects_min, "min objects")->capture_default_str();
  c_gen->add_option("--objects-max", gen.spec.objects_max, "max objects")->capture_default_str();
  c_gen->add_option("--size-min", gen.spec.size_min,
                    "min shape extent (fraction of image side)")->capture_default_str();
  c_gen->add_option("--size-max", gen.spec.size_max,
                    "max shape extent (fraction of image side)")->capture_default_str();
  c_gen->add_option("--max-gt-iou", gen.spec.max_gt_iou,
                    "pairwise GT IoU rejection cap")->capture_default_str();
  c_gen->add_option("--noise", gen.spec.noise, "background noise amplitude")->capture_default_str();

  TrainArgs tr;
  CLI::App* c_train =
      app.add_subcommand("train", "train one cascade variant on a dataset");
  c_train->add_option("--variant", tr.variant,
                      "baseline | cfs | lfs | fscascade")->capture_default_str();
  c_train->add_option("--stages", tr.stages, "cascade stages (1 or 3)")->capture_default_str();
  c_train->add_option("--data", tr.data, "dataset directory")->required();
  c_train->add_option("--seed", tr.seed, "training seed")->capture_default_str();
  c_train->add_option("--out", tr.out,
                      "run directory (default <root>/runs/<run-id>)");
  c_train->add_option("--run-id", tr.run_id,
                      "run identifier (default <variant>-s<stages>-seed<seed>)");
  c_train->add_option("--channels", tr.model.channels, "backbone channels")->capture_default_str();
  c_train->add_option("--hidden", tr.model.hidden_width,
                      "classification FC width")->capture_default_str();
  c_train->add_option("--pooled", tr.model.pooled_size, "RoI grid size")->capture_default_str();
  c_train->add_option("--blocks", tr.model.num_blocks,
                      "stride-2 backbone blocks")->capture_default_str();
  c_train->add_flag("--detach-shared-cls", tr.detach_shared_cls,
                    "stop gradients into earlier stages' shared cls paths");
  c_train->add_option("--epochs", tr.train.epochs, "training epochs")->capture_default_str();
  c_train->add_option("--lr", tr.train.base_lr, "base learning rate")->capture_default_str();
  c_train->add_option("--warmup", tr.train.warmup_epochs,
                      "low-lr warmup epochs")->capture_default_str();
  c_train->add_option("--decay-epochs", tr.train.decay_epochs,
                      "epochs at which lr decays")
      ->delimiter(',');
  c_train->add_option("--decay-factor", tr.train.decay_factor,
                      "lr decay factor")->capture_default_str();
  c_train->add_option("--momentum", tr.train.momentum, "SGD momentum")->capture_default_str();
  c_train->add_option("--weight-decay", tr.train.weight_decay, "weight decay")->capture_default_str();
  c_train->add_option("--rois", tr.train.rois_per_image,
                      "sampled RoIs per image")->capture_default_str();
  c_train->add_option("--fg-fraction", tr.train.fg_fraction,
                      "foreground fraction of the RoI sample")->capture_default_str();
  c_train->add_option("--jitter", tr.train.proposals.jitter_per_gt,
                      "jittered proposals per ground-truth box")->capture_default_str();
  c_train->add_option("--background", tr.train.proposals.background,
                      "random background proposals per image")->capture_default_str();
  c_train->add_option("--iou-min", tr.train.proposals.iou_min,
                      "proposal target IoU band lower edge")->capture_default_str();
  c_train->add_option("--iou-max", tr.train.proposals.iou_max,
                      "proposal target IoU band upper edge")->capture_default_str();
  c_train->add_option("--max-jitter", tr.train.proposals.max_jitter,
                      "jitter strength (0 = exact GT copies)")->capture_default_str();

  EvalArgs ev;
  CLI::App* c_eval = app.add_subcommand(
      "eval", "evaluate a trained run on a dataset and print the AP table");
  c_eval->add_option("--run", ev.run, "run directory")->required();
  c_eval->add_option("--data", ev.data, "dataset directory")->required();
  c_eval->add_option("--mode", ev.mode, "stage1 | stage2 | stage3 | ensemble")->capture_default_str();
  c_eval->add_option("--seed", ev.seed, "proposal sampling seed")->capture_default_str();

  DiagnoseArgs dg;
  CLI::App* c_diag = app.add_subcommand(
      "diagnose",
      "AP sweeps, stage gap tables and confidence histograms for runs");
  c_diag->add_option("--runs", dg.runs, "run directories (first = reference)")
      ->required()
      ->expected(-1);
  c_diag->add_option("--data", dg.data, "dataset directory")->required();
  c_diag->add_option("--out", dg.out,
                     "output directory (default <root>/diagnostics)");
  c_diag->add_option("--seed", dg.seed, "proposal sampling seed")->capture_default_str();

  std::string params_config;
  CLI::App* c_params = app.add_subcommand(
      "params", "parameter audit and sharing-mechanism cost for a config");
  c_params->add_option("--config", params_config, "model config file")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (c_gen->parsed()) return cmd_gen_data(gen);
    if (c_train->parsed()) return cmd_train(tr);
    if (c_eval->parsed()) return cmd_eval(ev);
    if (c_diag->parsed()) return cmd_diagnose(dg);
    if (c_params->parsed()) return cmd_params(params_config);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
