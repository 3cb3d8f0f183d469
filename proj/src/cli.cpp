#include "bg/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

namespace bg {

namespace fs = std::filesystem;
using nlohmann::json;

void SeedOverride::apply(RunConfig& cfg) const {
  if (flag) {
    cfg.seed = *flag;
    cfg.seed_explicit = true;
    return;
  }
  if (cfg.seed_explicit) return;
  if (const char* env = std::getenv("BGDET_SEED")) {
    try {
      cfg.seed = std::stoull(env);
      cfg.seed_explicit = true;
    } catch (const std::exception&) {
      throw ConfigError("BGDET_SEED is not an integer: '" + std::string(env) +
                        "'");
    }
  }
}

int run_guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const PrereqError& e) {
    std::cerr << "prerequisite error: " << e.what() << "\n";
    return kExitPrereq;
  } catch (const ArtifactError& e) {
    std::cerr << "artifact error: " << e.what() << "\n";
    return kExitArtifact;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitArtifact;
  }
}

int cmd_gen(RunConfig cfg, const SeedOverride& seed, bool force,
            const std::optional<std::string>& out_override) {
  seed.apply(cfg);
  if (out_override) cfg.dataset_root = *out_override;
  cfg.dataset.seed = cfg.seed;
  const fs::path root(cfg.dataset_root);
  if (fs::exists(root / "manifest.json") && !force)
    throw ConfigError("dataset already exists at " + root.string() +
                      " (pass --force to overwrite)");
  const DatasetManifest m = generate_dataset(cfg.dataset, cfg.degradation,
                                             cfg.degradation_clear, root);
  std::cout << "dataset: " << root.string() << "\n"
            << "  train scenes: " << m.n_train << ", test scenes: " << m.n_test
            << "\n  classes: " << m.classes.size() << ", seed: " << m.seed
            << "\n  manifest hash: " << to_hex(m.content_hash) << "\n";
  return kExitOk;
}

int cmd_train(RunConfig cfg, char stage, const TrainOverrides& ov) {
  ov.seed.apply(cfg);
  if (ov.run_id) cfg.run_id = *ov.run_id;
  if (ov.eta2) cfg.total_weights.eta2 = *ov.eta2;
  if (ov.levels)
    cfg.guidance_weights.enabled_levels =
        std::set<int>(ov.levels->begin(), ov.levels->end());
  cfg.validate();

  StageArtifacts art;
  if (ov.no_guidance && stage == 'D') {
    if (!fs::is_directory(fs::path(cfg.dataset_root) / "images" / "train"))
      throw PrereqError("dataset not found at " + cfg.dataset_root);
    TrainData data =
        split_domains(load_dataset(cfg.dataset_root, Split::train));
    art = train_detector_plain(cfg, cfg.stages.at('D'), data,
                               cfg.stage_dir('D'));
  } else {
    art = run_stage(cfg, stage, ov.resume);
  }
  std::cout << "stage " << stage << " done: checkpoint checksum "
            << to_hex(art.params_checksum) << "\n"
            << "  artifacts: " << cfg.stage_dir(stage).string() << "\n";
  return kExitOk;
}

namespace {

struct LoadedNets {
  std::unique_ptr<Generator> enhancer;  // null in detect_only
  std::unique_ptr<DetectorNet> detector;
};

LoadedNets nets_for_mode(const RunConfig& cfg, InferenceMode mode,
                         const Checkpoint& ckpt) {
  LoadedNets nets;
  Rng rng(0);  // values come from the checkpoint
  if (mode == InferenceMode::detect_only) {
    if (ckpt.stage != "D")
      throw ArtifactError("detect_only expects a stage-D checkpoint, got '" +
                          ckpt.stage + "'");
    nets.detector = make_detector(cfg, "det", rng);
    ckpt.load_into(nets.detector->params());
    return nets;
  }
  const char* want = mode == InferenceMode::cascaded ? "C" : "B";
  if (ckpt.stage != want)
    throw ArtifactError(std::string(mode_name(mode)) + " expects a stage-" +
                        want + " checkpoint, got '" + ckpt.stage + "'");
  nets.enhancer = make_generator(cfg, "g_u2a", rng);
  ckpt.load_into(nets.enhancer->params());
  nets.detector = make_detector(cfg, "dsn", rng);
  ckpt.load_into(nets.detector->params());
  return nets;
}

}  // namespace

EvalOutcome evaluate_weights(const RunConfig& cfg, InferenceMode mode,
                             const fs::path& weights, const fs::path& out_dir,
                             bool measure_fps) {
  if (!fs::exists(weights))
    throw ArtifactError("weights not found: " + weights.string());
  const Checkpoint ckpt = load_checkpoint(weights);
  LoadedNets nets = nets_for_mode(cfg, mode, ckpt);

  std::vector<ImageSample> test =
      load_dataset(cfg.dataset_root, Split::test);
  std::vector<const ImageSample*> under;
  for (const auto& s : test)
    if (s.domain == Domain::underwater) under.push_back(&s);
  if (under.empty())
    throw ArtifactError("no underwater test images under " + cfg.dataset_root);

  const std::uint64_t enh_calls_before = Generator::forward_counter().load();

  auto infer_dets = [&](const Tensor& batch1) {
    Tensor input = batch1;
    if (nets.enhancer) input = nets.enhancer->forward(batch1, false);
    auto fr = nets.detector->forward(input, false);
    return decode_and_nms(fr.heads, 0, cfg.detector, cfg.eval_conf_thresh,
                          cfg.nms_iou_thresh);
  };

  std::vector<std::vector<Detection>> dets;
  std::vector<std::vector<GtBox>> gts;
  std::vector<Tensor> batches;
  dets.reserve(under.size());
  for (const ImageSample* s : under) {
    batches.push_back(stack_pixels({s}));
    dets.push_back(infer_dets(batches.back()));
    std::vector<GtBox> g;
    for (const auto& b : s->boxes) g.push_back(b.to_gt());
    gts.push_back(std::move(g));
  }

  double fps = 0.0;
  if (measure_fps) {
    std::vector<const Tensor*> imgs;
    for (const auto& b : batches) imgs.push_back(&b);
    fps = fps_benchmark([&](const Tensor& img) { (void)infer_dets(img); },
                        imgs, cfg.fps_warmup, cfg.fps_iters);
  }

  const std::uint64_t enh_calls =
      Generator::forward_counter().load() - enh_calls_before;
  if (mode == InferenceMode::detect_only && enh_calls != 0)
    throw ContractError("detect_only inference invoked the enhancer");

  json prov = {
      {"mode", mode_name(mode)},
      {"weights", weights.string()},
      {"detection_weights",
       {{"a", cfg.detection_weights.a},
        {"b", cfg.detection_weights.b},
        {"c", cfg.detection_weights.c},
        {"use_ciou", cfg.detection_weights.use_ciou}}},
      {"eta1", cfg.total_weights.eta1},
      {"eta2", cfg.total_weights.eta2},
      {"mu",
       {cfg.guidance_weights.mu1, cfg.guidance_weights.mu2,
        cfg.guidance_weights.mu3}},
      {"guided_levels",
       std::vector<int>(cfg.guidance_weights.enabled_levels.begin(),
                        cfg.guidance_weights.enabled_levels.end())},
      {"conf_thresh", cfg.eval_conf_thresh},
      {"nms_iou", cfg.nms_iou_thresh},
      {"seed", cfg.seed},
      {"enhancer_forward_calls", enh_calls},
      {"interpolation",
       "AP@0.5 all-point envelope; 0.5:0.95 aggregate on the 101-point "
       "recall grid (right-endpoint sum)"},
  };

  EvalOutcome out;
  out.report =
      compute_report(dets, gts, cfg.dataset.classes, fps, std::move(prov));
  out.out_dir = out_dir;
  export_report(out.report, out_dir);

  // Detections export alongside the report.
  std::ofstream csv(out_dir / "detections.csv");
  csv << "image_id,class_id,score,cx,cy,w,h\n";
  for (std::size_t i = 0; i < under.size(); ++i)
    for (const auto& d : dets[i]) {
      char line[160];
      std::snprintf(line, sizeof(line), "%s,%d,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                    under[i]->id.c_str(), d.class_id, d.score, d.box.cx,
                    d.box.cy, d.box.w, d.box.h);
      csv << line;
    }
  return out;
}

int cmd_eval(RunConfig cfg, const SeedOverride& seed, const std::string& mode,
             const fs::path& weights,
             const std::optional<std::string>& out_override) {
  seed.apply(cfg);
  cfg.validate();
  const InferenceMode m = mode_from_string(mode);
  const fs::path out_dir = out_override
                               ? fs::path(*out_override)
                               : cfg.run_dir() / ("eval_" + mode);
  const EvalOutcome res = evaluate_weights(cfg, m, weights, out_dir);
  std::cout << "eval mode=" << mode << "\n"
            << "  mAP@0.5      " << res.report.map50 << "\n"
            << "  mAP@0.5:0.95 " << res.report.map5095 << "\n"
            << "  P/R/F1       " << res.report.precision << "/"
            << res.report.recall << "/" << res.report.f1 << "\n"
            << "  FPS          " << res.report.fps << "\n"
            << "  report: " << (out_dir / "report.json").string() << "\n";
  return kExitOk;
}

std::vector<AblateRow> run_ablation(const RunConfig& cfg,
                                    const std::string& which, int jobs,
                                    const fs::path& out_csv) {
  const fs::path ckpt_c_path = cfg.stage_dir('C') / "checkpoint.bin";
  if (!fs::exists(ckpt_c_path))
    throw PrereqError("ablate requires stages A-C (missing " +
                      ckpt_c_path.string() + ")");
  const Checkpoint ckpt_c = load_checkpoint(ckpt_c_path);

  if (!fs::is_directory(fs::path(cfg.dataset_root) / "images" / "train"))
    throw PrereqError("dataset not found at " + cfg.dataset_root);
  const TrainData data =
      split_domains(load_dataset(cfg.dataset_root, Split::train));

  std::vector<AblateRow> rows;
  if (which == "layers") {
    // Baseline (no guidance) then every non-empty subset, shallow first.
    const std::vector<std::set<int>> subsets = {
        {}, {1}, {2}, {3}, {1, 2}, {1, 3}, {2, 3}, {1, 2, 3}};
    for (const auto& s : subsets) {
      AblateRow r;
      r.levels = s;
      r.eta2 = s.empty() ? 0.0 : cfg.total_weights.eta2;
      std::string label = s.empty() ? "baseline" : "";
      for (int l : s)
        label += std::string(label.empty() ? "" : "+") +
                 DetectorNet::tap_names()[static_cast<std::size_t>(l - 1)];
      r.label = label;
      rows.push_back(std::move(r));
    }
  } else if (which == "eta2") {
    for (double e : {1.0, 0.5, 0.1, 0.05, 0.01}) {
      AblateRow r;
      r.levels = {1};  // shallowest layer only
      r.eta2 = e;
      r.label = "eta2=" + std::to_string(e);
      rows.push_back(std::move(r));
    }
  } else {
    throw ConfigError("ablate: unknown sweep '" + which +
                      "' (expected 'layers' or 'eta2')");
  }

  const fs::path sweep_dir = cfg.run_dir() / ("ablate_" + which);
  fs::create_directories(sweep_dir);

  std::mutex io_mutex;
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= rows.size()) return;
      AblateRow& row = rows[i];
      RunConfig arm = cfg;
      arm.guidance_weights.enabled_levels = row.levels;
      arm.total_weights.eta2 = row.eta2;
      const fs::path arm_dir = sweep_dir / ("arm" + std::to_string(i));
      const StageArtifacts art = train_stage_d(arm, arm.stages.at('D'), ckpt_c,
                                               data, arm_dir);
      const EvalOutcome ev =
          evaluate_weights(arm, InferenceMode::detect_only,
                           arm_dir / "checkpoint.bin", arm_dir / "eval",
                           /*measure_fps=*/false);
      row.map50 = ev.report.map50;
      row.map5095 = ev.report.map5095;
      std::lock_guard<std::mutex> lock(io_mutex);
      std::cout << "  arm " << row.label << ": mAP@0.5 " << row.map50
                << ", mAP@0.5:0.95 " << row.map5095 << "\n";
    }
  };
  jobs = std::max(1, jobs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  std::ofstream csv(out_csv);
  if (!csv) throw ArtifactError("cannot write " + out_csv.string());
  if (which == "layers") {
    csv << "conv1,conv2,csp,map50,map5095\n";
    for (const auto& r : rows)
      csv << (r.levels.count(1) ? 1 : 0) << "," << (r.levels.count(2) ? 1 : 0)
          << "," << (r.levels.count(3) ? 1 : 0) << "," << r.map50 << ","
          << r.map5095 << "\n";
  } else {
    csv << "eta2,map50,map5095\n";
    for (const auto& r : rows)
      csv << r.eta2 << "," << r.map50 << "," << r.map5095 << "\n";
  }
  return rows;
}

int cmd_ablate(RunConfig cfg, const SeedOverride& seed,
               const std::string& which, int jobs) {
  seed.apply(cfg);
  cfg.validate();
  const fs::path out_csv = cfg.run_dir() / ("ablate_" + which + ".csv");
  const auto rows = run_ablation(cfg, which, jobs, out_csv);
  std::cout << "ablation '" << which << "': " << rows.size() << " rows -> "
            << out_csv.string() << "\n";
  return kExitOk;
}

}  // namespace bg
