#include "bg/trainer.hpp"

#include <algorithm>
#include <fstream>

namespace bg {

namespace fs = std::filesystem;

ImageSample enhance(Generator& g, const ImageSample& img) {
  if (img.domain != Domain::underwater)
    throw ContractError("enhance: input must be an underwater-domain image");
  Tensor batch({1, 3, img.height(), img.width()});
  std::copy(img.pixels.data(), img.pixels.data() + img.pixels.numel(),
            batch.data());
  Tensor out = g.forward(batch, false);
  ImageSample res;
  res.pixels = Tensor({3, img.height(), img.width()});
  std::copy(out.data(), out.data() + out.numel(), res.pixels.data());
  res.boxes = img.boxes;
  res.domain = Domain::clear;
  res.id = img.id;
  return res;
}

Tensor stack_pixels(const std::vector<const ImageSample*>& samples) {
  if (samples.empty()) throw ShapeError("stack_pixels: empty batch");
  const int h = samples[0]->height(), w = samples[0]->width();
  Tensor batch({static_cast<int>(samples.size()), 3, h, w});
  const std::size_t plane = static_cast<std::size_t>(3) * h * w;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i]->height() != h || samples[i]->width() != w)
      throw ShapeError("stack_pixels: mixed image sizes in batch");
    std::copy(samples[i]->pixels.data(), samples[i]->pixels.data() + plane,
              batch.data() + i * plane);
  }
  return batch;
}

FrozenSet freeze(const std::vector<Param*>& all,
                 const std::vector<std::string>& subtrees) {
  FrozenSet fs;
  fs.subtrees = subtrees;
  for (const std::string& sub : subtrees) {
    bool matched = false;
    for (Param* p : all) {
      if (p->name == sub ||
          (p->name.size() > sub.size() && p->name.compare(0, sub.size(), sub) == 0 &&
           p->name[sub.size()] == '.')) {
        p->frozen = true;
        fs.params.push_back(p);
        matched = true;
      }
    }
    if (!matched)
      throw ConfigError("freeze: unknown parameter subtree '" + sub + "'");
  }
  fs.checksum = params_checksum(fs.params);
  return fs;
}

void verify_frozen(const FrozenSet& fs) {
  const std::uint64_t now = params_checksum(fs.params);
  if (now != fs.checksum)
    throw ContractError("frozen parameters changed (checksum " + to_hex(fs.checksum) +
                        " -> " + to_hex(now) + ")");
}

TrainData split_domains(std::vector<ImageSample> samples) {
  TrainData d;
  for (auto& s : samples) {
    if (s.domain == Domain::underwater)
      d.underwater.push_back(std::move(s));
    else
      d.clear.push_back(std::move(s));
  }
  return d;
}

std::unique_ptr<Generator> make_generator(const RunConfig& cfg,
                                          const std::string& name, Rng rng) {
  return std::make_unique<Generator>(name, rng, cfg.generator_channels,
                                     cfg.generator_res_blocks);
}

std::unique_ptr<DetectorNet> make_detector(const RunConfig& cfg,
                                           const std::string& name, Rng rng) {
  return std::make_unique<DetectorNet>(name, cfg.detector, rng);
}

namespace {

std::vector<int> epoch_order(std::uint64_t seed, char stage, int epoch,
                             std::size_t n) {
  std::vector<int> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(i);
  Rng rng = Rng(seed).fork(std::string(1, stage) + ".epoch" +
                           std::to_string(epoch));
  rng.shuffle(idx);
  return idx;
}

std::vector<std::vector<int>> chunk(const std::vector<int>& idx, int bs) {
  std::vector<std::vector<int>> out;
  for (std::size_t i = 0; i < idx.size(); i += static_cast<std::size_t>(bs)) {
    const std::size_t end = std::min(idx.size(), i + static_cast<std::size_t>(bs));
    out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(i),
                     idx.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

Tensor gather_batch(const std::vector<ImageSample>& pool,
                    const std::vector<int>& ids) {
  std::vector<const ImageSample*> ptrs;
  ptrs.reserve(ids.size());
  for (int i : ids) ptrs.push_back(&pool[static_cast<std::size_t>(i)]);
  return stack_pixels(ptrs);
}

std::vector<std::vector<GtBox>> gather_gts(const std::vector<ImageSample>& pool,
                                           const std::vector<int>& ids) {
  std::vector<std::vector<GtBox>> out;
  out.reserve(ids.size());
  for (int i : ids) {
    std::vector<GtBox> g;
    for (const auto& b : pool[static_cast<std::size_t>(i)].boxes)
      g.push_back(b.to_gt());
    out.push_back(std::move(g));
  }
  return out;
}

class CsvLog {
public:
  CsvLog(const fs::path& path, const std::string& header, bool append) {
    const bool fresh = !append || !fs::exists(path);
    out_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!out_) throw ArtifactError("cannot open log " + path.string());
    if (fresh) out_ << header << "\n";
  }
  template <typename... Ts>
  void row(Ts... vals) {
    bool first = true;
    ((out_ << (first ? "" : ","), first = false, out_ << vals), ...);
    out_ << "\n";
  }

private:
  std::ofstream out_;
};

void save_optimizer_state(Checkpoint& ckpt, Sgd* sgd, Adam* adam) {
  if (sgd) {
    const auto& ps = sgd->params();
    for (std::size_t i = 0; i < ps.size(); ++i)
      ckpt.opt_state["sgd.v." + ps[i]->name] = sgd->state()[i];
  }
  if (adam) {
    const auto& ps = adam->params();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      ckpt.opt_state["adam.m." + ps[i]->name] = adam->state_m()[i];
      ckpt.opt_state["adam.v." + ps[i]->name] = adam->state_v()[i];
    }
    ckpt.extra["adam.t"] = std::to_string(adam->step_count());
  }
}

void load_optimizer_state(const Checkpoint& ckpt, Sgd* sgd, Adam* adam) {
  auto fetch = [&](const std::string& key, Tensor& dst) {
    auto it = ckpt.opt_state.find(key);
    if (it == ckpt.opt_state.end())
      throw ArtifactError("checkpoint: missing optimizer state '" + key + "'");
    dst = it->second;
  };
  if (sgd) {
    const auto& ps = sgd->params();
    for (std::size_t i = 0; i < ps.size(); ++i)
      fetch("sgd.v." + ps[i]->name, sgd->state()[i]);
  }
  if (adam) {
    const auto& ps = adam->params();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      fetch("adam.m." + ps[i]->name, adam->state_m()[i]);
      fetch("adam.v." + ps[i]->name, adam->state_v()[i]);
    }
    adam->set_step_count(std::stol(ckpt.extra.at("adam.t")));
  }
}

int resume_epoch(const Checkpoint* resume, const std::string& expected_stage) {
  if (!resume) return 0;
  if (resume->stage != expected_stage)
    throw PrereqError("resume checkpoint has stage '" + resume->stage +
                      "', expected '" + expected_stage + "'");
  return std::stoi(resume->extra.at("epochs_done"));
}

void require_finite(double v, const std::string& where, const fs::path& dir) {
  if (!std::isfinite(v))
    throw NumericsError(where + ": non-finite loss; last finite checkpoint at " +
                        (dir / "last.bin").string());
}

void write_epoch_checkpoint(const fs::path& dir, Checkpoint ckpt,
                            int epochs_done) {
  ckpt.extra["epochs_done"] = std::to_string(epochs_done);
  save_checkpoint(ckpt, dir / "last.bin");
}

}  // namespace

StageArtifacts train_stage_a(const RunConfig& cfg, const StagePlan& plan,
                             const TrainData& data, const fs::path& out_dir,
                             const Checkpoint* resume, int stop_after_epochs) {
  if (data.underwater.empty() || data.clear.empty())
    throw PrereqError("stage A: need non-empty underwater and clear pools");
  fs::create_directories(out_dir);

  GeneratorPair gp = [&] {
    Rng rng = Rng(cfg.seed).fork("enhancer_init");
    return GeneratorPair(rng, cfg.generator_channels, cfg.generator_res_blocks);
  }();
  DiscriminatorPair dp = [&] {
    Rng rng = Rng(cfg.seed).fork("disc_init");
    return DiscriminatorPair(rng);
  }();
  PerceptualExtractor phi;
  const bool lsq = cfg.adv_form == "lsq";

  auto all_params = gp.params();
  {
    auto dparams = dp.params();
    all_params.insert(all_params.end(), dparams.begin(), dparams.end());
  }
  Adam opt_g(gp.params(), plan.momentum);
  Adam opt_d(dp.params(), plan.momentum);

  const int start = resume_epoch(resume, "A");
  if (resume) {
    resume->load_into(all_params);
    // Both optimizers share one counter entry; restore g then d from the
    // same blob (their state names are disjoint).
    auto fetch_adam = [&](Adam& a, const char* t_key) {
      const auto& ps = a.params();
      for (std::size_t i = 0; i < ps.size(); ++i) {
        a.state_m()[i] = resume->opt_state.at("adam.m." + ps[i]->name);
        a.state_v()[i] = resume->opt_state.at("adam.v." + ps[i]->name);
      }
      a.set_step_count(std::stol(resume->extra.at(t_key)));
    };
    fetch_adam(opt_g, "adam.t.g");
    fetch_adam(opt_d, "adam.t.d");
  }

  auto snapshot = [&](int epochs_done) {
    Checkpoint ckpt;
    ckpt.stage = "A";
    ckpt.add_params(all_params);
    const auto& gps = opt_g.params();
    for (std::size_t i = 0; i < gps.size(); ++i) {
      ckpt.opt_state["adam.m." + gps[i]->name] = opt_g.state_m()[i];
      ckpt.opt_state["adam.v." + gps[i]->name] = opt_g.state_v()[i];
    }
    const auto& dps = opt_d.params();
    for (std::size_t i = 0; i < dps.size(); ++i) {
      ckpt.opt_state["adam.m." + dps[i]->name] = opt_d.state_m()[i];
      ckpt.opt_state["adam.v." + dps[i]->name] = opt_d.state_v()[i];
    }
    ckpt.extra["adam.t.g"] = std::to_string(opt_g.step_count());
    ckpt.extra["adam.t.d"] = std::to_string(opt_d.step_count());
    ckpt.extra["epochs_done"] = std::to_string(epochs_done);
    ckpt.extra["phi_checksum"] = to_hex(phi.weights_checksum());
    ckpt.config_snapshot = cfg.to_json().dump();
    return ckpt;
  };

  CsvLog log(out_dir / "loss.csv",
             "epoch,step,l_gan_u2a,l_gan_a2u,l_cyc,l_cp,total", start > 0);
  save_checkpoint(snapshot(start), out_dir / "last.bin");

  const int last_epoch = (stop_after_epochs >= 0)
                             ? std::min(plan.epochs, stop_after_epochs)
                             : plan.epochs;
  for (int epoch = start; epoch < last_epoch; ++epoch) {
    const double lr = lr_schedule(plan.lr, plan.lrf, epoch, plan.epochs);
    opt_g.set_lr(lr);
    opt_d.set_lr(lr);
    auto iu = epoch_order(cfg.seed, 'A', epoch, data.underwater.size());
    auto ic = epoch_order(cfg.seed ^ 0x5a5a, 'A', epoch, data.clear.size());
    const std::size_t pairs = std::min(iu.size(), ic.size());
    iu.resize(pairs);
    ic.resize(pairs);
    const auto batches_u = chunk(iu, plan.batch_size);
    const auto batches_c = chunk(ic, plan.batch_size);
    for (std::size_t step = 0; step < batches_u.size(); ++step) {
      if (batches_c[step].size() != batches_u[step].size()) break;
      const Tensor xu = gather_batch(data.underwater, batches_u[step]);
      const Tensor xa = gather_batch(data.clear, batches_c[step]);

      // Generator update on the full objective.
      opt_g.zero_grads();
      opt_d.zero_grads();
      const EnhancerLossParts parts = compute_enhancer_loss(
          gp, dp, phi, xu, xa, cfg.enhancer_weights, true, lsq);
      const double total = parts.total(cfg.enhancer_weights);
      require_finite(total, "stage A epoch " + std::to_string(epoch), out_dir);
      opt_g.step();

      // Discriminator update on detached fakes.
      opt_d.zero_grads();
      const Tensor fake_a = gp.g_u2a.forward(xu, false);
      const Tensor fake_u = gp.g_a2u.forward(xa, false);
      const double d_loss =
          discriminator_loss_and_grads(dp.d_a, xa, fake_a, lsq) +
          discriminator_loss_and_grads(dp.d_u, xu, fake_u, lsq);
      require_finite(d_loss, "stage A (discriminator) epoch " +
                                 std::to_string(epoch), out_dir);
      opt_d.step();

      log.row(epoch, step, parts.gan_u2a, parts.gan_a2u, parts.cycle,
              parts.perceptual, total);
    }
    write_epoch_checkpoint(out_dir, snapshot(epoch + 1), epoch + 1);
  }

  StageArtifacts art;
  art.checkpoint = snapshot(last_epoch);
  save_checkpoint(art.checkpoint, out_dir / "checkpoint.bin");
  art.params_checksum = art.checkpoint.params_checksum();
  return art;
}

namespace {

// Shared detector-training step: forward, loss (+ optional guidance),
// backward, SGD update. Factored so stages B/C/D and the plain loop stay
// bit-for-bit consistent where they overlap.
struct DetStepResult {
  DetectionLossResult det;
  GuidedLossParts guided;
  double total = 0.0;
};

}  // namespace

StageArtifacts train_stage_b(const RunConfig& cfg, const StagePlan& plan,
                             const Checkpoint& ckpt_a, const TrainData& data,
                             const fs::path& out_dir, const Checkpoint* resume,
                             int stop_after_epochs) {
  if (ckpt_a.stage != "A")
    throw PrereqError("stage B requires a stage-A checkpoint, got '" +
                      ckpt_a.stage + "'");
  if (data.underwater.empty())
    throw PrereqError("stage B: empty underwater training pool");
  fs::create_directories(out_dir);

  auto g = make_generator(cfg, "g_u2a", Rng(cfg.seed).fork("teacher_init"));
  ckpt_a.load_into(g->params());
  for (Param* p : g->params()) p->frozen = true;
  g->frozen = true;

  auto dsn = make_detector(cfg, "dsn", Rng(cfg.seed).fork("dsn_init"));
  Sgd opt(dsn->params(), plan.momentum, plan.weight_decay);

  const int start = resume_epoch(resume, "B");
  if (resume) {
    auto all = g->params();
    auto dn = dsn->params();
    all.insert(all.end(), dn.begin(), dn.end());
    resume->load_into(all);
    load_optimizer_state(*resume, &opt, nullptr);
  }

  auto snapshot = [&](int epochs_done) {
    Checkpoint ckpt;
    ckpt.stage = "B";
    ckpt.add_params(g->params());
    ckpt.add_params(dsn->params());
    save_optimizer_state(ckpt, &opt, nullptr);
    ckpt.extra["epochs_done"] = std::to_string(epochs_done);
    ckpt.config_snapshot = cfg.to_json().dump();
    return ckpt;
  };

  CsvLog log(out_dir / "loss.csv", "epoch,step,l_obj,l_loc,l_cls,total",
             start > 0);
  save_checkpoint(snapshot(start), out_dir / "last.bin");

  const int img_h = data.underwater[0].height();
  const int img_w = data.underwater[0].width();
  const int last_epoch = (stop_after_epochs >= 0)
                             ? std::min(plan.epochs, stop_after_epochs)
                             : plan.epochs;
  for (int epoch = start; epoch < last_epoch; ++epoch) {
    opt.set_lr(lr_schedule(plan.lr, plan.lrf, epoch, plan.epochs));
    const auto order = epoch_order(cfg.seed, 'B', epoch, data.underwater.size());
    const auto batches = chunk(order, plan.batch_size);
    for (std::size_t step = 0; step < batches.size(); ++step) {
      const Tensor xu = gather_batch(data.underwater, batches[step]);
      const auto gts = gather_gts(data.underwater, batches[step]);
      // Enhanced on the fly by the frozen stage-A generator.
      const Tensor xe = g->forward(xu, false);
      const auto targets = assign_targets(gts, img_h, img_w, cfg.detector);
      opt.zero_grads();
      auto fr = dsn->forward(xe, true);
      std::array<Tensor, 3> grads;
      const DetectionLossResult res = detection_loss(
          fr.heads, targets, cfg.detector, cfg.detection_weights, &grads);
      require_finite(res.total, "stage B epoch " + std::to_string(epoch),
                     out_dir);
      dsn->backward(grads);
      opt.step();
      log.row(epoch, step, res.obj, res.loc, res.cls, res.total);
    }
    write_epoch_checkpoint(out_dir, snapshot(epoch + 1), epoch + 1);
  }

  StageArtifacts art;
  art.checkpoint = snapshot(last_epoch);
  save_checkpoint(art.checkpoint, out_dir / "checkpoint.bin");
  art.params_checksum = art.checkpoint.params_checksum();
  return art;
}

StageArtifacts train_stage_c(const RunConfig& cfg, const StagePlan& plan,
                             const Checkpoint& ckpt_b, const TrainData& data,
                             const fs::path& out_dir, const Checkpoint* resume,
                             int stop_after_epochs) {
  if (ckpt_b.stage != "B")
    throw PrereqError("stage C requires a stage-B checkpoint, got '" +
                      ckpt_b.stage + "'");
  if (data.underwater.empty())
    throw PrereqError("stage C: empty underwater training pool");
  fs::create_directories(out_dir);

  auto g = make_generator(cfg, "g_u2a", Rng(cfg.seed).fork("teacher_init"));
  auto dsn = make_detector(cfg, "dsn", Rng(cfg.seed).fork("dsn_init"));
  std::vector<Param*> all = g->params();
  {
    auto dn = dsn->params();
    all.insert(all.end(), dn.begin(), dn.end());
  }
  ckpt_b.load_into(all);

  // Joint optimization uses the detection loss only; the discriminators
  // are untouched in this stage.
  Sgd opt(all, plan.momentum, plan.weight_decay);

  const int start = resume_epoch(resume, "C");
  if (resume) {
    resume->load_into(all);
    load_optimizer_state(*resume, &opt, nullptr);
  }

  auto snapshot = [&](int epochs_done) {
    Checkpoint ckpt;
    ckpt.stage = "C";
    ckpt.add_params(all);
    save_optimizer_state(ckpt, &opt, nullptr);
    ckpt.extra["epochs_done"] = std::to_string(epochs_done);
    ckpt.extra["enh_branch_checksum"] = to_hex(params_checksum(all));
    ckpt.config_snapshot = cfg.to_json().dump();
    return ckpt;
  };

  CsvLog log(out_dir / "loss.csv", "epoch,step,l_obj,l_loc,l_cls,total",
             start > 0);
  save_checkpoint(snapshot(start), out_dir / "last.bin");

  const int img_h = data.underwater[0].height();
  const int img_w = data.underwater[0].width();
  const int last_epoch = (stop_after_epochs >= 0)
                             ? std::min(plan.epochs, stop_after_epochs)
                             : plan.epochs;
  for (int epoch = start; epoch < last_epoch; ++epoch) {
    opt.set_lr(lr_schedule(plan.lr, plan.lrf, epoch, plan.epochs));
    const auto order = epoch_order(cfg.seed, 'C', epoch, data.underwater.size());
    const auto batches = chunk(order, plan.batch_size);
    for (std::size_t step = 0; step < batches.size(); ++step) {
      const Tensor xu = gather_batch(data.underwater, batches[step]);
      const auto gts = gather_gts(data.underwater, batches[step]);
      const auto targets = assign_targets(gts, img_h, img_w, cfg.detector);
      opt.zero_grads();
      const Tensor xe = g->forward(xu, true);
      auto fr = dsn->forward(xe, true);
      std::array<Tensor, 3> grads;
      const DetectionLossResult res = detection_loss(
          fr.heads, targets, cfg.detector, cfg.detection_weights, &grads);
      require_finite(res.total, "stage C epoch " + std::to_string(epoch),
                     out_dir);
      const Tensor gx = dsn->backward(grads);
      g->backward(gx);
      opt.step();
      log.row(epoch, step, res.obj, res.loc, res.cls, res.total);
    }
    write_epoch_checkpoint(out_dir, snapshot(epoch + 1), epoch + 1);
  }

  StageArtifacts art;
  art.checkpoint = snapshot(last_epoch);
  save_checkpoint(art.checkpoint, out_dir / "checkpoint.bin");
  art.params_checksum = art.checkpoint.params_checksum();
  art.notes["enh_branch_checksum"] = art.checkpoint.extra["enh_branch_checksum"];
  return art;
}

namespace {

// Core of stage D and the guidance-free reference loop. When `teacher_g`
// is null, no guidance machinery exists at all (plain detection training).
StageArtifacts run_detection_branch_training(
    const RunConfig& cfg, const StagePlan& plan, const TrainData& data,
    const fs::path& out_dir, Generator* teacher_g, DetectorNet* teacher_dsn,
    const FrozenSet* frozen, const std::string& stage_tag,
    const Checkpoint* resume, int stop_after_epochs) {
  if (data.underwater.empty())
    throw PrereqError("stage D: empty underwater training pool");
  fs::create_directories(out_dir);

  auto det = make_detector(cfg, "det", Rng(cfg.seed).fork("det_branch"));
  Sgd opt(det->params(), plan.momentum, plan.weight_decay);

  const int start = resume_epoch(resume, stage_tag);
  if (resume) {
    resume->load_into(det->params());
    load_optimizer_state(*resume, &opt, nullptr);
  }

  const GuidanceWeights& gw = cfg.guidance_weights;
  const TotalLossWeights& tw = cfg.total_weights;
  const bool guided = teacher_g != nullptr && !gw.enabled_levels.empty();
  const int max_level =
      guided ? *gw.enabled_levels.rbegin() : 0;

  auto snapshot = [&](int epochs_done) {
    Checkpoint ckpt;
    ckpt.stage = stage_tag;
    ckpt.add_params(det->params());
    save_optimizer_state(ckpt, &opt, nullptr);
    ckpt.extra["epochs_done"] = std::to_string(epochs_done);
    if (frozen) ckpt.extra["teacher_checksum"] = to_hex(frozen->checksum);
    ckpt.extra["eta2"] = std::to_string(tw.eta2);
    ckpt.config_snapshot = cfg.to_json().dump();
    return ckpt;
  };

  CsvLog log(out_dir / "guidance.csv",
             "step,l_con1,l_con2,l_con3,l_fgm,l_det,total", start > 0);
  save_checkpoint(snapshot(start), out_dir / "last.bin");

  const int img_h = data.underwater[0].height();
  const int img_w = data.underwater[0].width();
  long global_step = 0;
  const int last_epoch = (stop_after_epochs >= 0)
                             ? std::min(plan.epochs, stop_after_epochs)
                             : plan.epochs;
  for (int epoch = start; epoch < last_epoch; ++epoch) {
    opt.set_lr(lr_schedule(plan.lr, plan.lrf, epoch, plan.epochs));
    const auto order = epoch_order(cfg.seed, 'D', epoch, data.underwater.size());
    const auto batches = chunk(order, plan.batch_size);
    for (std::size_t step = 0; step < batches.size(); ++step, ++global_step) {
      const Tensor xu = gather_batch(data.underwater, batches[step]);
      const auto gts = gather_gts(data.underwater, batches[step]);
      const auto targets = assign_targets(gts, img_h, img_w, cfg.detector);
      opt.zero_grads();

      auto fr = det->forward(xu, true);
      std::array<Tensor, 3> grads;
      const DetectionLossResult res = detection_loss(
          fr.heads, targets, cfg.detector, cfg.detection_weights, &grads);
      for (auto& gt : grads) gt.scale_(tw.eta1);

      GuidedLossParts gl;
      TapArray tap_grads{};
      if (guided) {
        const Tensor xe = teacher_g->forward(xu, false);
        FeatureTapSet taps_i;
        taps_i.source = TapSource::enhancement_branch;
        taps_i.taps = teacher_dsn->backbone_taps(xe, max_level);
        FeatureTapSet taps_f;
        taps_f.source = TapSource::detection_branch;
        taps_f.taps = fr.taps;
        gl = full_guided_loss(taps_f, taps_i, gw);
        for (int l : gw.enabled_levels)
          tap_grads[static_cast<std::size_t>(l - 1)] = feature_consistency_grad(
              taps_f.level(l), taps_i.level(l), tw.eta2 * gw.mu(l),
              gw.literal_spatial_norm);
      }
      const double total = total_loss(res.total, gl.total, tw);
      require_finite(total, "stage D epoch " + std::to_string(epoch), out_dir);

      det->backward(grads, tap_grads);
      opt.step();
      log.row(global_step, gl.per_level[0], gl.per_level[1], gl.per_level[2],
              gl.total, res.total, total);
    }
    write_epoch_checkpoint(out_dir, snapshot(epoch + 1), epoch + 1);
  }

  if (frozen) verify_frozen(*frozen);

  StageArtifacts art;
  art.checkpoint = snapshot(last_epoch);
  save_checkpoint(art.checkpoint, out_dir / "checkpoint.bin");
  art.params_checksum = art.checkpoint.params_checksum();
  if (frozen) {
    art.notes["teacher_checksum"] = to_hex(frozen->checksum);
    art.notes["teacher_checksum_after"] = to_hex(params_checksum(frozen->params));
  }
  return art;
}

}  // namespace

StageArtifacts train_stage_d(const RunConfig& cfg, const StagePlan& plan,
                             const Checkpoint& ckpt_c, const TrainData& data,
                             const fs::path& out_dir, const Checkpoint* resume,
                             int stop_after_epochs) {
  if (ckpt_c.stage != "C")
    throw PrereqError("stage D requires a stage-C checkpoint, got '" +
                      ckpt_c.stage + "'");
  auto teacher_g =
      make_generator(cfg, "g_u2a", Rng(cfg.seed).fork("teacher_init"));
  auto teacher_dsn =
      make_detector(cfg, "dsn", Rng(cfg.seed).fork("dsn_init"));
  std::vector<Param*> branch = teacher_g->params();
  {
    auto dn = teacher_dsn->params();
    branch.insert(branch.end(), dn.begin(), dn.end());
  }
  ckpt_c.load_into(branch);
  const FrozenSet frozen = freeze(branch, {"g_u2a", "dsn"});
  teacher_g->frozen = true;
  teacher_dsn->frozen = true;

  return run_detection_branch_training(cfg, plan, data, out_dir,
                                       teacher_g.get(), teacher_dsn.get(),
                                       &frozen, "D", resume,
                                       stop_after_epochs);
}

StageArtifacts train_detector_plain(const RunConfig& cfg, const StagePlan& plan,
                                    const TrainData& data,
                                    const fs::path& out_dir) {
  return run_detection_branch_training(cfg, plan, data, out_dir, nullptr,
                                       nullptr, nullptr, "D", nullptr, -1);
}

StageArtifacts run_stage(const RunConfig& cfg, char stage,
                         bool resume_from_last) {
  if (stage < 'A' || stage > 'D')
    throw ConfigError(std::string("unknown stage '") + stage + "'");
  auto it = cfg.stages.find(stage);
  if (it == cfg.stages.end())
    throw ConfigError(std::string("no stage plan for '") + stage + "'");
  const StagePlan& plan = it->second;

  if (!fs::is_directory(fs::path(cfg.dataset_root) / "images" / "train"))
    throw PrereqError("dataset not found at " + cfg.dataset_root +
                      " (run 'gen' first)");
  TrainData data = split_domains(load_dataset(cfg.dataset_root, Split::train));

  const fs::path out_dir = cfg.stage_dir(stage);
  fs::create_directories(out_dir);
  {
    std::ofstream snap(out_dir / "config.snapshot");
    snap << cfg.to_json().dump(2) << "\n";
  }

  auto load_prereq = [&](char prev) {
    const fs::path p = cfg.stage_dir(prev) / "checkpoint.bin";
    if (!fs::exists(p))
      throw PrereqError(std::string("stage ") + stage + " requires stage " +
                        prev + " checkpoint at " + p.string());
    return load_checkpoint(p);
  };

  std::optional<Checkpoint> resume;
  if (resume_from_last && fs::exists(out_dir / "last.bin"))
    resume = load_checkpoint(out_dir / "last.bin");
  const Checkpoint* rp = resume ? &*resume : nullptr;

  switch (stage) {
    case 'A':
      return train_stage_a(cfg, plan, data, out_dir, rp);
    case 'B': {
      const Checkpoint a = load_prereq('A');
      return train_stage_b(cfg, plan, a, data, out_dir, rp);
    }
    case 'C': {
      const Checkpoint b = load_prereq('B');
      return train_stage_c(cfg, plan, b, data, out_dir, rp);
    }
    default: {
      const Checkpoint c = load_prereq('C');
      return train_stage_d(cfg, plan, c, data, out_dir, rp);
    }
  }
}

}  // namespace bg
