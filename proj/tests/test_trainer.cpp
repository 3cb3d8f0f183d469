#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "bg/trainer.hpp"

using namespace bg;
namespace fs = std::filesystem;

namespace {

// Small in-memory dataset shared by the stage tests.
TrainData make_data(int n, std::uint64_t seed = 5) {
  DatasetSpec spec;
  spec.n_train = n;
  spec.n_test = 1;
  spec.image_h = 32;
  spec.image_w = 32;
  spec.objects_min = 1;
  spec.objects_max = 2;
  spec.seed = seed;
  DegradationParams p;
  TrainData data;
  for (int i = 0; i < n; ++i) {
    const ImageSample scene = render_scene(spec, i);
    data.underwater.push_back(degrade(scene, p));
    ImageSample clear = degrade(scene, p.mild());
    clear.domain = Domain::clear;
    data.clear.push_back(clear);
  }
  return data;
}

RunConfig tiny_cfg(int epochs_a = 1, int epochs_bcd = 1) {
  RunConfig cfg = RunConfig::desk_default();
  cfg.seed = 11;
  cfg.dataset.image_h = cfg.dataset.image_w = 32;
  cfg.generator_channels = 4;
  cfg.generator_res_blocks = 1;
  cfg.detector.width_multiplier = 0.5;
  cfg.stages.at('A').epochs = epochs_a;
  cfg.stages.at('A').batch_size = 2;
  for (char s : {'B', 'C', 'D'}) {
    cfg.stages.at(s).epochs = epochs_bcd;
    cfg.stages.at(s).batch_size = 4;
  }
  cfg.validate();
  return cfg;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("bgtrain_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("lr schedule endpoints and midpoint") {
  CHECK(lr_schedule(1e-2, 1e-2, 0, 100) == doctest::Approx(1e-2));
  CHECK(lr_schedule(1e-2, 1e-2, 99, 100) ==
        doctest::Approx(1e-2 * 1e-2).epsilon(1e-12));
  // Cosine midpoint: lr0 * (1 + lrf) / 2.
  CHECK(lr_schedule(2.0, 0.1, 50, 101) == doctest::Approx(2.0 * 0.55));
  CHECK(lr_schedule(3.0, 0.5, 0, 1) == doctest::Approx(3.0));
  CHECK_THROWS_AS(lr_schedule(1.0, 1.0, 5, 5), ConfigError);
}

TEST_CASE("reference stage plans echo the published recipe") {
  const auto plans = RunConfig::reference_stage_plans();
  CHECK(plans.at('A').epochs == 50);
  CHECK(plans.at('A').batch_size == 2);
  CHECK(plans.at('A').optimizer == "adam");
  CHECK(plans.at('A').lr == doctest::Approx(1e-4));
  CHECK(plans.at('A').momentum == doctest::Approx(0.5));
  for (char s : {'B', 'C', 'D'}) {
    CHECK(plans.at(s).epochs == 300);
    CHECK(plans.at(s).batch_size == 16);
    CHECK(plans.at(s).optimizer == "sgd");
    CHECK(plans.at(s).momentum == doctest::Approx(0.937));
    CHECK(plans.at(s).weight_decay == doctest::Approx(5e-4));
  }
  CHECK(plans.at('B').lr == doctest::Approx(1e-2));
  CHECK(plans.at('B').lrf == doctest::Approx(1e-2));
  CHECK(plans.at('C').lr == doctest::Approx(1e-3));
  CHECK(plans.at('C').lrf == doctest::Approx(1e-3));
  CHECK(plans.at('D').lr == doctest::Approx(1e-2));
  CHECK(plans.at('D').lrf == doctest::Approx(1e-2));
}

TEST_CASE("enhance wraps the generator with domain and box contracts") {
  Rng r(3);
  Generator g("g_u2a", r, 4, 1);
  const TrainData data = make_data(1);
  const ImageSample out = enhance(g, data.underwater[0]);
  CHECK(out.domain == Domain::clear);
  CHECK(out.pixels.shape() == data.underwater[0].pixels.shape());
  REQUIRE(out.boxes.size() == data.underwater[0].boxes.size());
  for (std::size_t i = 0; i < out.boxes.size(); ++i)
    CHECK(out.boxes[i].cx == data.underwater[0].boxes[i].cx);
  CHECK_THROWS_AS(enhance(g, data.clear[0]), ContractError);
}

TEST_CASE("freeze marks subtrees, verifies, and rejects unknown names") {
  Rng r(5);
  Generator g("g_u2a", r, 4, 1);
  auto params = g.params();
  CHECK_THROWS_AS(freeze(params, {"nonexistent"}), ConfigError);
  const FrozenSet fs = freeze(params, {"g_u2a"});
  CHECK(fs.params.size() == params.size());
  for (Param* p : params) CHECK(p->frozen);
  verify_frozen(fs);
  params[0]->value[0] += 1.0;
  CHECK_THROWS_AS(verify_frozen(fs), ContractError);
}

TEST_CASE("checkpoint save/load round-trip validates its checksum") {
  Rng r(7);
  Generator g("g_u2a", r, 4, 1);
  Checkpoint ckpt;
  ckpt.stage = "A";
  ckpt.add_params(g.params());
  ckpt.extra["note"] = "x";
  const fs::path dir = fresh_dir("ckpt");
  save_checkpoint(ckpt, dir / "c.bin");
  const Checkpoint back = load_checkpoint(dir / "c.bin");
  CHECK(back.stage == "A");
  CHECK(back.params_checksum() == ckpt.params_checksum());
  CHECK(back.extra.at("note") == "x");

  // Flip one blob byte: load must fail the checksum.
  auto bytes = [&] {
    std::ifstream in(dir / "c.bin", std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
  }();
  bytes[bytes.size() - 5] ^= 0x40;
  std::ofstream(dir / "bad.bin", std::ios::binary) << bytes;
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.bin"), ArtifactError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.bin"), ArtifactError);
}

TEST_CASE("zero-epoch stage A checkpoint equals the initialization") {
  const RunConfig cfg = tiny_cfg(0);
  const TrainData data = make_data(4);
  const fs::path dir = fresh_dir("zeroepoch");
  const StageArtifacts art =
      train_stage_a(cfg, cfg.stages.at('A'), data, dir);

  Rng gi = Rng(cfg.seed).fork("enhancer_init");
  GeneratorPair gp(gi, cfg.generator_channels, cfg.generator_res_blocks);
  Rng di = Rng(cfg.seed).fork("disc_init");
  DiscriminatorPair dp(di);
  Checkpoint fresh;
  fresh.stage = "A";
  fresh.add_params(gp.params());
  fresh.add_params(dp.params());
  CHECK(art.checkpoint.params_checksum() == fresh.params_checksum());
}

TEST_CASE("stage prerequisites are enforced by tag") {
  const RunConfig cfg = tiny_cfg();
  const TrainData data = make_data(4);
  Checkpoint wrong;
  wrong.stage = "D";
  const fs::path dir = fresh_dir("prereq");
  CHECK_THROWS_AS(
      train_stage_b(cfg, cfg.stages.at('B'), wrong, data, dir / "b"),
      PrereqError);
  CHECK_THROWS_AS(
      train_stage_c(cfg, cfg.stages.at('C'), wrong, data, dir / "c"),
      PrereqError);
  CHECK_THROWS_AS(
      train_stage_d(cfg, cfg.stages.at('D'), wrong, data, dir / "d"),
      PrereqError);
}

TEST_CASE("full stage chain is deterministic and honours freezing") {
  const RunConfig cfg = tiny_cfg(1, 2);
  const TrainData data = make_data(6);
  const fs::path dir = fresh_dir("chain");

  const StageArtifacts a1 =
      train_stage_a(cfg, cfg.stages.at('A'), data, dir / "A");
  const StageArtifacts b1 =
      train_stage_b(cfg, cfg.stages.at('B'), a1.checkpoint, data, dir / "B");
  const StageArtifacts c1 =
      train_stage_c(cfg, cfg.stages.at('C'), b1.checkpoint, data, dir / "C");
  const StageArtifacts d1 =
      train_stage_d(cfg, cfg.stages.at('D'), c1.checkpoint, data, dir / "D");

  // Rerun the same seeds: bit-identical checkpoints.
  const StageArtifacts a2 =
      train_stage_a(cfg, cfg.stages.at('A'), data, dir / "A2");
  CHECK(a2.params_checksum == a1.params_checksum);
  const StageArtifacts d2 =
      train_stage_d(cfg, cfg.stages.at('D'), c1.checkpoint, data, dir / "D2");
  CHECK(d2.params_checksum == d1.params_checksum);

  // The frozen enhancement branch kept its stage-C value through stage D.
  CHECK(d1.notes.at("teacher_checksum") ==
        c1.checkpoint.extra.at("enh_branch_checksum"));

  // Loss logs exist with the documented headers.
  std::ifstream alog(dir / "A" / "loss.csv");
  std::string header;
  std::getline(alog, header);
  CHECK(header == "epoch,step,l_gan_u2a,l_gan_a2u,l_cyc,l_cp,total");
  std::ifstream dlog(dir / "D" / "guidance.csv");
  std::getline(dlog, header);
  CHECK(header == "step,l_con1,l_con2,l_con3,l_fgm,l_det,total");
}

TEST_CASE("zero-guidance stage D is bitwise-identical to the plain loop") {
  RunConfig cfg = tiny_cfg(1, 2);
  cfg.total_weights.eta2 = 0.0;
  cfg.guidance_weights.enabled_levels = {1, 2, 3};
  const TrainData data = make_data(6);
  const fs::path dir = fresh_dir("zerog");

  const StageArtifacts a =
      train_stage_a(cfg, cfg.stages.at('A'), data, dir / "A");
  const StageArtifacts b =
      train_stage_b(cfg, cfg.stages.at('B'), a.checkpoint, data, dir / "B");
  const StageArtifacts c =
      train_stage_c(cfg, cfg.stages.at('C'), b.checkpoint, data, dir / "C");
  const StageArtifacts d =
      train_stage_d(cfg, cfg.stages.at('D'), c.checkpoint, data, dir / "D");
  const StageArtifacts plain =
      train_detector_plain(cfg, cfg.stages.at('D'), data, dir / "plain");
  CHECK(d.params_checksum == plain.params_checksum);

  // And a non-zero eta2 produces different weights.
  cfg.total_weights.eta2 = 0.05;
  const StageArtifacts guided =
      train_stage_d(cfg, cfg.stages.at('D'), c.checkpoint, data, dir / "Dg");
  CHECK(guided.params_checksum != plain.params_checksum);
}

TEST_CASE("resume replays the identical remaining trajectory") {
  const RunConfig cfg = tiny_cfg(1, 4);
  const TrainData data = make_data(6);
  const fs::path dir = fresh_dir("resume");

  const StageArtifacts a =
      train_stage_a(cfg, cfg.stages.at('A'), data, dir / "A");

  // Uninterrupted 4-epoch run.
  const StageArtifacts full =
      train_stage_b(cfg, cfg.stages.at('B'), a.checkpoint, data, dir / "full");

  // Stop after 2 epochs, then resume from last.bin.
  (void)train_stage_b(cfg, cfg.stages.at('B'), a.checkpoint, data,
                      dir / "half", nullptr, /*stop_after_epochs=*/2);
  const Checkpoint mid = load_checkpoint(dir / "half" / "last.bin");
  CHECK(mid.extra.at("epochs_done") == "2");
  const StageArtifacts resumed = train_stage_b(
      cfg, cfg.stages.at('B'), a.checkpoint, data, dir / "half", &mid);
  CHECK(resumed.params_checksum == full.params_checksum);
}

TEST_CASE("run_stage enforces dataset and checkpoint prerequisites") {
  RunConfig cfg = tiny_cfg();
  const fs::path dir = fresh_dir("runstage");
  cfg.dataset_root = (dir / "nodata").string();
  cfg.output_dir = (dir / "runs").string();
  CHECK_THROWS_AS(run_stage(cfg, 'A'), PrereqError);

  // With a dataset but no stage-C artifact, stage D is a prerequisite error.
  cfg.dataset.n_train = 3;
  cfg.dataset.n_test = 1;
  cfg.dataset.seed = cfg.seed;
  generate_dataset(cfg.dataset, cfg.degradation, cfg.degradation_clear,
                   cfg.dataset_root);
  CHECK_THROWS_AS(run_stage(cfg, 'D'), PrereqError);
  CHECK_THROWS_AS(run_stage(cfg, 'X'), ConfigError);
}

TEST_CASE("exploding training aborts with a numerics error") {
  RunConfig cfg = tiny_cfg(1, 3);
  cfg.stages.at('B').lr = 1e30;  // guaranteed overflow within a few steps
  const TrainData data = make_data(6);
  const fs::path dir = fresh_dir("nan");
  const StageArtifacts a =
      train_stage_a(cfg, cfg.stages.at('A'), data, dir / "A");
  CHECK_THROWS_AS(
      train_stage_b(cfg, cfg.stages.at('B'), a.checkpoint, data, dir / "B"),
      NumericsError);
  // The abort left the last finite checkpoint behind.
  CHECK(fs::exists(dir / "B" / "last.bin"));
  const Checkpoint last = load_checkpoint(dir / "B" / "last.bin");
  CHECK(last.stage == "B");
}
