// Command-line front end: dataset generation, the four training stages,
// evaluation in the three inference modes, and the two ablation sweeps,
// all driven by one JSON config.

#include <CLI11.hpp>

#include "bg/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"bgdet - guided underwater detection trainer/evaluator"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "JSON config file")->required();

  std::uint64_t seed_val = 0;
  CLI::Option* seed_opt = app.add_option("--seed", seed_val, "seed override");

  auto* gen = app.add_subcommand("gen", "generate the synthetic dataset");
  bool force = false;
  std::string gen_out;
  gen->add_flag("--force", force, "overwrite an existing dataset");
  CLI::Option* gen_out_opt =
      gen->add_option("--out", gen_out, "dataset root override");
  gen->fallthrough();

  auto* train = app.add_subcommand("train", "run one training stage");
  std::string stage;
  double eta2_val = 0.0;
  std::vector<int> levels_val;
  std::string run_id_val;
  bool resume = false, no_guidance = false;
  train->add_option("--stage", stage, "A|B|C|D")->required();
  CLI::Option* eta2_opt =
      train->add_option("--eta2", eta2_val, "guided-loss weight override");
  CLI::Option* levels_opt = train->add_option(
      "--levels", levels_val, "guided tap levels, e.g. --levels 1 2");
  CLI::Option* run_id_opt =
      train->add_option("--run-id", run_id_val, "run id override");
  train->add_flag("--resume", resume, "resume from <stage>/last.bin");
  train->add_flag("--no-guidance", no_guidance,
                  "stage D only: plain detection loop without the guidance "
                  "module");
  train->fallthrough();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string mode, weights, eval_out;
  eval->add_option("--mode", mode, "detect_only|separate|cascaded")
      ->required();
  eval->add_option("--weights", weights, "checkpoint file")->required();
  CLI::Option* eval_out_opt =
      eval->add_option("--out", eval_out, "report directory override");
  eval->fallthrough();

  auto* ablate = app.add_subcommand("ablate", "run an ablation sweep");
  std::string which;
  int jobs = 1;
  ablate->add_option("--which", which, "layers|eta2")->required();
  ablate->add_option("--jobs", jobs, "parallel arms");
  ablate->fallthrough();

  CLI11_PARSE(app, argc, argv);

  return bg::run_guarded([&]() -> int {
    bg::RunConfig cfg = bg::RunConfig::from_file(config_path);
    bg::SeedOverride seed;
    if (*seed_opt) seed.flag = seed_val;

    if (gen->parsed()) {
      std::optional<std::string> out;
      if (*gen_out_opt) out = gen_out;
      return bg::cmd_gen(cfg, seed, force, out);
    }
    if (train->parsed()) {
      if (stage.size() != 1 || stage[0] < 'A' || stage[0] > 'D')
        throw bg::ConfigError("--stage must be one of A|B|C|D");
      if (no_guidance && stage[0] != 'D')
        throw bg::ConfigError("--no-guidance only applies to stage D");
      bg::TrainOverrides tov;
      tov.seed = seed;
      tov.resume = resume;
      tov.no_guidance = no_guidance;
      if (*eta2_opt) tov.eta2 = eta2_val;
      if (*levels_opt) tov.levels = levels_val;
      if (*run_id_opt) tov.run_id = run_id_val;
      return bg::cmd_train(cfg, stage[0], tov);
    }
    if (eval->parsed()) {
      std::optional<std::string> out;
      if (*eval_out_opt) out = eval_out;
      return bg::cmd_eval(cfg, seed, mode, weights, out);
    }
    if (ablate->parsed()) return bg::cmd_ablate(cfg, seed, which, jobs);
    return bg::kExitConfig;
  });
}
