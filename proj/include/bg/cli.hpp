#ifndef BG_CLI_HPP
#define BG_CLI_HPP

#include <filesystem>
#include <optional>

#include "bg/evalmod.hpp"
#include "bg/trainer.hpp"

namespace bg {

// Stable exit-code contract: 0 success, 2 config error, 3 missing
// prerequisite, 4 bad/missing artifact.
enum ExitCode {
  kExitOk = 0,
  kExitConfig = 2,
  kExitPrereq = 3,
  kExitArtifact = 4,
};

struct SeedOverride {
  std::optional<std::uint64_t> flag;  // --seed
  // env BGDET_SEED applies only when neither the flag nor the config file
  // provides a seed (last-resort override).
  void apply(RunConfig& cfg) const;
};

int cmd_gen(RunConfig cfg, const SeedOverride& seed, bool force,
            const std::optional<std::string>& out_override);

struct TrainOverrides {
  SeedOverride seed;
  std::optional<double> eta2;
  std::optional<std::vector<int>> levels;
  std::optional<std::string> run_id;
  bool resume = false;
  bool no_guidance = false;  // plain reference loop (stage D only)
};

int cmd_train(RunConfig cfg, char stage, const TrainOverrides& ov);

struct EvalOutcome {
  EvalReport report;
  std::filesystem::path out_dir;
};

// Library-level evaluation used by the CLI and the acceptance suite.
EvalOutcome evaluate_weights(const RunConfig& cfg, InferenceMode mode,
                             const std::filesystem::path& weights,
                             const std::filesystem::path& out_dir,
                             bool measure_fps = true);

int cmd_eval(RunConfig cfg, const SeedOverride& seed, const std::string& mode,
             const std::filesystem::path& weights,
             const std::optional<std::string>& out_override);

struct AblateRow {
  std::string label;
  std::set<int> levels;
  double eta2 = 0.0;
  double map50 = 0.0;
  double map5095 = 0.0;
};

// layers: the no-guidance baseline plus all 7 non-empty subsets of
// {conv1, conv2, csp_block} (8 rows). eta2: {1.0, 0.5, 0.1, 0.05, 0.01}
// with conv1-only guidance (5 rows). Arms may run in parallel with
// disjoint output directories.
std::vector<AblateRow> run_ablation(const RunConfig& cfg,
                                    const std::string& which, int jobs,
                                    const std::filesystem::path& out_csv);

int cmd_ablate(RunConfig cfg, const SeedOverride& seed,
               const std::string& which, int jobs);

// Maps exceptions from a command body onto the exit-code contract.
int run_guarded(const std::function<int()>& body);

}  // namespace bg

#endif  // BG_CLI_HPP
