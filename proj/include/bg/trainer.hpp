#ifndef BG_TRAINER_HPP
#define BG_TRAINER_HPP

#include <functional>
#include <memory>
#include <optional>

#include "bg/checkpoint.hpp"
#include "bg/config.hpp"
#include "bg/optim.hpp"

namespace bg {

// Applies the underwater->clear generator to one sample; boxes and id pass
// through unchanged, the result is flagged as clear-domain.
ImageSample enhance(Generator& g, const ImageSample& img);

// Stacks samples into an (n,3,h,w) batch.
Tensor stack_pixels(const std::vector<const ImageSample*>& samples);

// Marks every param under the named subtrees as frozen and records the
// checksum for post-hoc verification.
struct FrozenSet {
  std::vector<Param*> params;
  std::uint64_t checksum = 0;
  std::vector<std::string> subtrees;
};

FrozenSet freeze(const std::vector<Param*>& all,
                 const std::vector<std::string>& subtrees);
// Throws ContractError if any frozen value changed since freeze().
void verify_frozen(const FrozenSet& fs);

// In-memory split used by the stage loops.
struct TrainData {
  std::vector<ImageSample> underwater;  // with boxes
  std::vector<ImageSample> clear;       // unpaired target pool
};

TrainData split_domains(std::vector<ImageSample> samples);

struct StageArtifacts {
  Checkpoint checkpoint;
  std::uint64_t params_checksum = 0;
  // Per-stage extras, e.g. the frozen enhancement-branch checksum in D.
  std::map<std::string, std::string> notes;
};

// The four training stages. All loops are deterministic in
// (config, plan, data); per-epoch batch order derives from
// seed/stage/epoch alone so a resumed run replays the identical
// remaining trajectory.
//
// A: adversarial enhancer training (generators + discriminators).
// B: detection subnet pretraining on stage-A-enhanced images (generator
//    frozen).
// C: joint optimization of generator + DSN with the detection loss only.
// D: detection branch training with the frozen enhancement branch as the
//    feature-guidance teacher.
StageArtifacts train_stage_a(const RunConfig& cfg, const StagePlan& plan,
                             const TrainData& data,
                             const std::filesystem::path& out_dir,
                             const Checkpoint* resume = nullptr,
                             int stop_after_epochs = -1);

StageArtifacts train_stage_b(const RunConfig& cfg, const StagePlan& plan,
                             const Checkpoint& ckpt_a, const TrainData& data,
                             const std::filesystem::path& out_dir,
                             const Checkpoint* resume = nullptr,
                             int stop_after_epochs = -1);

StageArtifacts train_stage_c(const RunConfig& cfg, const StagePlan& plan,
                             const Checkpoint& ckpt_b, const TrainData& data,
                             const std::filesystem::path& out_dir,
                             const Checkpoint* resume = nullptr,
                             int stop_after_epochs = -1);

StageArtifacts train_stage_d(const RunConfig& cfg, const StagePlan& plan,
                             const Checkpoint& ckpt_c, const TrainData& data,
                             const std::filesystem::path& out_dir,
                             const Checkpoint* resume = nullptr,
                             int stop_after_epochs = -1);

// Guidance-free detection training: the reference loop the zero-guidance
// equivalence criterion compares stage D against (no teacher is ever
// constructed). Uses the same seed stream, batch order and eta1 scaling.
StageArtifacts train_detector_plain(const RunConfig& cfg,
                                    const StagePlan& plan,
                                    const TrainData& data,
                                    const std::filesystem::path& out_dir);

// Orchestrated entry point: loads the dataset and prerequisite checkpoint
// from the run directory, trains, and writes checkpoint.bin / loss.csv /
// config.snapshot under <output_dir>/<run_id>/<stage>/.
StageArtifacts run_stage(const RunConfig& cfg, char stage,
                         bool resume_from_last = false);

// Network factories shared by trainer / eval / CLI.
std::unique_ptr<Generator> make_generator(const RunConfig& cfg,
                                          const std::string& name, Rng rng);
std::unique_ptr<DetectorNet> make_detector(const RunConfig& cfg,
                                           const std::string& name, Rng rng);

}  // namespace bg

#endif  // BG_TRAINER_HPP
