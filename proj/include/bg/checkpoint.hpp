#ifndef BG_CHECKPOINT_HPP
#define BG_CHECKPOINT_HPP

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "bg/nn.hpp"

namespace bg {

// Self-describing versioned checkpoint: magic + JSON header (stage tag,
// named tensor index, config snapshot, extra metadata, blob checksum)
// followed by a raw little-endian double blob. The checksum is validated
// on load.
struct Checkpoint {
  std::string stage;
  std::map<std::string, Tensor> tensors;       // parameter values
  std::map<std::string, Tensor> opt_state;     // optimizer buffers
  std::map<std::string, std::string> extra;    // free-form metadata
  std::string config_snapshot;                 // JSON text of the run config

  bool has(const std::string& name) const { return tensors.count(name) > 0; }
  const Tensor& tensor(const std::string& name) const;

  // Checksum over parameter values only (the identity the acceptance
  // criteria compare); optimizer state is excluded.
  std::uint64_t params_checksum() const;

  void add_params(const std::vector<Param*>& params);
  // Copies values into matching params; missing names raise ArtifactError.
  void load_into(const std::vector<Param*>& params) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace bg

#endif  // BG_CHECKPOINT_HPP
