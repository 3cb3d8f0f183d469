#ifndef BG_COMMON_HPP
#define BG_COMMON_HPP

#include <cstdint>
#include <stdexcept>
#include <string>

namespace bg {

// Error taxonomy mapped to CLI exit codes: ConfigError -> 2,
// PrereqError -> 3, ArtifactError (bad/missing run artifacts, IO) -> 4.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class PrereqError : public std::runtime_error {
public:
  explicit PrereqError(const std::string& msg) : std::runtime_error(msg) {}
};

class ArtifactError : public std::runtime_error {
public:
  explicit ArtifactError(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeError : public std::runtime_error {
public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericsError : public std::runtime_error {
public:
  explicit NumericsError(const std::string& msg) : std::runtime_error(msg) {}
};

class ContractError : public std::runtime_error {
public:
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// FNV-1a over raw bytes. Used for parameter checksums and manifest hashes.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string to_hex(std::uint64_t v);

}  // namespace bg

#endif  // BG_COMMON_HPP
