#ifndef BG_RNG_HPP
#define BG_RNG_HPP

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace bg {

// Deterministic PRNG (xoshiro256++ seeded through splitmix64).
// Self-contained so that streams are reproducible independently of the
// standard library implementation; every training run, dataset render and
// weight init derives its stream from (seed, purpose-string) pairs.
class Rng {
public:
  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& si : s_) si = splitmix64(x);
    has_gauss_ = false;
    gauss_ = 0.0;
  }

  // Derives an independent stream, e.g. Rng(seed).fork("det_branch").
  Rng fork(const std::string& tag) const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char c : tag) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ull;
    }
    Rng r;
    r.s_[0] = s_[0] ^ h;
    r.s_[1] = s_[1] ^ (h * 0x9e3779b97f4a7c15ull);
    r.s_[2] = s_[2] + h;
    r.s_[3] = s_[3] ^ (h << 17 | h >> 47);
    std::uint64_t x = r.next();
    for (auto& si : r.s_) si = splitmix64(x);
    return r;
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive range [lo, hi].
  int randint(int lo, int hi) {
    if (hi <= lo) return lo;
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next() % span);
  }

  // Standard normal via Box-Muller (cached pair).
  double normal() {
    if (has_gauss_) {
      has_gauss_ = false;
      return gauss_;
    }
    double u1 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    gauss_ = r * std::sin(a);
    has_gauss_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = next() % i;
      std::swap(v[i - 1], v[j]);
    }
  }

  // Serializable state (used by checkpoint resume).
  std::vector<std::uint64_t> state() const {
    return {s_[0], s_[1], s_[2], s_[3],
            static_cast<std::uint64_t>(has_gauss_),
            bit_cast_u64(gauss_)};
  }

  void set_state(const std::vector<std::uint64_t>& st) {
    if (st.size() != 6) return;
    for (int i = 0; i < 4; ++i) s_[i] = st[i];
    has_gauss_ = st[4] != 0;
    gauss_ = bit_cast_d(st[5]);
  }

private:
  static std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  static std::uint64_t bit_cast_u64(double d) {
    std::uint64_t u;
    __builtin_memcpy(&u, &d, 8);
    return u;
  }
  static double bit_cast_d(std::uint64_t u) {
    double d;
    __builtin_memcpy(&d, &u, 8);
    return d;
  }

  std::uint64_t s_[4] = {1, 2, 3, 4};
  bool has_gauss_ = false;
  double gauss_ = 0.0;
};

}  // namespace bg

#endif  // BG_RNG_HPP
