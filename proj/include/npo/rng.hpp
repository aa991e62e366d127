#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string>

namespace npo {

/// SplitMix64 finalizer; used only to fold stream coordinates into a seed.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// A seeded random stream. Streams are either long-lived (their state is
/// checkpointed) or derived on the spot from coordinates such as
/// (seed, step, prompt id, slot), which makes sampling independent of the
/// order or thread in which trajectories are produced.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0) : engine_(seed) {}

  static RngStream derive(std::initializer_list<std::uint64_t> coords) {
    std::uint64_t h = 0x6a09e667f3bcc909ULL;
    for (auto c : coords) h = mix64(h ^ mix64(c));
    return RngStream(h);
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, bound); bound > 0. Multiply-shift, bias < 2^-64 * bound.
  std::uint64_t below(std::uint64_t bound) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(engine_()) * bound) >> 64);
  }

  std::string state() const;
  void set_state(const std::string& s);

  friend bool operator==(const RngStream& a, const RngStream& b) { return a.engine_ == b.engine_; }

 private:
  std::mt19937_64 engine_;
};

/// Stream salts so that different consumers never share coordinates.
enum class Stream : std::uint64_t {
  Rollout = 1,
  Guide = 2,
  Confirm = 3,
  Kl = 4,
  Probe = 5,
  Shuffle = 6,
  Init = 7,
  Measure = 8,
};

inline std::uint64_t salt(Stream s) { return static_cast<std::uint64_t>(s); }

}  // namespace npo
