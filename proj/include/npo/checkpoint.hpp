#pragma once

// Versioned checkpoint store for bit-exact rollback, and checkpoint-to-checkpoint KL.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "npo/grpo.hpp"
#include "npo/tasks.hpp"

namespace npo {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct CheckpointRecord {
  std::int64_t step = 0;
  PolicyParams params;
  OptimizerState optimizer;
  std::map<std::string, std::string> rng_states;
  DataCursor data_cursor;
  std::string trainer_state;  // opaque controller/metrics state
  std::uint32_t format_version = kCheckpointFormatVersion;

  friend bool operator==(const CheckpointRecord&, const CheckpointRecord&) = default;
};

std::string encode_checkpoint(const CheckpointRecord& r);
CheckpointRecord decode_checkpoint(std::string_view bytes);

/// FNV-1a, 64 bit.
std::uint64_t checksum64(std::string_view bytes);

struct Retention {
  int every = 10;  // save cadence in steps
  int keep = 64;   // ring size
};

/// One file per step (ckpt_<zero-padded step>.npo) plus a manifest of live steps.
class CheckpointStore {
 public:
  CheckpointStore() = default;
  CheckpointStore(std::filesystem::path root, Retention retention);

  const std::filesystem::path& root() const { return root_; }
  const Retention& retention() const { return retention_; }

  std::int64_t save(const CheckpointRecord& record);
  CheckpointRecord load(std::int64_t step) const;
  bool contains(std::int64_t step) const;
  std::vector<std::int64_t> steps() const { return steps_; }
  /// Drops every checkpoint later than `step` (used when history is rewritten).
  void truncate_after(std::int64_t step);
  bool due(std::int64_t step) const { return retention_.every > 0 && step % retention_.every == 0; }

  std::filesystem::path path_for(std::int64_t step) const;

 private:
  void write_manifest() const;

  std::filesystem::path root_;
  Retention retention_;
  std::vector<std::int64_t> steps_;
};

struct KlEstimate {
  double mean = 0.0;     // mean per-token KL(pi_a || pi_b), nats
  double std_err = 0.0;  // standard error across sampled trajectories
  std::int64_t tokens = 0;
};

/// Samples trajectories from pi_a on the probe prompts and averages the exact
/// per-token KL between the two tempered distributions at each visited context.
KlEstimate kl_between_params(const PolicyParams& a, const PolicyParams& b, std::span<const Prompt* const> probes,
                             int samples, std::uint64_t seed, double temperature = 1.0);

KlEstimate kl_between(const CheckpointStore& store, std::int64_t step_a, std::int64_t step_b,
                      std::span<const Prompt* const> probes, int samples, std::uint64_t seed,
                      double temperature = 1.0);

}  // namespace npo
