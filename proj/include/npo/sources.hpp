#pragma once

// Guidance trajectory sources spanning the quality/variance plane, and the
// Q/V/S measurement over a run's checkpoints.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "npo/config.hpp"
#include "npo/guidance.hpp"

namespace npo {

/// First verified-correct trajectory per prompt, ring-evicted by insertion order.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 4096) : capacity_(capacity) {}

  /// Admits only reward-1 trajectories for prompts not yet stored. Returns true if stored.
  bool admit(const Trajectory& t, std::int64_t step);
  const Trajectory* find(std::int64_t prompt_id) const;
  std::optional<std::int64_t> stored_step(std::int64_t prompt_id) const;
  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }

 private:
  struct Stored {
    Trajectory trajectory;
    std::int64_t step;
    std::uint64_t seq;
  };
  std::size_t capacity_;
  std::uint64_t next_seq_ = 0;
  std::map<std::int64_t, Stored> entries_;
};

struct TrajectorySource {
  SourceKind kind = SourceKind::NearFuture;
  const PolicyParams* guide = nullptr;  // near_future / far_future
  std::int64_t guide_step = 0;
  const ReplayBuffer* buffer = nullptr;  // past_replay
  int attempts_per_prompt = 8;
  Selection selection = Selection::ShortestThenEntropy;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

Behavior behavior_tag(SourceKind k);

std::optional<Trajectory> source_guidance(const TrajectorySource& source, const Prompt& prompt, int vocab = 16);

/// Runs source_guidance over `prompts` and collects the results into a cache.
GuidanceCache cache_from_source(const TrajectorySource& source, std::span<const Prompt* const> prompts,
                                int vocab = 16);

struct QvRow {
  std::int64_t delta = 0;
  double q = 0.0;
  double q_std_err = 0.0;
  int failed = 0;  // probe prompts failed by the anchor policy
  double kl = 0.0;
  double kl_std_err = 0.0;
  double v = 1.0;
  double s = 0.0;
};

struct QvOptions {
  std::int64_t anchor = 0;
  std::vector<std::int64_t> deltas;
  int probe_count = 0;  // 0 = whole dataset
  int n = 8;
  int kl_samples = 256;
  double v_proxy_c = 1.0;
  std::uint64_t seed = 0;
};

/// Q(delta) = fraction of anchor-failed probes that the anchor+delta policy
/// solves at least once in n attempts; V = exp(c * KL(later || anchor)); S = Q / V.
std::vector<QvRow> measure_qv(const CheckpointStore& store, const Dataset& data, const QvOptions& opt,
                              double temperature = 1.0);

/// Loads the run's resolved config and checkpoint store, then measures.
std::vector<QvRow> measure_qv_run(const std::filesystem::path& run_dir, const QvOptions& opt);

/// Tab-separated: delta q kl v s, with a header line.
void write_qv_table(std::ostream& os, std::span<const QvRow> rows);
std::vector<QvRow> read_qv_table(std::istream& is);

}  // namespace npo
