#pragma once

// Near-future guidance: a per-prompt cache of verified-correct guide
// trajectories and gated replacement of the last rollout slot.

#include <atomic>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "npo/grpo.hpp"

namespace npo {

struct GuideEntry {
  TokenSeq tokens;
  std::vector<double> behavior_logprobs;
  std::int64_t guide_step = 0;
  Behavior tag = Behavior::Guide;

  friend bool operator==(const GuideEntry&, const GuideEntry&) = default;
};

class GuidanceCache {
 public:
  GuidanceCache() = default;
  GuidanceCache(const GuidanceCache& o) : entries_(o.entries_) {}
  GuidanceCache& operator=(const GuidanceCache& o) {
    entries_ = o.entries_;
    return *this;
  }

  /// Inserts or replaces; the caller guarantees the entry verifies.
  void put(std::int64_t prompt_id, GuideEntry e) { entries_[prompt_id] = std::move(e); }
  const GuideEntry* find(std::int64_t prompt_id) const;

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::map<std::int64_t, GuideEntry>& entries() const { return entries_; }

  /// Number of find() calls since construction; used to check that
  /// restricted prompts never touch the cache.
  std::int64_t lookups() const { return lookups_.load(std::memory_order_relaxed); }

 private:
  std::map<std::int64_t, GuideEntry> entries_;
  mutable std::atomic<std::int64_t> lookups_{0};
};

struct GateConfig {
  double tau_gate = 0.6;
  bool reverify = false;  // re-run the verifier on injected entries
};

enum class Selection { ShortestThenEntropy, First };

struct CacheBuildConfig {
  int attempts_per_prompt = 8;
  Selection selection = Selection::ShortestThenEntropy;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  std::int64_t guide_step = 0;
  Behavior tag = Behavior::Guide;
};

/// Samples up to attempts_per_prompt responses per prompt from the guide and
/// keeps one verified-correct response; unsolved prompts are absent.
GuidanceCache build_cache(const PolicyParams& guide, std::span<const Prompt* const> prompts,
                          const CacheBuildConfig& cfg);

/// Eq.-3 group formation: the last slot becomes the guide entry when
/// pass_rate <= tau_gate and the prompt is cached. Advantages are computed on
/// the resulting group.
RolloutGroup form_group(RolloutGroup group, const GuidanceCache& cache, const GateConfig& gate,
                        const Prompt* prompt = nullptr, int vocab = 16);

/// With is_correction on, guide slots keep their stored denominators; with
/// it off they are rescored under `params` so their ratios start at 1.
std::vector<RolloutGroup> rescore_guide_slots(const PolicyParams& params, const Dataset& data,
                                              std::span<const RolloutGroup> groups, bool is_correction,
                                              double temperature = 1.0);

/// One record per line: prompt_id guide_step tag n tokens... logprobs...
void write_cache(std::ostream& os, const GuidanceCache& cache);
GuidanceCache read_cache(std::istream& is);

}  // namespace npo
