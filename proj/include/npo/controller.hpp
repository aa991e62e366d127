#pragma once

// AutoNPO controller. A warning plus a confirmation rollout gate each rollback;
// the distance maximizes Q/V.

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "npo/policy.hpp"
#include "npo/rng.hpp"
#include "npo/tasks.hpp"

namespace npo {

struct PoolEntry {
  std::int64_t prompt_id = 0;
  std::int64_t t_fail = 0;
  friend bool operator==(const PoolEntry&, const PoolEntry&) = default;
};

/// (prompt id, fail step) pairs; one live entry per prompt, latest failure wins.
class MistakePool {
 public:
  explicit MistakePool(std::size_t capacity = 100000) : capacity_(capacity) {}

  void add(std::int64_t prompt_id, std::int64_t t_fail);
  /// Entries with t_fail >= t - delta, ordered by prompt id.
  std::vector<PoolEntry> slice(std::int64_t delta, std::int64_t t) const;
  std::vector<PoolEntry> entries() const;
  std::optional<std::int64_t> t_fail(std::int64_t prompt_id) const;
  std::size_t size() const { return by_prompt_.size(); }
  bool empty() const { return by_prompt_.empty(); }
  std::size_t capacity() const { return capacity_; }
  void clear();

 private:
  std::size_t capacity_;
  std::map<std::int64_t, std::int64_t> by_prompt_;
  std::set<std::pair<std::int64_t, std::int64_t>> by_time_;  // (t_fail, prompt id)
};

struct ControllerConfig {
  double tau_err = 0.25;
  double tau_pass = 0.5;
  int n_probe = 64;
  int t_probe = 5;
  int m = 3;
  int t_cool = 20;
  double ema_alpha = 0.1;
  int stag_window = 20;
  double stag_delta = 0.005;
  double v_proxy_c = 1.0;
  int kl_samples = 64;
  std::size_t pool_capacity = 100000;
  int history = 512;      // ring length of the EMA histories
  bool kl_later_first = true;  // KL(pi_t || pi_{t-delta})

  void validate() const;
};

struct ControllerState {
  double reward_ema = 0.0;
  double entropy_ema = 0.0;
  bool primed = false;  // first observation seeds the EMAs
  std::deque<std::pair<std::int64_t, double>> ema_history;
  std::deque<std::pair<std::int64_t, double>> entropy_history;
  int alert = 0;
  bool in_retro = false;
  std::int64_t retro_resume_step = -1;
  std::int64_t cooldown_until = 0;

  /// Forget history later than `step` (after a rollback to `step`).
  void rewind(std::int64_t step);
};

struct BatchStats {
  std::int64_t step = 0;
  std::vector<std::pair<std::int64_t, double>> group_accuracy;  // (prompt id, on-policy pass rate)
  double mean_reward = 0.0;
  double mean_entropy = 0.0;
};

void record_batch(MistakePool& pool, ControllerState& state, const BatchStats& stats, const ControllerConfig& cfg);

/// Stage-1 warning. Inert (returns false, alert untouched) when the call is
/// off-cadence, in a retro segment, during cooldown, or history is too short.
bool warning_check(ControllerState& state, const ControllerConfig& cfg, std::int64_t step);

struct ProbeOutcome {
  std::int64_t prompt_id = 0;
  std::int64_t t_fail = 0;
  int success = 0;
};

struct QEstimate {
  std::int64_t delta = 0;
  int probed = 0;
  int solved = 0;
  double q() const { return probed > 0 ? static_cast<double>(solved) / probed : 0.0; }
};

struct ConfirmResult {
  double p_hat = 0.0;
  std::vector<ProbeOutcome> probes;
  std::vector<QEstimate> q;  // one per candidate delta with a non-empty probed slice
};

/// Q-hat per candidate delta from already-computed probe outcomes.
std::vector<QEstimate> q_by_delta(std::span<const ProbeOutcome> probes, std::span<const std::int64_t> deltas,
                                  std::int64_t t);

/// Stage-2 confirmation: one rollout per probed pool prompt with the current params.
ConfirmResult confirm(const PolicyParams& params, const Dataset& data, const MistakePool& pool,
                      const ControllerConfig& cfg, RngStream& rng, std::int64_t t,
                      std::span<const std::int64_t> deltas, double temperature = 1.0);

double estimate_V(double kl, double c);

struct RollbackCandidate {
  std::int64_t delta = 0;
  std::optional<double> q;  // absent when the probed slice is empty
  double v = 1.0;
};

/// argmax q / v; ties go to the smallest delta; candidates without q are skipped.
std::int64_t select_rollback(std::span<const RollbackCandidate> candidates);

enum class EventKind { Warning, Confirm, Rollback, Resume, CooldownStart, Abort };
const char* to_string(EventKind k);

struct ControllerEvent {
  EventKind kind = EventKind::Warning;
  std::int64_t step = 0;  // model step at which the event happened
  double p_hat = 0.0;
  std::vector<std::pair<std::int64_t, double>> q_table;
  std::vector<std::pair<std::int64_t, double>> v_table;
  std::int64_t delta = 0;
  std::int64_t target_step = 0;
  std::string note;

  friend bool operator==(const ControllerEvent&, const ControllerEvent&) = default;
};

}  // namespace npo
