#pragma once

// Training loop shared by every mode, plus the AutoNPO controller hooks.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "npo/checkpoint.hpp"
#include "npo/config.hpp"
#include "npo/controller.hpp"
#include "npo/guidance.hpp"
#include "npo/metrics.hpp"
#include "npo/sources.hpp"

namespace npo {

struct ActiveGuidance {
  GuidanceCache cache;
  GateConfig gate;
  std::optional<std::set<std::int64_t>> restrict_to;  // only these prompts consult the cache
  std::int64_t from_step = 0;                         // guided while from_step <= t < until_step
  std::int64_t until_step = 0;
};

struct TrainerOptions {
  bool write_metrics = true;
  bool save_checkpoints = true;
  bool controller = false;  // run the AutoNPO trigger/rollback logic
  bool initial_checkpoint = true;  // save the starting params at construction
  bool collect_replay = false;
  std::int64_t replay_until = -1;  // collect successes while t < replay_until (-1: always)
};

/// One run: params, optimizer, data cursor, controller state, checkpoint store
/// and metrics stream. Iteration `t` rolls out with the params after t updates.
class Trainer {
 public:
  Trainer(RunConfig cfg, std::filesystem::path dir, TrainerOptions opt = {});

  const RunConfig& config() const { return cfg_; }
  const Dataset& data() const { return data_; }
  const PolicyParams& params() const { return params_; }
  const OptimizerState& optimizer() const { return opt_; }
  const MistakePool& pool() const { return pool_; }
  const ControllerState& controller_state() const { return ctl_; }
  ControllerState& controller_state() { return ctl_; }
  MistakePool& pool() { return pool_; }
  CheckpointStore& store() { return store_; }
  const CheckpointStore& store() const { return store_; }
  const ReplayBuffer& replay_buffer() const { return replay_; }
  const std::vector<ControllerEvent>& events() const { return events_; }
  const std::vector<MetricsRecord>& history() const { return records_; }
  const std::filesystem::path& dir() const { return dir_; }

  std::int64_t model_step() const { return model_step_; }
  std::int64_t iteration() const { return iteration_; }
  void set_iteration(std::int64_t it) { iteration_ = it; }

  /// One training iteration; runs the controller afterwards when enabled.
  MetricsRecord step();
  void run_until(std::int64_t model_step);

  void set_guidance(ActiveGuidance g) { guidance_ = std::move(g); }
  void clear_guidance() { guidance_.reset(); }
  const ActiveGuidance* guidance() const { return guidance_ ? &*guidance_ : nullptr; }
  bool guided_now() const;

  CheckpointRecord snapshot() const;
  /// Restores model, optimizer, data cursor and rng streams; the controller
  /// and pool are restored too when `with_controller` is set.
  void restore(const CheckpointRecord& r, bool with_controller = true);
  void save_checkpoint();
  void write_record(const MetricsRecord& r);

  /// AutoNPO stages at the end of iteration t.
  void controller_tick(std::int64_t t);
  /// Confirmation + rollback selection + execution; returns true if a rollback happened.
  bool intervene(std::int64_t t);

  /// Test hook: replaces the default warning predicate.
  std::function<bool(ControllerState&, const ControllerConfig&, std::int64_t)> warning_override;

 private:
  std::string encode_trainer_state() const;
  void decode_trainer_state(const std::string& s);
  void emit(ControllerEvent e);

  RunConfig cfg_;
  std::filesystem::path dir_;
  TrainerOptions opt_flags_;
  Dataset data_;
  PolicyParams params_;
  OptimizerState opt_;
  MistakePool pool_;
  ControllerState ctl_;
  RngStream controller_rng_;
  CheckpointStore store_;
  MetricsWriter metrics_;
  ReplayBuffer replay_;
  std::optional<ActiveGuidance> guidance_;
  std::vector<ControllerEvent> events_;
  std::vector<MetricsRecord> records_;
  std::int64_t model_step_ = 0;
  std::int64_t iteration_ = 0;
};

/// Executes the configured mode and returns the run directory.
std::filesystem::path cmd_train(const RunConfig& cfg);

struct ReplayReport {
  bool ok = true;
  std::int64_t first_divergence = -1;  // model step
  std::string field;
  std::int64_t compared = 0;
};

/// Re-executes [from, to] from the run's checkpoint with guidance disabled and
/// diffs every metrics field against the original stream.
ReplayReport cmd_replay(const std::filesystem::path& run_dir, std::int64_t from, std::int64_t to);

/// Mean of reward_mean over the last `window` training records.
double final_reward(std::span<const MetricsRecord> records, int window = 20);

/// First model step whose trailing-`window` mean reward reaches `threshold`; -1 if never.
std::int64_t steps_to_reach(std::span<const MetricsRecord> records, double threshold, int window = 10);

std::vector<MetricsRecord> training_records(std::span<const MetricsLine> lines);

}  // namespace npo
