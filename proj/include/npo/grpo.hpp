#pragma once

// Group-relative policy optimization with a clipped mixed-policy surrogate
// and Adam ascent.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "npo/policy.hpp"
#include "npo/tasks.hpp"

namespace npo {

enum class Behavior : int { Current = 0, Guide = 1, External = 2, Replay = 3 };

const char* to_string(Behavior b);

struct Trajectory {
  std::int64_t prompt_id = 0;
  TokenSeq tokens;
  int reward = 0;
  Behavior behavior = Behavior::Current;
  std::vector<double> behavior_logprobs;
  std::vector<double> entropies;  // per-token entropy at sampling time (on-policy slots only)
};

struct RolloutGroup {
  std::int64_t prompt_id = 0;
  std::vector<Trajectory> trajectories;
  double pass_rate = 0.0;
  std::optional<std::vector<double>> advantages;
  bool replaced = false;

  std::vector<double> rewards() const;
  void recompute_pass_rate();
};

struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  OptimizerState() = default;
  OptimizerState(std::size_t n, double lr_, double b1 = 0.9, double b2 = 0.999, double e = 1e-8)
      : m(n, 0.0), v(n, 0.0), lr(lr_), beta1(b1), beta2(b2), eps(e) {}

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// Coordinates of the per-slot sampling streams.
struct RolloutKey {
  std::uint64_t seed = 0;
  std::int64_t step = 0;
  std::uint64_t salt = 1;
};

RolloutGroup rollout_group(const PolicyParams& params, const Prompt& prompt, int n, double temperature,
                           const RolloutKey& key);

/// A_i = (r_i - mean) / std with population std; all zeros if std < 1e-8.
std::vector<double> group_advantages(std::span<const double> rewards);

double importance_ratio(double current_logprob, double behavior_logprob);

/// min(ratio * A, clamp(ratio, 1 - eps_low, 1 + eps_high) * A).
double clipped_term(double ratio, double advantage, double eps_low, double eps_high);

struct LossResult {
  double loss = 0.0;  // objective value (ascended)
  std::vector<double> gradient;
  std::int64_t clipped_tokens = 0;
  std::int64_t total_tokens = 0;
};

struct ObjectiveConfig {
  double eps_low = 0.2;
  double eps_high = 0.28;
  double temperature = 1.0;
};

/// Clipped objective averaged over groups. With is_correction off, guide-slot
/// denominators are replaced by current-policy scores before evaluation.
LossResult npo_loss_and_grad(const PolicyParams& params, const Dataset& data, std::span<const RolloutGroup> groups,
                             const ObjectiveConfig& cfg, bool is_correction);

/// Same objective with every denominator taken as given (no rescoring).
LossResult clipped_objective(const PolicyParams& params, const Dataset& data, std::span<const RolloutGroup> groups,
                             const ObjectiveConfig& cfg);

/// Adam ascent step. Throws NumericError on a non-finite gradient.
/// An all-zero gradient advances the moments but leaves params untouched.
void optimizer_step(PolicyParams& params, OptimizerState& state, std::span<const double> gradient);

double l2_norm(std::span<const double> v);

namespace detail {
/// Copies `groups`, overwriting every non-current slot's denominators with current-policy scores.
std::vector<RolloutGroup> rescore_offpolicy(const PolicyParams& params, const Dataset& data,
                                            std::span<const RolloutGroup> groups, double temperature);
}  // namespace detail

}  // namespace npo
