#include "npo/controller.hpp"

#include <algorithm>
#include <cmath>

#include "npo/error.hpp"
#include "npo/grpo.hpp"

namespace npo {

void MistakePool::add(std::int64_t prompt_id, std::int64_t t_fail) {
  auto it = by_prompt_.find(prompt_id);
  if (it != by_prompt_.end()) {
    by_time_.erase({it->second, prompt_id});
    it->second = t_fail;
  } else {
    by_prompt_.emplace(prompt_id, t_fail);
  }
  by_time_.insert({t_fail, prompt_id});
  while (by_prompt_.size() > capacity_) {
    auto oldest = by_time_.begin();
    by_prompt_.erase(oldest->second);
    by_time_.erase(oldest);
  }
}

std::vector<PoolEntry> MistakePool::slice(std::int64_t delta, std::int64_t t) const {
  std::vector<PoolEntry> out;
  for (const auto& [pid, tf] : by_prompt_)
    if (tf >= t - delta) out.push_back({pid, tf});
  return out;
}

std::vector<PoolEntry> MistakePool::entries() const {
  std::vector<PoolEntry> out;
  out.reserve(by_prompt_.size());
  for (const auto& [pid, tf] : by_prompt_) out.push_back({pid, tf});
  return out;
}

std::optional<std::int64_t> MistakePool::t_fail(std::int64_t prompt_id) const {
  auto it = by_prompt_.find(prompt_id);
  if (it == by_prompt_.end()) return std::nullopt;
  return it->second;
}

void MistakePool::clear() {
  by_prompt_.clear();
  by_time_.clear();
}

void ControllerConfig::validate() const {
  if (!(tau_err >= 0 && tau_err <= 1) || !(tau_pass >= 0 && tau_pass <= 1))
    throw ConfigError("controller: thresholds must lie in [0, 1]");
  if (n_probe < 1 || t_probe < 1 || m < 1 || t_cool < 0 || stag_window < 1 || kl_samples < 1 || history < 2)
    throw ConfigError("controller: counts out of range");
  if (!(ema_alpha > 0 && ema_alpha <= 1)) throw ConfigError("controller: ema_alpha must lie in (0, 1]");
  if (!(v_proxy_c >= 0) || !std::isfinite(stag_delta)) throw ConfigError("controller: invalid v_proxy_c or stag_delta");
  if (pool_capacity < 1) throw ConfigError("controller: pool_capacity must be >= 1");
}

void ControllerState::rewind(std::int64_t step) {
  while (!ema_history.empty() && ema_history.back().first > step) ema_history.pop_back();
  while (!entropy_history.empty() && entropy_history.back().first > step) entropy_history.pop_back();
  if (!ema_history.empty()) reward_ema = ema_history.back().second;
  if (!entropy_history.empty()) entropy_ema = entropy_history.back().second;
  primed = !ema_history.empty();
}

void record_batch(MistakePool& pool, ControllerState& state, const BatchStats& stats, const ControllerConfig& cfg) {
  for (const auto& [pid, acc] : stats.group_accuracy)
    if (acc < cfg.tau_err) pool.add(pid, stats.step);
  if (!state.primed) {
    state.reward_ema = stats.mean_reward;
    state.entropy_ema = stats.mean_entropy;
    state.primed = true;
  } else {
    state.reward_ema = (1.0 - cfg.ema_alpha) * state.reward_ema + cfg.ema_alpha * stats.mean_reward;
    state.entropy_ema = (1.0 - cfg.ema_alpha) * state.entropy_ema + cfg.ema_alpha * stats.mean_entropy;
  }
  state.ema_history.emplace_back(stats.step, state.reward_ema);
  state.entropy_history.emplace_back(stats.step, state.entropy_ema);
  while (state.ema_history.size() > static_cast<std::size_t>(cfg.history)) state.ema_history.pop_front();
  while (state.entropy_history.size() > static_cast<std::size_t>(cfg.history)) state.entropy_history.pop_front();
}

namespace {
// Latest recorded value at or before `step`.
std::optional<double> value_at(const std::deque<std::pair<std::int64_t, double>>& h, std::int64_t step) {
  for (auto it = h.rbegin(); it != h.rend(); ++it)
    if (it->first <= step) return it->second;
  return std::nullopt;
}
}  // namespace

bool warning_check(ControllerState& state, const ControllerConfig& cfg, std::int64_t step) {
  if (state.in_retro || step < state.cooldown_until || step % cfg.t_probe != 0) return false;
  const auto r_now = value_at(state.ema_history, step);
  const auto r_then = value_at(state.ema_history, step - cfg.stag_window);
  const auto h_now = value_at(state.entropy_history, step);
  const auto h_then = value_at(state.entropy_history, step - cfg.stag_window);
  if (!r_now || !r_then || !h_now || !h_then) return false;
  const bool stagnant = *r_now - *r_then < cfg.stag_delta;
  const bool declining = *h_now - *h_then < 0.0;
  state.alert = (stagnant && declining) ? state.alert + 1 : 0;
  return state.alert >= cfg.m;
}

std::vector<QEstimate> q_by_delta(std::span<const ProbeOutcome> probes, std::span<const std::int64_t> deltas,
                                  std::int64_t t) {
  std::vector<QEstimate> out;
  for (auto delta : deltas) {
    QEstimate q{delta, 0, 0};
    for (const auto& p : probes) {
      if (p.t_fail < t - delta) continue;
      ++q.probed;
      q.solved += p.success;
    }
    if (q.probed > 0) out.push_back(q);
  }
  return out;
}

ConfirmResult confirm(const PolicyParams& params, const Dataset& data, const MistakePool& pool,
                      const ControllerConfig& cfg, RngStream& rng, std::int64_t t,
                      std::span<const std::int64_t> deltas, double temperature) {
  ConfirmResult out;
  auto entries = pool.entries();
  if (entries.empty()) return out;
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(cfg.n_probe), entries.size());
  // Partial Fisher-Yates: the first k entries become a uniform sample without replacement.
  for (std::size_t i = 0; i < k; ++i) std::swap(entries[i], entries[i + rng.below(entries.size() - i)]);
  const std::uint64_t nonce = rng.next_u64();
  int solved = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const Prompt& p = data.by_id(entries[i].prompt_id);
    auto stream = RngStream::derive({nonce, static_cast<std::uint64_t>(p.id), salt(Stream::Confirm)});
    const auto gen = generate(params, p.tokens, temperature, stream);
    const int ok = verify(p, gen.tokens, params.layout.vocab);
    solved += ok;
    out.probes.push_back({entries[i].prompt_id, entries[i].t_fail, ok});
  }
  out.p_hat = static_cast<double>(solved) / static_cast<double>(k);
  out.q = q_by_delta(out.probes, deltas, t);
  return out;
}

double estimate_V(double kl, double c) {
  if (!(kl >= 0.0)) throw ContractError("estimate_V: kl must be non-negative");
  return std::exp(c * kl);
}

std::int64_t select_rollback(std::span<const RollbackCandidate> candidates) {
  std::optional<std::int64_t> best;
  double best_ratio = 0.0;
  for (const auto& c : candidates) {
    if (!c.q) continue;
    if (!(c.v > 0.0)) throw SelectionError("select_rollback: variance proxy must be positive");
    const double ratio = *c.q / c.v;
    if (!best || ratio > best_ratio || (ratio == best_ratio && c.delta < *best)) {
      best = c.delta;
      best_ratio = ratio;
    }
  }
  if (!best) throw SelectionError("select_rollback: no candidate with a probed slice");
  return *best;
}

const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::Warning: return "warning";
    case EventKind::Confirm: return "confirm";
    case EventKind::Rollback: return "rollback";
    case EventKind::Resume: return "resume";
    case EventKind::CooldownStart: return "cooldown-start";
    case EventKind::Abort: return "abort";
  }
  return "?";
}

}  // namespace npo
