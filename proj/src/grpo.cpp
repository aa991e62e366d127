#include "npo/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "npo/error.hpp"

namespace npo {

const char* to_string(Behavior b) {
  switch (b) {
    case Behavior::Current: return "current";
    case Behavior::Guide: return "guide";
    case Behavior::External: return "external";
    case Behavior::Replay: return "replay";
  }
  return "?";
}

std::vector<double> RolloutGroup::rewards() const {
  std::vector<double> r;
  r.reserve(trajectories.size());
  for (const auto& t : trajectories) r.push_back(t.reward);
  return r;
}

void RolloutGroup::recompute_pass_rate() {
  double s = 0.0;
  for (const auto& t : trajectories) s += t.reward;
  pass_rate = trajectories.empty() ? 0.0 : s / static_cast<double>(trajectories.size());
}

RolloutGroup rollout_group(const PolicyParams& params, const Prompt& prompt, int n, double temperature,
                           const RolloutKey& key) {
  if (n < 2) throw ContractError("rollout_group: n must be >= 2");
  RolloutGroup g;
  g.prompt_id = prompt.id;
  g.trajectories.reserve(n);
  for (int slot = 0; slot < n; ++slot) {
    auto rng = RngStream::derive({key.seed, static_cast<std::uint64_t>(key.step),
                                  static_cast<std::uint64_t>(prompt.id), static_cast<std::uint64_t>(slot), key.salt});
    auto gen = generate(params, prompt.tokens, temperature, rng);
    Trajectory t;
    t.prompt_id = prompt.id;
    t.reward = verify(prompt, gen.tokens, params.layout.vocab);
    t.tokens = std::move(gen.tokens);
    t.behavior = Behavior::Current;
    t.behavior_logprobs = std::move(gen.logprobs);
    t.entropies = std::move(gen.entropies);
    g.trajectories.push_back(std::move(t));
  }
  g.recompute_pass_rate();
  return g;
}

std::vector<double> group_advantages(std::span<const double> rewards) {
  const std::size_t n = rewards.size();
  if (n < 2) throw ContractError("group_advantages: need at least two rewards");
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / static_cast<double>(n));
  std::vector<double> a(n, 0.0);
  if (sd < 1e-8) return a;
  for (std::size_t i = 0; i < n; ++i) a[i] = (rewards[i] - mean) / sd;
  return a;
}

double importance_ratio(double current_logprob, double behavior_logprob) {
  return std::exp(current_logprob - behavior_logprob);
}

double clipped_term(double ratio, double advantage, double eps_low, double eps_high) {
  const double clipped = std::clamp(ratio, 1.0 - eps_low, 1.0 + eps_high);
  return std::min(ratio * advantage, clipped * advantage);
}

LossResult clipped_objective(const PolicyParams& params, const Dataset& data, std::span<const RolloutGroup> groups,
                             const ObjectiveConfig& cfg) {
  if (!(cfg.eps_low > 0.0) || !(cfg.eps_high > 0.0)) throw ContractError("objective: eps must be positive");
  LossResult out;
  out.gradient.assign(params.values.size(), 0.0);
  if (groups.empty()) return out;
  const double group_scale = 1.0 / static_cast<double>(groups.size());

  for (const auto& g : groups) {
    if (!g.advantages) throw ContractError("objective: group " + std::to_string(g.prompt_id) + " has no advantages");
    const auto& adv = *g.advantages;
    if (adv.size() != g.trajectories.size()) throw ContractError("objective: advantage count mismatch");
    const Prompt& prompt = data.by_id(g.prompt_id);
    const double slot_scale = group_scale / static_cast<double>(g.trajectories.size());

    for (std::size_t i = 0; i < g.trajectories.size(); ++i) {
      const auto& tr = g.trajectories[i];
      out.total_tokens += static_cast<std::int64_t>(tr.tokens.size());
      // Zero advantage: both branches are exactly zero.
      if (adv[i] == 0.0 || tr.tokens.empty()) continue;
      if (tr.behavior_logprobs.size() != tr.tokens.size())
        throw ContractError("objective: behavior logprobs do not match tokens");
      const double scale = slot_scale / static_cast<double>(tr.tokens.size());
      for (std::size_t t = 0; t < tr.tokens.size(); ++t) {
        ContextFeatures ctx(params.layout, prompt.tokens, std::span<const Token>(tr.tokens).first(t));
        const double cur = forward(params, ctx, cfg.temperature).log_probs()[tr.tokens[t]];
        const double ratio = importance_ratio(cur, tr.behavior_logprobs[t]);
        const double unclipped = ratio * adv[i];
        const double clipped = std::clamp(ratio, 1.0 - cfg.eps_low, 1.0 + cfg.eps_high) * adv[i];
        if (unclipped <= clipped) {
          out.loss += scale * unclipped;
          accumulate_grad(params, ctx, tr.tokens[t], scale * unclipped, cfg.temperature, out.gradient);
        } else {
          out.loss += scale * clipped;
          ++out.clipped_tokens;
        }
      }
    }
  }
  return out;
}

namespace detail {
std::vector<RolloutGroup> rescore_offpolicy(const PolicyParams& params, const Dataset& data,
                                            std::span<const RolloutGroup> groups, double temperature) {
  std::vector<RolloutGroup> out(groups.begin(), groups.end());
  for (auto& g : out) {
    const Prompt* prompt = nullptr;
    for (auto& tr : g.trajectories) {
      if (tr.behavior == Behavior::Current) continue;
      if (!prompt) prompt = &data.by_id(g.prompt_id);
      tr.behavior_logprobs = sequence_logprobs(params, prompt->tokens, tr.tokens, temperature);
    }
  }
  return out;
}
}  // namespace detail

LossResult npo_loss_and_grad(const PolicyParams& params, const Dataset& data, std::span<const RolloutGroup> groups,
                             const ObjectiveConfig& cfg, bool is_correction) {
  if (is_correction) return clipped_objective(params, data, groups, cfg);
  const auto rescored = detail::rescore_offpolicy(params, data, groups, cfg.temperature);
  return clipped_objective(params, data, rescored, cfg);
}

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

void optimizer_step(PolicyParams& params, OptimizerState& st, std::span<const double> g) {
  const std::size_t n = params.values.size();
  if (g.size() != n || st.m.size() != n || st.v.size() != n)
    throw ContractError("optimizer_step: gradient/moment shape does not match parameters");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(g[i])) {
      std::ostringstream os;
      os << "optimizer_step: non-finite gradient at index " << i << " (value " << g[i] << ", step " << st.step
         << ")";
      throw NumericError(os.str());
    }
  }
  const bool zero = std::all_of(g.begin(), g.end(), [](double x) { return x == 0.0; });
  ++st.step;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < n; ++i) {
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g[i];
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g[i] * g[i];
    if (zero) continue;
    const double mhat = st.m[i] / bc1;
    const double vhat = st.v[i] / bc2;
    params.values[i] += st.lr * mhat / (std::sqrt(vhat) + st.eps);
  }
  if (!params.all_finite()) throw NumericError("optimizer_step: parameters became non-finite");
}

}  // namespace npo
