#pragma once

// Shared builders for the unit and acceptance tests.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "npo/grpo.hpp"
#include "npo/policy.hpp"
#include "npo/rng.hpp"
#include "npo/tasks.hpp"

namespace npo::testing {

inline Layout tiny_layout() {
  Layout l;
  l.vocab = 5;
  l.context = 2;
  l.hidden = 4;
  l.prompt_len = 3;
  l.max_response = 3;
  return l;
}

inline PolicyParams random_params(const Layout& l, std::uint64_t seed, double scale = 0.5) {
  PolicyParams p(l);
  RngStream rng(seed);
  for (auto& v : p.values) v = (2.0 * rng.uniform() - 1.0) * scale;
  return p;
}

/// A dataset of `count` random prompts with empty answers, ids 0..count-1.
inline Dataset random_prompts(const Layout& l, int count, std::uint64_t seed) {
  RngStream rng(seed);
  std::vector<Prompt> ps;
  for (int i = 0; i < count; ++i) {
    Prompt p;
    p.id = i;
    const int len = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(l.prompt_len)));
    for (int k = 0; k < len; ++k) p.tokens.push_back(static_cast<Token>(rng.below(static_cast<std::uint64_t>(l.vocab))));
    p.answer = {0};
    ps.push_back(p);
  }
  return Dataset(std::move(ps), seed);
}

inline TokenSeq random_tokens(const Layout& l, RngStream& rng) {
  const int len = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(l.max_response)));
  TokenSeq t;
  for (int k = 0; k < len; ++k) t.push_back(static_cast<Token>(rng.below(static_cast<std::uint64_t>(l.vocab))));
  return t;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("npo_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Central differences of f at params, step h.
template <class F>
std::vector<double> finite_diff(PolicyParams p, F&& f, double h = 1e-5) {
  std::vector<double> g(p.values.size());
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    const double x = p.values[i];
    p.values[i] = x + h;
    const double up = f(p);
    p.values[i] = x - h;
    const double down = f(p);
    p.values[i] = x;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

/// max_i |a_i - b_i| / max(max|a|, max|b|, floor)
inline double rel_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-8) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d / std::max({max_abs(a), max_abs(b), floor});
}

struct ObjectiveInstance {
  PolicyParams params;
  Dataset data;
  std::vector<RolloutGroup> groups;
};

// Random groups whose behavior logprobs sit near the current ones, away from the clip kinks.
inline ObjectiveInstance random_objective_instance(std::uint64_t seed, const ObjectiveConfig& cfg) {
  const auto l = tiny_layout();
  ObjectiveInstance in{random_params(l, seed), random_prompts(l, 3, seed), {}};
  RngStream r(seed * 7 + 1);
  for (int gi = 0; gi < 2; ++gi) {
    RolloutGroup g;
    g.prompt_id = gi;
    const auto& prompt = in.data.by_id(gi);
    for (int s = 0; s < 4; ++s) {
      Trajectory t;
      t.prompt_id = gi;
      t.tokens = random_tokens(l, r);
      t.behavior = s == 3 ? Behavior::Guide : Behavior::Current;
      const auto cur = sequence_logprobs(in.params, prompt.tokens, t.tokens, cfg.temperature);
      for (double c : cur) {
        double b = 0;
        for (;;) {
          b = c + (r.uniform() - 0.5) * 0.8;
          const double ratio = std::exp(c - b);
          if (std::abs(ratio - (1 - cfg.eps_low)) > 1e-3 && std::abs(ratio - (1 + cfg.eps_high)) > 1e-3) break;
        }
        t.behavior_logprobs.push_back(b);
      }
      t.reward = static_cast<int>(r.below(2));
      g.trajectories.push_back(t);
    }
    std::vector<double> adv;
    for (int s = 0; s < 4; ++s) adv.push_back(2.0 * r.uniform() - 1.0);
    g.advantages = adv;
    g.recompute_pass_rate();
    in.groups.push_back(g);
  }
  return in;
}

}  // namespace npo::testing
