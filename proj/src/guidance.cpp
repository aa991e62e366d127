#include "npo/guidance.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>

#include "npo/error.hpp"

namespace npo {

const GuideEntry* GuidanceCache::find(std::int64_t prompt_id) const {
  lookups_.fetch_add(1, std::memory_order_relaxed);
  auto it = entries_.find(prompt_id);
  return it == entries_.end() ? nullptr : &it->second;
}

GuidanceCache build_cache(const PolicyParams& guide, std::span<const Prompt* const> prompts,
                          const CacheBuildConfig& cfg) {
  if (cfg.attempts_per_prompt < 1) throw ContractError("build_cache: attempts_per_prompt must be >= 1");
  GuidanceCache cache;
  for (const Prompt* p : prompts) {
    std::optional<Generation> best;
    double best_entropy = 0.0;
    for (int a = 0; a < cfg.attempts_per_prompt; ++a) {
      auto rng = RngStream::derive({cfg.seed, static_cast<std::uint64_t>(cfg.guide_step),
                                    static_cast<std::uint64_t>(p->id), static_cast<std::uint64_t>(a),
                                    salt(Stream::Guide)});
      auto gen = generate(guide, p->tokens, cfg.temperature, rng);
      if (!verify(*p, gen.tokens, guide.layout.vocab)) continue;
      const double h = std::accumulate(gen.entropies.begin(), gen.entropies.end(), 0.0) /
                       static_cast<double>(gen.entropies.size());
      if (!best) {
        best = std::move(gen);
        best_entropy = h;
        if (cfg.selection == Selection::First) break;
        continue;
      }
      const bool shorter = gen.tokens.size() < best->tokens.size();
      const bool tie_lower_h = gen.tokens.size() == best->tokens.size() && h < best_entropy;
      if (shorter || tie_lower_h) {
        best = std::move(gen);
        best_entropy = h;
      }
    }
    if (best) cache.put(p->id, GuideEntry{std::move(best->tokens), std::move(best->logprobs), cfg.guide_step, cfg.tag});
  }
  return cache;
}

RolloutGroup form_group(RolloutGroup group, const GuidanceCache& cache, const GateConfig& gate, const Prompt* prompt,
                        int vocab) {
  if (!(gate.tau_gate >= 0.0 && gate.tau_gate <= 1.0)) throw ContractError("form_group: tau_gate outside [0, 1]");
  if (group.advantages) throw ContractError("form_group: advantages already computed");
  if (group.trajectories.size() < 2) throw ContractError("form_group: group too small");
  if (group.pass_rate <= gate.tau_gate) {
    if (const GuideEntry* e = cache.find(group.prompt_id)) {
      Trajectory t;
      t.prompt_id = group.prompt_id;
      t.tokens = e->tokens;
      t.behavior = e->tag;
      t.behavior_logprobs = e->behavior_logprobs;
      t.reward = 1;
      if (gate.reverify) {
        if (!prompt || prompt->id != group.prompt_id) throw ContractError("form_group: reverify needs the prompt");
        if (!verify(*prompt, t.tokens, vocab))
          throw ContractError("form_group: cached entry for prompt " + std::to_string(group.prompt_id) +
                              " fails verification");
      }
      group.trajectories.back() = std::move(t);
      group.replaced = true;
    }
  }
  // pass_rate stays the on-policy p-hat that drove the gate.
  group.advantages = group_advantages(group.rewards());
  return group;
}

std::vector<RolloutGroup> rescore_guide_slots(const PolicyParams& params, const Dataset& data,
                                              std::span<const RolloutGroup> groups, bool is_correction,
                                              double temperature) {
  if (is_correction) return {groups.begin(), groups.end()};
  return detail::rescore_offpolicy(params, data, groups, temperature);
}

void write_cache(std::ostream& os, const GuidanceCache& cache) {
  char buf[40];
  for (const auto& [id, e] : cache.entries()) {
    os << id << ' ' << e.guide_step << ' ' << static_cast<int>(e.tag) << ' ' << e.tokens.size();
    for (auto t : e.tokens) os << ' ' << t;
    for (double lp : e.behavior_logprobs) {
      std::snprintf(buf, sizeof buf, "%.17g", lp);
      os << ' ' << buf;
    }
    os << '\n';
  }
}

GuidanceCache read_cache(std::istream& is) {
  GuidanceCache cache;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::int64_t id = 0;
    GuideEntry e;
    int tag = 0;
    std::size_t n = 0;
    auto fail = [&] { return ParseError("cache line " + std::to_string(lineno) + ": malformed record"); };
    if (!(ls >> id >> e.guide_step >> tag >> n) || tag < 0 || tag > 3) throw fail();
    e.tag = static_cast<Behavior>(tag);
    e.tokens.resize(n);
    e.behavior_logprobs.resize(n);
    for (auto& t : e.tokens)
      if (!(ls >> t)) throw fail();
    for (auto& lp : e.behavior_logprobs) {
      std::string s;
      if (!(ls >> s)) throw fail();
      lp = std::strtod(s.c_str(), nullptr);
    }
    cache.put(id, std::move(e));
  }
  return cache;
}

}  // namespace npo
