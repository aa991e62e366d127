#include "npo/sources.hpp"

#include <cmath>
#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>

#include "npo/error.hpp"

namespace npo {

bool ReplayBuffer::admit(const Trajectory& t, std::int64_t step) {
  if (t.reward != 1 || capacity_ == 0) return false;
  if (entries_.count(t.prompt_id)) return false;
  if (entries_.size() >= capacity_) {
    auto oldest = entries_.begin();
    for (auto it = entries_.begin(); it != entries_.end(); ++it)
      if (it->second.seq < oldest->second.seq) oldest = it;
    entries_.erase(oldest);
  }
  entries_.emplace(t.prompt_id, Stored{t, step, next_seq_++});
  return true;
}

const Trajectory* ReplayBuffer::find(std::int64_t prompt_id) const {
  auto it = entries_.find(prompt_id);
  return it == entries_.end() ? nullptr : &it->second.trajectory;
}

std::optional<std::int64_t> ReplayBuffer::stored_step(std::int64_t prompt_id) const {
  auto it = entries_.find(prompt_id);
  if (it == entries_.end()) return std::nullopt;
  return it->second.step;
}

Behavior behavior_tag(SourceKind k) {
  switch (k) {
    case SourceKind::NearFuture:
    case SourceKind::FarFuture:
      return Behavior::Guide;
    case SourceKind::PastReplay:
      return Behavior::Replay;
    case SourceKind::ExternalOracle:
      return Behavior::External;
  }
  return Behavior::Guide;
}

std::optional<Trajectory> source_guidance(const TrajectorySource& source, const Prompt& prompt, int vocab) {
  Trajectory t;
  t.prompt_id = prompt.id;
  t.behavior = behavior_tag(source.kind);
  t.reward = 1;
  switch (source.kind) {
    case SourceKind::NearFuture:
    case SourceKind::FarFuture: {
      if (!source.guide) throw ContractError("source_guidance: guide params missing");
      CacheBuildConfig bc;
      bc.attempts_per_prompt = source.attempts_per_prompt;
      bc.selection = source.selection;
      bc.temperature = source.temperature;
      bc.seed = source.seed;
      bc.guide_step = source.guide_step;
      const Prompt* one[] = {&prompt};
      auto cache = build_cache(*source.guide, one, bc);
      const GuideEntry* e = cache.find(prompt.id);
      if (!e) return std::nullopt;
      t.tokens = e->tokens;
      t.behavior_logprobs = e->behavior_logprobs;
      return t;
    }
    case SourceKind::PastReplay: {
      if (!source.buffer) throw ContractError("source_guidance: replay buffer missing");
      const Trajectory* r = source.buffer->find(prompt.id);
      if (!r) return std::nullopt;
      t.tokens = r->tokens;
      t.behavior_logprobs = r->behavior_logprobs;
      return t;
    }
    case SourceKind::ExternalOracle: {
      // Hand-written solution: no behavior policy, so its density is taken as 1.
      t.tokens = prompt.answer;
      t.tokens.push_back(static_cast<Token>(vocab - 1));
      t.behavior_logprobs.assign(t.tokens.size(), 0.0);
      if (!verify(prompt, t.tokens, vocab)) throw ContractError("source_guidance: oracle answer fails verification");
      return t;
    }
  }
  return std::nullopt;
}

GuidanceCache cache_from_source(const TrajectorySource& source, std::span<const Prompt* const> prompts, int vocab) {
  GuidanceCache cache;
  for (const Prompt* p : prompts) {
    auto t = source_guidance(source, *p, vocab);
    if (!t) continue;
    std::int64_t step = source.guide_step;
    if (source.kind == SourceKind::PastReplay) step = source.buffer->stored_step(p->id).value_or(0);
    cache.put(p->id, GuideEntry{std::move(t->tokens), std::move(t->behavior_logprobs), step, t->behavior});
  }
  return cache;
}

namespace {

int successes(const PolicyParams& params, const Prompt& p, int n, double temperature, std::uint64_t seed,
              Stream stream) {
  int ok = 0;
  for (int slot = 0; slot < n; ++slot) {
    auto rng = RngStream::derive({seed, static_cast<std::uint64_t>(p.id), static_cast<std::uint64_t>(slot),
                                  salt(stream)});
    auto g = generate(params, p.tokens, temperature, rng);
    ok += verify(p, g.tokens, params.layout.vocab);
  }
  return ok;
}

}  // namespace

std::vector<QvRow> measure_qv(const CheckpointStore& store, const Dataset& data, const QvOptions& opt,
                              double temperature) {
  if (opt.n < 1) throw ContractError("measure_qv: n must be >= 1");
  const auto anchor = store.load(opt.anchor);
  std::vector<const Prompt*> probes;
  for (const auto& p : data.prompts()) {
    if (opt.probe_count > 0 && static_cast<int>(probes.size()) >= opt.probe_count) break;
    probes.push_back(&p);
  }
  std::vector<const Prompt*> failed;
  for (const Prompt* p : probes)
    if (successes(anchor.params, *p, opt.n, temperature, opt.seed, Stream::Probe) == 0) failed.push_back(p);

  std::vector<QvRow> rows;
  for (auto delta : opt.deltas) {
    const std::int64_t later_step = opt.anchor + delta;
    if (!store.contains(later_step)) {
      std::cerr << "measure-qv: no checkpoint at step " << later_step << ", skipping delta " << delta << "\n";
      continue;
    }
    const auto later = store.load(later_step);
    QvRow row;
    row.delta = delta;
    row.failed = static_cast<int>(failed.size());
    int solved = 0;
    for (const Prompt* p : failed)
      if (successes(later.params, *p, opt.n, temperature, opt.seed, Stream::Measure) > 0) ++solved;
    if (!failed.empty()) {
      row.q = static_cast<double>(solved) / static_cast<double>(failed.size());
      row.q_std_err = std::sqrt(row.q * (1.0 - row.q) / static_cast<double>(failed.size()));
    }
    const auto kl = kl_between_params(later.params, anchor.params, probes, opt.kl_samples,
                                      mix64(opt.seed ^ salt(Stream::Kl)), temperature);
    row.kl = kl.mean;
    row.kl_std_err = kl.std_err;
    row.v = std::exp(opt.v_proxy_c * kl.mean);
    row.s = row.q / row.v;
    rows.push_back(row);
  }
  return rows;
}

std::vector<QvRow> measure_qv_run(const std::filesystem::path& run_dir, const QvOptions& opt) {
  const auto cfg = load_config(run_dir / "config.json");
  const auto data = make_dataset(cfg);
  if (!std::filesystem::exists(run_dir / "checkpoints"))
    throw NotFoundError("measure-qv: no checkpoints under " + run_dir.string());
  const CheckpointStore store(run_dir / "checkpoints", cfg.checkpoints);
  QvOptions o = opt;
  if (o.deltas.empty())
    for (auto s : store.steps())
      if (s >= o.anchor) o.deltas.push_back(s - o.anchor);
  return measure_qv(store, data, o, cfg.grpo.temperature);
}

void write_qv_table(std::ostream& os, std::span<const QvRow> rows) {
  os << "delta\tq\tq_se\tfailed\tkl\tkl_se\tv\ts\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%lld\t%.17g\t%.17g\t%d\t%.17g\t%.17g\t%.17g\t%.17g\n",
                  static_cast<long long>(r.delta), r.q, r.q_std_err, r.failed, r.kl, r.kl_std_err, r.v, r.s);
    os << buf;
  }
}

std::vector<QvRow> read_qv_table(std::istream& is) {
  std::vector<QvRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line.rfind("delta", 0) == 0) continue;
    std::istringstream ls(line);
    QvRow r;
    if (!(ls >> r.delta >> r.q >> r.q_std_err >> r.failed >> r.kl >> r.kl_std_err >> r.v >> r.s))
      throw ParseError("qv line " + std::to_string(lineno) + ": malformed row");
    rows.push_back(r);
  }
  return rows;
}

}  // namespace npo
