#include "npo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <thread>

#include <json.hpp>

#include "npo/error.hpp"

namespace npo {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Selection parse_selection(const std::string& s) { return s == "first" ? Selection::First : Selection::ShortestThenEntropy; }

template <class F>
void parallel_for(std::size_t count, int threads, F&& fn) {
  if (threads <= 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  const auto workers = static_cast<std::size_t>(std::min<std::size_t>(threads, count));
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < count; i += workers) fn(i);
    });
}

}  // namespace

Trainer::Trainer(RunConfig cfg, fs::path dir, TrainerOptions opt)
    : cfg_(std::move(cfg)),
      dir_(std::move(dir)),
      opt_flags_(opt),
      data_(make_dataset(cfg_)),
      params_(PolicyParams::init(cfg_.policy, cfg_.seed, cfg_.grpo.init_scale, cfg_.grpo.init_scale_input)),
      opt_(params_.values.size(), cfg_.grpo.lr, cfg_.grpo.beta1, cfg_.grpo.beta2, cfg_.grpo.adam_eps),
      pool_(cfg_.controller.pool_capacity),
      controller_rng_(RngStream::derive({cfg_.seed, salt(Stream::Confirm)})),
      replay_(cfg_.source.replay_capacity) {
  if (opt_flags_.save_checkpoints) {
    fs::remove_all(dir_ / "checkpoints");
    store_ = CheckpointStore(dir_ / "checkpoints", cfg_.checkpoints);
    if (opt_flags_.initial_checkpoint) save_checkpoint();
  }
  if (opt_flags_.write_metrics) metrics_ = MetricsWriter(dir_ / "metrics.jsonl");
}

bool Trainer::guided_now() const {
  return guidance_ && model_step_ >= guidance_->from_step && model_step_ < guidance_->until_step;
}

std::string Trainer::encode_trainer_state() const {
  json j;
  j["reward_ema"] = ctl_.reward_ema;
  j["entropy_ema"] = ctl_.entropy_ema;
  j["primed"] = ctl_.primed;
  j["ema_history"] = ctl_.ema_history;
  j["entropy_history"] = ctl_.entropy_history;
  j["alert"] = ctl_.alert;
  j["in_retro"] = ctl_.in_retro;
  j["retro_resume_step"] = ctl_.retro_resume_step;
  j["cooldown_until"] = ctl_.cooldown_until;
  json pool = json::array();
  for (const auto& e : pool_.entries()) pool.push_back({e.prompt_id, e.t_fail});
  j["pool"] = pool;
  return j.dump();
}

void Trainer::decode_trainer_state(const std::string& s) {
  if (s.empty()) return;
  const auto j = json::parse(s);
  ctl_.reward_ema = j.at("reward_ema").get<double>();
  ctl_.entropy_ema = j.at("entropy_ema").get<double>();
  ctl_.primed = j.at("primed").get<bool>();
  ctl_.ema_history = j.at("ema_history").get<std::deque<std::pair<std::int64_t, double>>>();
  ctl_.entropy_history = j.at("entropy_history").get<std::deque<std::pair<std::int64_t, double>>>();
  ctl_.alert = j.at("alert").get<int>();
  ctl_.in_retro = j.at("in_retro").get<bool>();
  ctl_.retro_resume_step = j.at("retro_resume_step").get<std::int64_t>();
  ctl_.cooldown_until = j.at("cooldown_until").get<std::int64_t>();
  pool_.clear();
  // Re-inserting in t_fail order reproduces the eviction order.
  auto entries = j.at("pool").get<std::vector<std::pair<std::int64_t, std::int64_t>>>();
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    return std::pair(a.second, a.first) < std::pair(b.second, b.first);
  });
  for (const auto& [pid, tf] : entries) pool_.add(pid, tf);
}

CheckpointRecord Trainer::snapshot() const {
  CheckpointRecord r;
  r.step = model_step_;
  r.params = params_;
  r.optimizer = opt_;
  r.rng_states["controller"] = controller_rng_.state();
  r.data_cursor = data_.cursor();
  r.trainer_state = encode_trainer_state();
  return r;
}

void Trainer::restore(const CheckpointRecord& r, bool with_controller) {
  if (!(r.params.layout == params_.layout)) throw LayoutError("restore: checkpoint layout differs from config");
  params_ = r.params;
  opt_ = r.optimizer;
  data_.set_cursor(r.data_cursor);
  if (auto it = r.rng_states.find("controller"); it != r.rng_states.end()) controller_rng_.set_state(it->second);
  model_step_ = r.step;
  if (with_controller) decode_trainer_state(r.trainer_state);
}

void Trainer::save_checkpoint() {
  if (!opt_flags_.save_checkpoints) return;
  if (store_.contains(model_step_)) return;
  store_.save(snapshot());
}

void Trainer::write_record(const MetricsRecord& r) {
  records_.push_back(r);
  metrics_.write(r);
}

void Trainer::emit(ControllerEvent e) {
  metrics_.write(iteration_, e);
  events_.push_back(std::move(e));
}

MetricsRecord Trainer::step() {
  const std::int64_t t = model_step_;
  ++iteration_;
  const auto batch = data_.next_batch(static_cast<std::size_t>(cfg_.grpo.batch));
  const RolloutKey key{cfg_.seed, t, salt(Stream::Rollout)};
  std::vector<RolloutGroup> groups(batch.size());
  parallel_for(batch.size(), cfg_.threads, [&](std::size_t i) {
    groups[i] = rollout_group(params_, *batch[i], cfg_.grpo.n, cfg_.grpo.temperature, key);
  });

  BatchStats stats;
  stats.step = t;
  double reward_sum = 0.0, entropy_sum = 0.0;
  std::int64_t entropy_tokens = 0;
  const bool collect = opt_flags_.collect_replay && (opt_flags_.replay_until < 0 || t < opt_flags_.replay_until);
  for (const auto& g : groups) {
    stats.group_accuracy.emplace_back(g.prompt_id, g.pass_rate);
    reward_sum += g.pass_rate;
    for (const auto& tr : g.trajectories) {
      for (double h : tr.entropies) entropy_sum += h;
      entropy_tokens += static_cast<std::int64_t>(tr.entropies.size());
      if (collect && tr.reward == 1) replay_.admit(tr, t);
    }
  }

  int replaced = 0;
  const bool guided = guided_now();
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const bool eligible = guided && (!guidance_->restrict_to || guidance_->restrict_to->count(groups[i].prompt_id));
    if (eligible) {
      groups[i] = form_group(std::move(groups[i]), guidance_->cache, guidance_->gate, batch[i], cfg_.policy.vocab);
      replaced += groups[i].replaced ? 1 : 0;
    } else {
      groups[i].advantages = group_advantages(groups[i].rewards());
    }
  }

  const ObjectiveConfig obj{cfg_.grpo.eps_low, cfg_.grpo.eps_high, cfg_.grpo.temperature};
  auto loss = npo_loss_and_grad(params_, data_, groups, obj, cfg_.is_correction);
  const double gnorm = l2_norm(loss.gradient);
  try {
    if (!std::isfinite(loss.loss)) throw NumericError("training: non-finite objective at step " + std::to_string(t));
    optimizer_step(params_, opt_, loss.gradient);
  } catch (const NumericError& e) {
    ControllerEvent ev;
    ev.kind = EventKind::Abort;
    ev.step = t;
    ev.note = e.what();
    emit(ev);
    throw;
  }
  ++model_step_;

  stats.mean_reward = reward_sum / static_cast<double>(groups.size());
  stats.mean_entropy = entropy_tokens > 0 ? entropy_sum / static_cast<double>(entropy_tokens) : 0.0;
  record_batch(pool_, ctl_, stats, cfg_.controller);

  if (opt_flags_.save_checkpoints && store_.due(model_step_)) save_checkpoint();

  MetricsRecord rec;
  rec.step = iteration_;
  rec.model_step = model_step_;
  rec.reward_mean = stats.mean_reward;
  rec.reward_ema = ctl_.reward_ema;
  rec.entropy_mean = stats.mean_entropy;
  rec.groups_replaced = replaced;
  rec.gradient_norm = gnorm;
  rec.pool_size = static_cast<std::int64_t>(pool_.size());
  rec.loss = loss.loss;
  write_record(rec);

  if (opt_flags_.controller) controller_tick(t);
  return rec;
}

void Trainer::run_until(std::int64_t target) {
  // Rollbacks can revisit steps; bound the total work anyway.
  const std::int64_t budget = iteration_ + 50 * std::max<std::int64_t>(target, 1) + 1000;
  while (model_step_ < target) {
    if (iteration_ > budget) throw Error("trainer: iteration budget exhausted before reaching target step");
    step();
  }
}

void Trainer::controller_tick(std::int64_t t) {
  const auto& cc = cfg_.controller;
  bool rolled_back = false;
  if (!ctl_.in_retro && t >= ctl_.cooldown_until && t % cc.t_probe == 0) {
    const bool fired = warning_override ? warning_override(ctl_, cc, t) : warning_check(ctl_, cc, t);
    if (fired) {
      ControllerEvent w;
      w.kind = EventKind::Warning;
      w.step = t;
      emit(w);
      rolled_back = intervene(t);
      ctl_.alert = 0;
    }
  }
  if (!rolled_back && ctl_.in_retro && t >= ctl_.retro_resume_step) {
    ctl_.in_retro = false;
    clear_guidance();
    ctl_.cooldown_until = t + cc.t_cool;
    ControllerEvent r;
    r.kind = EventKind::Resume;
    r.step = t;
    r.target_step = ctl_.retro_resume_step;
    emit(r);
    ControllerEvent c;
    c.kind = EventKind::CooldownStart;
    c.step = t;
    c.target_step = ctl_.cooldown_until;
    emit(c);
  }
}

bool Trainer::intervene(std::int64_t t) {
  const auto& cc = cfg_.controller;
  auto abort = [&](const std::string& why) {
    ControllerEvent a;
    a.kind = EventKind::Abort;
    a.step = t;
    a.note = why;
    emit(a);
    return false;
  };
  if (pool_.empty()) return abort("empty mistake pool");

  std::vector<std::int64_t> deltas;
  for (auto s : store_.steps())
    if (s < t) deltas.push_back(t - s);
  std::sort(deltas.begin(), deltas.end());

  const auto cr = confirm(params_, data_, pool_, cc, controller_rng_, t, deltas, cfg_.grpo.temperature);
  std::vector<const Prompt*> probe_prompts;
  for (const auto& p : cr.probes) probe_prompts.push_back(&data_.by_id(p.prompt_id));

  ControllerEvent ce;
  ce.kind = EventKind::Confirm;
  ce.step = t;
  ce.p_hat = cr.p_hat;
  std::vector<RollbackCandidate> cands;
  const bool gate_open = cr.p_hat > cc.tau_pass;
  for (const auto& q : cr.q) {
    ce.q_table.emplace_back(q.delta, q.q());
    if (!gate_open) continue;
    const auto past = store_.load(t - q.delta);
    const std::uint64_t kl_seed = mix64(cfg_.seed ^ mix64(static_cast<std::uint64_t>(t)));
    const auto kl = cc.kl_later_first
                        ? kl_between_params(params_, past.params, probe_prompts, cc.kl_samples, kl_seed,
                                            cfg_.grpo.temperature)
                        : kl_between_params(past.params, params_, probe_prompts, cc.kl_samples, kl_seed,
                                            cfg_.grpo.temperature);
    const double v = estimate_V(kl.mean, cc.v_proxy_c);
    ce.v_table.emplace_back(q.delta, v);
    cands.push_back({q.delta, q.q(), v});
  }
  emit(ce);
  if (!gate_open) return false;

  std::int64_t delta = 0;
  try {
    delta = select_rollback(cands);
  } catch (const SelectionError& e) {
    return abort(e.what());
  }
  const std::int64_t target = t - delta;

  const auto slice = pool_.slice(delta, t);
  std::vector<const Prompt*> slice_prompts;
  std::set<std::int64_t> slice_ids;
  for (const auto& e : slice) {
    slice_prompts.push_back(&data_.by_id(e.prompt_id));
    slice_ids.insert(e.prompt_id);
  }
  CacheBuildConfig bc;
  bc.attempts_per_prompt = cfg_.guidance.attempts_per_prompt;
  bc.selection = parse_selection(cfg_.guidance.selection);
  bc.temperature = cfg_.grpo.temperature;
  bc.seed = cfg_.seed;
  bc.guide_step = model_step_;
  auto cache = build_cache(params_, slice_prompts, bc);

  CheckpointRecord rec;
  try {
    rec = store_.load(target);
  } catch (const NotFoundError& e) {
    return abort(e.what());
  }
  store_.truncate_after(target);
  restore(rec, false);
  ctl_.rewind(target - 1);
  ctl_.in_retro = true;
  ctl_.retro_resume_step = t;

  ActiveGuidance g;
  g.cache = std::move(cache);
  g.gate = GateConfig{1.0, cfg_.guidance.reverify};
  g.restrict_to = std::move(slice_ids);
  g.from_step = target;
  g.until_step = t + 1;
  set_guidance(std::move(g));

  ControllerEvent rb;
  rb.kind = EventKind::Rollback;
  rb.step = t;
  rb.delta = delta;
  rb.target_step = target;
  emit(rb);
  return true;
}

// ---------------------------------------------------------------------------

namespace {

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::trunc);
  out << s;
  if (!out) throw Error("cannot write " + p.string());
}

CacheBuildConfig cache_config(const RunConfig& cfg, std::int64_t guide_step) {
  CacheBuildConfig bc;
  bc.attempts_per_prompt = cfg.guidance.attempts_per_prompt;
  bc.selection = parse_selection(cfg.guidance.selection);
  bc.temperature = cfg.grpo.temperature;
  bc.seed = cfg.seed;
  bc.guide_step = guide_step;
  return bc;
}

std::vector<const Prompt*> all_prompts(const Dataset& d) {
  std::vector<const Prompt*> v;
  for (const auto& p : d.prompts()) v.push_back(&p);
  return v;
}

void write_summary(const fs::path& dir, const Trainer& tr, const std::string& mode, std::size_t cache_size) {
  json j;
  j["mode"] = mode;
  j["model_step"] = tr.model_step();
  j["iterations"] = tr.iteration();
  j["final_reward"] = final_reward(tr.history());
  j["cache_size"] = cache_size;
  j["events"] = tr.events().size();
  write_text(dir / "summary.json", j.dump(2) + "\n");
}

void save_cache(const fs::path& p, const GuidanceCache& cache) {
  std::ofstream out(p, std::ios::trunc);
  write_cache(out, cache);
}

// Baseline to the guide point, then replay [plateau_start, ...) with guidance.
fs::path run_late(const RunConfig& cfg, const fs::path& dir, SourceKind kind) {
  const auto& late = cfg.npo_late;
  TrainerOptions bopt;
  bopt.collect_replay = kind == SourceKind::PastReplay;
  bopt.replay_until = late.plateau_start;
  Trainer base(cfg, dir / "baseline", bopt);
  base.run_until(late.plateau_start);
  base.save_checkpoint();
  const auto restart = base.snapshot();
  const auto prefix = base.history();

  std::int64_t guide_step = late.guide_step;
  if (kind == SourceKind::FarFuture) guide_step = cfg.source.far_step >= 0 ? cfg.source.far_step : cfg.grpo.steps;
  if (kind == SourceKind::NearFuture || kind == SourceKind::FarFuture) base.run_until(guide_step);

  TrajectorySource src;
  src.kind = kind;
  src.guide = &base.params();
  src.guide_step = base.model_step();
  src.buffer = &base.replay_buffer();
  src.attempts_per_prompt = cfg.guidance.attempts_per_prompt;
  src.selection = parse_selection(cfg.guidance.selection);
  src.temperature = cfg.grpo.temperature;
  src.seed = cfg.seed;
  const auto prompts = all_prompts(base.data());
  auto cache = cache_from_source(src, prompts, cfg.policy.vocab);
  save_cache(dir / "cache.txt", cache);

  TrainerOptions mopt;
  mopt.initial_checkpoint = false;
  Trainer main(cfg, dir, mopt);
  for (const auto& r : prefix) main.write_record(r);
  main.restore(restart, true);
  main.set_iteration(restart.step);
  main.save_checkpoint();
  ActiveGuidance g;
  const std::size_t cache_size = cache.size();
  g.cache = std::move(cache);
  g.gate = GateConfig{cfg.guidance.tau_gate, cfg.guidance.reverify};
  g.from_step = late.plateau_start;
  g.until_step = late.plateau_end;
  main.set_guidance(std::move(g));
  main.run_until(cfg.grpo.steps);
  write_summary(dir, main, cfg.mode, cache_size);
  return dir;
}

}  // namespace

fs::path cmd_train(const RunConfig& cfg) {
  cfg.validate();
  const fs::path dir = resolve_out_dir(cfg.out);
  fs::create_directories(dir);
  write_text(dir / "config.json", config_to_json(cfg));
  {
    std::ofstream ds(dir / "dataset.txt", std::ios::trunc);
    write_dataset(ds, make_dataset(cfg));
  }

  switch (cfg.parsed_mode()) {
    case Mode::Grpo: {
      Trainer tr(cfg, dir);
      tr.run_until(cfg.grpo.steps);
      write_summary(dir, tr, cfg.mode, 0);
      break;
    }
    case Mode::NpoEarly: {
      Trainer scout(cfg, dir / "scout");
      scout.run_until(cfg.npo_early.scout_steps);
      const auto prompts = all_prompts(scout.data());
      auto cache = build_cache(scout.params(), prompts, cache_config(cfg, scout.model_step()));
      save_cache(dir / "cache.txt", cache);
      Trainer main(cfg, dir);
      ActiveGuidance g;
      const std::size_t cache_size = cache.size();
      g.cache = std::move(cache);
      g.gate = GateConfig{cfg.guidance.tau_gate, cfg.guidance.reverify};
      g.from_step = 0;
      g.until_step = cfg.npo_early.window;
      main.set_guidance(std::move(g));
      main.run_until(cfg.grpo.steps);
      write_summary(dir, main, cfg.mode, cache_size);
      break;
    }
    case Mode::NpoLate:
      run_late(cfg, dir, SourceKind::NearFuture);
      break;
    case Mode::Source:
      run_late(cfg, dir, cfg.source_kind());
      break;
    case Mode::AutoNpo: {
      TrainerOptions o;
      o.controller = true;
      Trainer tr(cfg, dir, o);
      tr.run_until(cfg.grpo.steps);
      write_summary(dir, tr, cfg.mode, 0);
      break;
    }
  }
  return dir;
}

std::vector<MetricsRecord> training_records(std::span<const MetricsLine> lines) {
  std::vector<MetricsRecord> out;
  for (const auto& l : lines)
    if (l.record) out.push_back(*l.record);
  return out;
}

ReplayReport cmd_replay(const fs::path& run_dir, std::int64_t from, std::int64_t to) {
  if (!fs::exists(run_dir)) throw NotFoundError("replay: no run directory " + run_dir.string());
  const auto cfg = load_config(run_dir / "config.json");
  const auto lines = read_metrics_file(run_dir / "metrics.jsonl");
  std::map<std::int64_t, MetricsRecord> original;
  for (const auto& r : training_records(lines)) original[r.model_step] = r;

  const CheckpointStore store(run_dir / "checkpoints", cfg.checkpoints);
  const auto rec = store.load(from);
  TrainerOptions o;
  o.write_metrics = false;
  o.save_checkpoints = false;
  Trainer tr(cfg, run_dir, o);
  tr.restore(rec, true);

  ReplayReport rep;
  while (tr.model_step() < to) {
    const auto r = tr.step();
    ++rep.compared;
    auto it = original.find(r.model_step);
    auto diverge = [&](const char* field) {
      rep.ok = false;
      rep.first_divergence = r.model_step;
      rep.field = field;
    };
    if (it == original.end()) {
      diverge("missing");
    } else {
      const auto& o2 = it->second;
      if (r.reward_mean != o2.reward_mean) diverge("reward_mean");
      else if (r.reward_ema != o2.reward_ema) diverge("reward_ema");
      else if (r.entropy_mean != o2.entropy_mean) diverge("entropy_mean");
      else if (r.groups_replaced != o2.groups_replaced) diverge("groups_replaced");
      else if (r.gradient_norm != o2.gradient_norm) diverge("gradient_norm");
      else if (r.pool_size != o2.pool_size) diverge("pool_size");
      else if (r.loss != o2.loss) diverge("loss");
    }
    if (!rep.ok) break;
  }
  return rep;
}

double final_reward(std::span<const MetricsRecord> records, int window) {
  if (records.empty()) return 0.0;
  const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(window), records.size());
  double s = 0.0;
  for (std::size_t i = records.size() - w; i < records.size(); ++i) s += records[i].reward_mean;
  return s / static_cast<double>(w);
}

std::int64_t steps_to_reach(std::span<const MetricsRecord> records, double threshold, int window) {
  double sum = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    sum += records[i].reward_mean;
    if (i >= static_cast<std::size_t>(window)) sum -= records[i - window].reward_mean;
    const std::size_t n = std::min<std::size_t>(i + 1, static_cast<std::size_t>(window));
    if (n == static_cast<std::size_t>(window) && sum / static_cast<double>(n) >= threshold) return records[i].model_step;
  }
  return -1;
}

}  // namespace npo
