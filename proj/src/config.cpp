#include "npo/config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include <json.hpp>

#include "npo/error.hpp"

namespace npo {

using nlohmann::json;

const char* to_string(SourceKind k) {
  switch (k) {
    case SourceKind::NearFuture: return "near_future";
    case SourceKind::FarFuture: return "far_future";
    case SourceKind::PastReplay: return "past_replay";
    case SourceKind::ExternalOracle: return "external_oracle";
  }
  return "?";
}

SourceKind parse_source_kind(const std::string& s) {
  for (auto k : {SourceKind::NearFuture, SourceKind::FarFuture, SourceKind::PastReplay, SourceKind::ExternalOracle})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown source kind '" + s + "'");
}

Mode RunConfig::parsed_mode() const {
  if (mode == "grpo") return Mode::Grpo;
  if (mode == "npo_early") return Mode::NpoEarly;
  if (mode == "npo_late") return Mode::NpoLate;
  if (mode == "autonpo") return Mode::AutoNpo;
  if (mode.rfind("source:", 0) == 0) {
    parse_source_kind(mode.substr(7));
    return Mode::Source;
  }
  throw ConfigError("unknown mode '" + mode + "'");
}

SourceKind RunConfig::source_kind() const {
  if (mode.rfind("source:", 0) != 0) throw ConfigError("mode '" + mode + "' is not a source mode");
  return parse_source_kind(mode.substr(7));
}

void RunConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("config: ") + what);
  };
  parsed_mode();
  require(threads >= 1, "threads must be >= 1");
  require(!out.empty(), "out must be non-empty");
  require(task.kind == "arith" || task.kind == "parity" || task.kind == "mixed", "task.kind must be arith|parity|mixed");
  require(task.count >= 1, "task.count must be >= 1");
  require(task.operand_limit >= 0 && task.operand_limit <= task.modulus, "task.operand_limit must lie in [0, modulus]");
  require(task.modulus >= 1 && task.modulus <= policy.vocab - 1, "task.modulus must lie in [1, vocab-1]");
  parse_ops(task.ops);
  require(task.chain_length >= 1, "task.chain_length must be >= 1");
  if (task.kind != "arith") {
    require(task.chain_length + 1 <= policy.prompt_len, "parity prompt does not fit policy.prompt_len");
    require(task.chain_length + 1 <= policy.max_response, "parity answer plus EOS longer than policy.max_response");
  }
  require(policy.prompt_len >= 3, "policy.prompt_len must hold an arithmetic prompt");
  require(task.arith_fraction >= 0.0 && task.arith_fraction <= 1.0, "task.arith_fraction must lie in [0, 1]");
  require(policy.vocab >= 4 && policy.context >= 1 && policy.hidden >= 1 && policy.max_response >= 1,
          "policy layout out of range");
  require(grpo.n >= 2, "grpo.n must be >= 2");
  require(grpo.temperature > 0.0, "grpo.temperature must be positive");
  require(grpo.lr > 0.0, "grpo.lr must be positive");
  require(grpo.batch >= 1, "grpo.batch must be >= 1");
  require(grpo.eps_low > 0.0 && grpo.eps_low < 1.0 && grpo.eps_high > 0.0, "grpo.eps out of range");
  require(grpo.beta1 >= 0.0 && grpo.beta1 < 1.0 && grpo.beta2 >= 0.0 && grpo.beta2 < 1.0, "adam betas out of range");
  require(grpo.adam_eps > 0.0, "grpo.adam_eps must be positive");
  require(grpo.steps >= 0, "grpo.steps must be >= 0");
  require(grpo.init_scale >= 0.0, "grpo.init_scale must be >= 0");
  require(guidance.tau_gate >= 0.0 && guidance.tau_gate <= 1.0, "guidance.tau_gate must lie in [0, 1]");
  require(guidance.attempts_per_prompt >= 1, "guidance.attempts_per_prompt must be >= 1");
  require(guidance.selection == "shortest" || guidance.selection == "first", "guidance.selection must be shortest|first");
  require(npo_early.scout_steps >= 1 && npo_early.window >= 0, "npo_early lengths out of range");
  require(npo_late.plateau_start >= 0 && npo_late.plateau_start < npo_late.plateau_end &&
              npo_late.plateau_end <= npo_late.guide_step,
          "npo_late requires 0 <= plateau_start < plateau_end <= guide_step");
  require(source.far_step >= -1, "source.far_step must be >= -1");
  require(source.replay_capacity >= 1, "source.replay_capacity must be >= 1");
  require(checkpoints.every >= 1 && checkpoints.keep >= 1, "checkpoints retention out of range");
  controller.validate();
}

namespace {

void check_keys(const json& j, const char* section, std::initializer_list<const char*> known) {
  if (!j.is_object()) throw ConfigError(std::string("config: section '") + section + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* name : known) ok = ok || k == name;
    if (!ok) throw ConfigError(std::string("config: unknown key '") + k + "' in section '" + section + "'");
  }
}

template <class T>
void get(const json& j, const char* key, T& dst) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

RunConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  RunConfig c;
  check_keys(j, "root",
             {"seed", "mode", "is_correction", "threads", "out", "task", "policy", "grpo", "guidance", "npo_early",
              "npo_late", "source", "controller", "checkpoints"});
  get(j, "seed", c.seed);
  get(j, "mode", c.mode);
  get(j, "is_correction", c.is_correction);
  get(j, "threads", c.threads);
  get(j, "out", c.out);
  if (j.contains("task")) {
    const auto& s = j["task"];
    check_keys(s, "task", {"kind", "count", "modulus", "operand_limit", "ops", "chain_length", "arith_fraction", "seed"});
    get(s, "kind", c.task.kind);
    get(s, "count", c.task.count);
    get(s, "modulus", c.task.modulus);
    get(s, "operand_limit", c.task.operand_limit);
    get(s, "ops", c.task.ops);
    get(s, "chain_length", c.task.chain_length);
    get(s, "arith_fraction", c.task.arith_fraction);
    get(s, "seed", c.task.seed);
  }
  if (j.contains("policy")) {
    const auto& s = j["policy"];
    check_keys(s, "policy", {"vocab", "context", "hidden", "prompt_len", "max_response"});
    get(s, "vocab", c.policy.vocab);
    get(s, "context", c.policy.context);
    get(s, "hidden", c.policy.hidden);
    get(s, "prompt_len", c.policy.prompt_len);
    get(s, "max_response", c.policy.max_response);
  }
  if (j.contains("grpo")) {
    const auto& s = j["grpo"];
    check_keys(s, "grpo",
               {"n", "temperature", "lr", "batch", "eps_low", "eps_high", "beta1", "beta2", "adam_eps", "steps",
                "init_scale", "init_scale_input"});
    get(s, "n", c.grpo.n);
    get(s, "temperature", c.grpo.temperature);
    get(s, "lr", c.grpo.lr);
    get(s, "batch", c.grpo.batch);
    get(s, "eps_low", c.grpo.eps_low);
    get(s, "eps_high", c.grpo.eps_high);
    get(s, "beta1", c.grpo.beta1);
    get(s, "beta2", c.grpo.beta2);
    get(s, "adam_eps", c.grpo.adam_eps);
    get(s, "steps", c.grpo.steps);
    get(s, "init_scale", c.grpo.init_scale);
    get(s, "init_scale_input", c.grpo.init_scale_input);
  }
  if (j.contains("guidance")) {
    const auto& s = j["guidance"];
    check_keys(s, "guidance", {"tau_gate", "attempts_per_prompt", "reverify", "selection"});
    get(s, "tau_gate", c.guidance.tau_gate);
    get(s, "attempts_per_prompt", c.guidance.attempts_per_prompt);
    get(s, "reverify", c.guidance.reverify);
    get(s, "selection", c.guidance.selection);
  }
  if (j.contains("npo_early")) {
    const auto& s = j["npo_early"];
    check_keys(s, "npo_early", {"scout_steps", "window"});
    get(s, "scout_steps", c.npo_early.scout_steps);
    get(s, "window", c.npo_early.window);
  }
  if (j.contains("npo_late")) {
    const auto& s = j["npo_late"];
    check_keys(s, "npo_late", {"plateau_start", "plateau_end", "guide_step"});
    get(s, "plateau_start", c.npo_late.plateau_start);
    get(s, "plateau_end", c.npo_late.plateau_end);
    get(s, "guide_step", c.npo_late.guide_step);
  }
  if (j.contains("source")) {
    const auto& s = j["source"];
    check_keys(s, "source", {"far_step", "replay_capacity"});
    get(s, "far_step", c.source.far_step);
    get(s, "replay_capacity", c.source.replay_capacity);
  }
  if (j.contains("controller")) {
    const auto& s = j["controller"];
    check_keys(s, "controller",
               {"tau_err", "tau_pass", "n_probe", "t_probe", "m", "t_cool", "ema_alpha", "stag_window", "stag_delta",
                "v_proxy_c", "kl_samples", "pool_capacity", "history", "kl_later_first"});
    auto& k = c.controller;
    get(s, "tau_err", k.tau_err);
    get(s, "tau_pass", k.tau_pass);
    get(s, "n_probe", k.n_probe);
    get(s, "t_probe", k.t_probe);
    get(s, "m", k.m);
    get(s, "t_cool", k.t_cool);
    get(s, "ema_alpha", k.ema_alpha);
    get(s, "stag_window", k.stag_window);
    get(s, "stag_delta", k.stag_delta);
    get(s, "v_proxy_c", k.v_proxy_c);
    get(s, "kl_samples", k.kl_samples);
    get(s, "pool_capacity", k.pool_capacity);
    get(s, "history", k.history);
    get(s, "kl_later_first", k.kl_later_first);
  }
  if (j.contains("checkpoints")) {
    const auto& s = j["checkpoints"];
    check_keys(s, "checkpoints", {"every", "keep"});
    get(s, "every", c.checkpoints.every);
    get(s, "keep", c.checkpoints.keep);
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("config: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

std::string config_to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["mode"] = c.mode;
  j["is_correction"] = c.is_correction;
  j["threads"] = c.threads;
  j["out"] = c.out;
  j["task"] = {{"kind", c.task.kind},       {"count", c.task.count},
               {"modulus", c.task.modulus}, {"operand_limit", c.task.operand_limit}, {"ops", c.task.ops},
               {"chain_length", c.task.chain_length}, {"arith_fraction", c.task.arith_fraction},
               {"seed", c.task.seed}};
  j["policy"] = {{"vocab", c.policy.vocab},           {"context", c.policy.context},
                 {"hidden", c.policy.hidden},         {"prompt_len", c.policy.prompt_len},
                 {"max_response", c.policy.max_response}};
  j["grpo"] = {{"n", c.grpo.n},           {"temperature", c.grpo.temperature}, {"lr", c.grpo.lr},
               {"batch", c.grpo.batch},   {"eps_low", c.grpo.eps_low},         {"eps_high", c.grpo.eps_high},
               {"beta1", c.grpo.beta1},   {"beta2", c.grpo.beta2},             {"adam_eps", c.grpo.adam_eps},
               {"steps", c.grpo.steps},   {"init_scale", c.grpo.init_scale},
               {"init_scale_input", c.grpo.init_scale_input}};
  j["guidance"] = {{"tau_gate", c.guidance.tau_gate},
                   {"attempts_per_prompt", c.guidance.attempts_per_prompt},
                   {"reverify", c.guidance.reverify},
                   {"selection", c.guidance.selection}};
  j["npo_early"] = {{"scout_steps", c.npo_early.scout_steps}, {"window", c.npo_early.window}};
  j["npo_late"] = {{"plateau_start", c.npo_late.plateau_start},
                   {"plateau_end", c.npo_late.plateau_end},
                   {"guide_step", c.npo_late.guide_step}};
  j["source"] = {{"far_step", c.source.far_step}, {"replay_capacity", c.source.replay_capacity}};
  const auto& k = c.controller;
  j["controller"] = {{"tau_err", k.tau_err},         {"tau_pass", k.tau_pass},       {"n_probe", k.n_probe},
                     {"t_probe", k.t_probe},         {"m", k.m},                     {"t_cool", k.t_cool},
                     {"ema_alpha", k.ema_alpha},     {"stag_window", k.stag_window}, {"stag_delta", k.stag_delta},
                     {"v_proxy_c", k.v_proxy_c},     {"kl_samples", k.kl_samples},   {"pool_capacity", k.pool_capacity},
                     {"history", k.history},         {"kl_later_first", k.kl_later_first}};
  j["checkpoints"] = {{"every", c.checkpoints.every}, {"keep", c.checkpoints.keep}};
  return j.dump(2) + "\n";
}

Dataset make_dataset(const RunConfig& cfg) {
  const auto ops = parse_ops(cfg.task.ops);
  const int V = cfg.policy.vocab;
  if (cfg.task.kind == "arith") {
    auto d = gen_arith_mod(static_cast<std::size_t>(cfg.task.count), cfg.task.modulus, ops, cfg.task.seed, V,
                           cfg.task.operand_limit);
    return concat({std::move(d)}, cfg.seed);
  }
  if (cfg.task.kind == "parity") {
    auto d = gen_parity_chain(static_cast<std::size_t>(cfg.task.count), cfg.task.chain_length, cfg.task.seed, V);
    return concat({std::move(d)}, cfg.seed);
  }
  const auto n_arith = static_cast<std::size_t>(std::lround(cfg.task.count * cfg.task.arith_fraction));
  const auto n_parity = static_cast<std::size_t>(cfg.task.count) - n_arith;
  std::vector<Dataset> parts;
  parts.push_back(gen_arith_mod(n_arith, cfg.task.modulus, ops, cfg.task.seed, V, cfg.task.operand_limit));
  parts.push_back(gen_parity_chain(n_parity, cfg.task.chain_length, cfg.task.seed + 1, V));
  return concat(std::move(parts), cfg.seed);
}

std::filesystem::path resolve_out_dir(const std::string& out) {
  std::filesystem::path p(out);
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("NPO_OUT_ROOT"); root && *root) return std::filesystem::path(root) / p;
  return p;
}

}  // namespace npo
