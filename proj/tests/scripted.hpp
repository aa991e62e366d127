#pragma once

// Deterministic AutoNPO scenario: a policy that always answers "0" on prompts
// whose answer is always 0, so every group passes, gradients vanish and the
// parameters never move. Warnings are forced at fixed steps; the expected
// event sequence is written out by hand below.

#include <filesystem>
#include <string>
#include <vector>

#include "npo/trainer.hpp"

namespace npo::testing {

inline RunConfig scripted_config(const std::string& out) {
  RunConfig c;
  c.out = out;
  c.mode = "autonpo";
  c.task.kind = "arith";
  c.task.ops = "*";
  c.task.operand_limit = 1;
  c.task.count = 8;
  c.policy.max_response = 1;
  c.grpo.batch = 4;
  c.checkpoints.every = 5;
  c.checkpoints.keep = 64;
  c.controller.t_cool = 20;
  return c;
}

struct ScriptedRun {
  std::vector<ControllerEvent> events;
  std::int64_t iterations = 0;
  bool params_unchanged = false;
};

inline ScriptedRun run_scripted(const std::filesystem::path& dir) {
  TrainerOptions o;
  o.controller = true;
  o.initial_checkpoint = false;
  Trainer tr(scripted_config(dir.string()), dir, o);
  auto start = tr.snapshot();
  for (auto& v : start.params.values) v = 0.0;
  start.params.values[start.params.b2_offset() + 0] = 1e3;
  tr.restore(start, true);
  tr.save_checkpoint();
  tr.warning_override = [](ControllerState&, const ControllerConfig&, std::int64_t t) { return t == 10 || t == 30; };
  tr.run_until(10);
  tr.pool().add(0, 8);
  tr.pool().add(1, 9);
  tr.run_until(60);
  return {tr.events(), tr.iteration(), tr.params() == start.params};
}

inline std::vector<ControllerEvent> scripted_expected() {
  auto ev = [](EventKind k, std::int64_t t) {
    ControllerEvent e;
    e.kind = k;
    e.step = t;
    return e;
  };
  std::vector<ControllerEvent> out;
  // first trigger: checkpoints 0, 5, 10 exist, so candidates are 10 and 5 steps back
  out.push_back(ev(EventKind::Warning, 10));
  auto c1 = ev(EventKind::Confirm, 10);
  c1.p_hat = 1.0;
  c1.q_table = {{5, 1.0}, {10, 1.0}};
  c1.v_table = {{5, 1.0}, {10, 1.0}};
  out.push_back(c1);
  auto r1 = ev(EventKind::Rollback, 10);
  r1.delta = 5;  // equal ratios: smallest distance
  r1.target_step = 5;
  out.push_back(r1);
  auto res1 = ev(EventKind::Resume, 10);
  res1.target_step = 10;
  out.push_back(res1);
  auto cool1 = ev(EventKind::CooldownStart, 10);
  cool1.target_step = 30;
  out.push_back(cool1);
  // second trigger: both pooled failures (steps 8, 9) fall only in slices reaching back 25 or 30
  out.push_back(ev(EventKind::Warning, 30));
  auto c2 = ev(EventKind::Confirm, 30);
  c2.p_hat = 1.0;
  c2.q_table = {{25, 1.0}, {30, 1.0}};
  c2.v_table = {{25, 1.0}, {30, 1.0}};
  out.push_back(c2);
  auto r2 = ev(EventKind::Rollback, 30);
  r2.delta = 25;
  r2.target_step = 5;
  out.push_back(r2);
  auto res2 = ev(EventKind::Resume, 30);
  res2.target_step = 30;
  out.push_back(res2);
  auto cool2 = ev(EventKind::CooldownStart, 30);
  cool2.target_step = 50;
  out.push_back(cool2);
  return out;
}

// each rollback re-runs steps target..t inclusive
inline constexpr std::int64_t kScriptedIterations = 60 + 6 + 26;

}  // namespace npo::testing
