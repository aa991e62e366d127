#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <sstream>

#include "npo/error.hpp"
#include "npo/trainer.hpp"
#include "scripted.hpp"
#include "support.hpp"

using namespace npo;
using namespace npo::testing;

namespace {

RunConfig quick(const std::string& out) {
  RunConfig c;
  c.out = out;
  c.task.count = 40;
  c.task.modulus = 15;
  c.task.operand_limit = 3;
  c.task.ops = "+";
  c.task.chain_length = 3;
  c.policy.max_response = 4;
  c.grpo.batch = 16;
  c.grpo.lr = 0.004;
  c.grpo.steps = 60;
  c.checkpoints.every = 10;
  c.checkpoints.keep = 16;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("seeded runs are byte-identical, with and without worker threads") {
  const auto a = scratch_dir("trainer_det_a"), b = scratch_dir("trainer_det_b"), c = scratch_dir("trainer_det_c");
  cmd_train(quick(a.string()));
  cmd_train(quick(b.string()));
  auto threaded = quick(c.string());
  threaded.threads = 4;
  cmd_train(threaded);
  const auto ma = slurp(a / "metrics.jsonl");
  CHECK(!ma.empty());
  CHECK(ma == slurp(b / "metrics.jsonl"));
  CHECK(ma == slurp(c / "metrics.jsonl"));
  const auto name = CheckpointStore(a / "checkpoints", Retention{10, 16}).path_for(60).filename();
  CHECK(slurp(a / "checkpoints" / name) == slurp(c / "checkpoints" / name));
  auto other = quick(scratch_dir("trainer_det_d").string());
  other.seed = 2;
  cmd_train(other);
  CHECK(ma != slurp(resolve_out_dir(other.out) / "metrics.jsonl"));
}

TEST_CASE("replay: untouched segments reproduce, across epoch boundaries too") {
  const auto dir = scratch_dir("trainer_replay");
  cmd_train(quick(dir.string()));
  // 40 prompts at 16 per batch: epochs end mid-batch
  for (std::int64_t s : {0, 10, 20, 30, 40, 50}) {
    const auto rep = cmd_replay(dir, s, s + 10);
    CHECK(rep.ok);
    CHECK(rep.compared == 10);
  }
  CHECK_THROWS_AS(cmd_replay(dir, 5, 10), NotFoundError);
  CHECK_THROWS_AS(cmd_replay(dir / "nope", 0, 10), NotFoundError);
}

TEST_CASE("replay: a 1e-9 parameter perturbation diverges at the first replayed step") {
  const auto dir = scratch_dir("trainer_tamper");
  cmd_train(quick(dir.string()));
  CheckpointStore store(dir / "checkpoints", Retention{10, 16});
  auto rec = store.load(20);
  rec.params.values[3] += 1e-9;
  {
    std::ofstream out(store.path_for(20), std::ios::binary | std::ios::trunc);
    out << encode_checkpoint(rec);
  }
  const auto rep = cmd_replay(dir, 20, 30);
  CHECK(!rep.ok);
  CHECK(rep.first_divergence == 21);
}

TEST_CASE("restricted guidance never consults the cache for other prompts") {
  const auto dir = scratch_dir("trainer_restrict");
  auto cfg = quick(dir.string());
  TrainerOptions o;
  o.write_metrics = false;
  o.save_checkpoints = false;
  Trainer tr(cfg, dir, o);
  GuidanceCache cache;
  for (const auto& p : tr.data().prompts()) {
    TokenSeq t = p.answer;
    t.push_back(cfg.policy.eos());
    cache.put(p.id, GuideEntry{t, std::vector<double>(t.size(), 0.0), 0, Behavior::Guide});
  }
  ActiveGuidance g;
  g.cache = cache;
  g.gate = GateConfig{1.0, false};
  g.restrict_to = std::set<std::int64_t>{};
  g.from_step = 0;
  g.until_step = 100;
  tr.set_guidance(g);
  for (int i = 0; i < 5; ++i) CHECK(tr.step().groups_replaced == 0);
  CHECK(tr.guidance()->cache.lookups() == 0);

  g.restrict_to = std::set<std::int64_t>{0, 1, 2, 3, 4};
  tr.set_guidance(g);
  int replaced = 0;
  for (int i = 0; i < 5; ++i) replaced += tr.step().groups_replaced;
  CHECK(tr.guidance()->cache.lookups() > 0);
  CHECK(tr.guidance()->cache.lookups() <= 5 * 5);
  CHECK(replaced > 0);
}

TEST_CASE("checkpoint restore resumes bit-exactly") {
  const auto dir = scratch_dir("trainer_restore");
  TrainerOptions o;
  o.write_metrics = false;
  Trainer a(quick(dir.string()), dir, o);
  a.run_until(7);
  const auto snap = a.snapshot();
  std::vector<MetricsRecord> first;
  for (int i = 0; i < 5; ++i) first.push_back(a.step());
  o.save_checkpoints = false;
  Trainer b(quick(dir.string()), dir, o);
  b.restore(snap);
  for (int i = 0; i < 5; ++i) {
    auto r = b.step();
    r.step = first[i].step;
    CHECK(r == first[i]);
  }
  CHECK(a.params() == b.params());
}

TEST_CASE("scripted AutoNPO cycle matches the hand trace") {
  const auto run = run_scripted(scratch_dir("trainer_scripted"));
  const auto want = scripted_expected();
  REQUIRE(run.events.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    INFO("event " << i << " " << to_string(want[i].kind));
    CHECK(run.events[i] == want[i]);
  }
  CHECK(run.iterations == kScriptedIterations);
  CHECK(run.params_unchanged);
}

TEST_CASE("summary helpers") {
  std::vector<MetricsRecord> rs;
  for (int t = 1; t <= 30; ++t) {
    MetricsRecord r;
    r.step = t;
    r.model_step = t;
    r.reward_mean = t <= 20 ? 0.0 : 1.0;
    rs.push_back(r);
  }
  CHECK(final_reward(rs, 10) == 1.0);
  CHECK(final_reward(rs, 20) == 0.5);
  CHECK(steps_to_reach(rs, 0.6, 10) == 26);
  CHECK(steps_to_reach(rs, 1.1, 10) == -1);
  CHECK(final_reward({}, 10) == 0.0);
}
