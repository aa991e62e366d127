#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "npo/checkpoint.hpp"
#include "npo/error.hpp"
#include "support.hpp"

using namespace npo;
using namespace npo::testing;

namespace {

CheckpointRecord sample_record(std::int64_t step) {
  const auto l = tiny_layout();
  CheckpointRecord r;
  r.step = step;
  r.params = random_params(l, static_cast<std::uint64_t>(step) + 1);
  r.optimizer = OptimizerState(r.params.values.size(), 3e-3);
  r.optimizer.step = step;
  for (std::size_t i = 0; i < r.optimizer.m.size(); ++i) {
    r.optimizer.m[i] = 1e-3 * static_cast<double>(i);
    r.optimizer.v[i] = 1e-7 * static_cast<double>(i * i);
  }
  RngStream rng(99);
  rng.next_u64();
  r.rng_states["controller"] = rng.state();
  r.data_cursor = DataCursor{2, 5, 77};
  r.trainer_state = "{\"x\":1}";
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

// Exact E[sum of per-token KL] and E[length] under pi_a, by walking every response.
void enumerate(const PolicyParams& a, const PolicyParams& b, const TokenSeq& prompt, TokenSeq& prefix, double prob,
               double& num, double& den) {
  ContextFeatures ctx(a.layout, prompt, prefix);
  const auto la = forward(a, ctx, 1.0).log_probs();
  const auto lb = forward(b, ctx, 1.0).log_probs();
  double kl = 0.0;
  for (std::size_t k = 0; k < la.size(); ++k) kl += std::exp(la[k]) * (la[k] - lb[k]);
  num += prob * kl;
  den += prob;
  for (Token t = 0; t < a.layout.vocab; ++t) {
    const double p = prob * std::exp(la[t]);
    if (t == a.layout.eos() || static_cast<int>(prefix.size()) + 1 == a.layout.max_response) continue;
    prefix.push_back(t);
    enumerate(a, b, prompt, prefix, p, num, den);
    prefix.pop_back();
  }
}

}  // namespace

TEST_CASE("encode/decode round trip is bit identical") {
  const auto r = sample_record(30);
  const auto bytes = encode_checkpoint(r);
  CHECK(decode_checkpoint(bytes) == r);
  CHECK(encode_checkpoint(decode_checkpoint(bytes)) == bytes);
}

TEST_CASE("encoding is little-endian with a fixed header") {
  const auto r = sample_record(258);
  const auto bytes = encode_checkpoint(r);
  // magic (4) then version u32 then step i64
  CHECK(static_cast<unsigned char>(bytes[4]) == kCheckpointFormatVersion);
  CHECK(static_cast<unsigned char>(bytes[8]) == 2);
  CHECK(static_cast<unsigned char>(bytes[9]) == 1);
  for (int i = 10; i < 16; ++i) CHECK(bytes[i] == 0);
}

TEST_CASE("corruption is rejected") {
  const auto bytes = encode_checkpoint(sample_record(10));
  for (std::size_t pos : {std::size_t{0}, std::size_t{20}, bytes.size() / 2, bytes.size() - 9}) {
    auto bad = bytes;
    bad[pos] = static_cast<char>(bad[pos] ^ 0x01);
    CHECK_THROWS_AS(decode_checkpoint(bad), ChecksumError);
  }
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, 10)), FormatError);
}

TEST_CASE("store: save, load, eviction, truncation, manifest") {
  const auto dir = scratch_dir("ckpt_store");
  CheckpointStore store(dir, Retention{10, 3});
  for (std::int64_t s : {0, 10, 20, 30}) store.save(sample_record(s));
  CHECK(store.steps() == std::vector<std::int64_t>{10, 20, 30});
  CHECK(!std::filesystem::exists(store.path_for(0)));
  CHECK_THROWS_AS(store.load(0), NotFoundError);
  CHECK(store.load(20) == sample_record(20));
  CHECK_THROWS_AS(store.save(sample_record(20)), ContractError);
  CHECK(store.due(40));
  CHECK(!store.due(41));

  CheckpointStore reopened(dir, Retention{10, 3});
  CHECK(reopened.steps() == store.steps());

  store.truncate_after(10);
  CHECK(store.steps() == std::vector<std::int64_t>{10});
  CHECK(!std::filesystem::exists(store.path_for(20)));
  CHECK(store.path_for(10).filename().string().find("10") != std::string::npos);
}

TEST_CASE("store: a flipped bit on disk is a checksum error") {
  const auto dir = scratch_dir("ckpt_flip");
  CheckpointStore store(dir, Retention{10, 8});
  store.save(sample_record(10));
  auto bytes = slurp(store.path_for(10));
  bytes[bytes.size() / 3] ^= 0x10;
  spit(store.path_for(10), bytes);
  CHECK_THROWS_AS(store.load(10), ChecksumError);
}

TEST_CASE("kl: identical params give zero, KL is non-negative") {
  const auto l = tiny_layout();
  const auto a = random_params(l, 1), b = random_params(l, 2);
  const auto data = random_prompts(l, 4, 3);
  std::vector<const Prompt*> ps;
  for (const auto& p : data.prompts()) ps.push_back(&p);
  const auto same = kl_between_params(a, a, ps, 50, 1);
  CHECK(std::abs(same.mean) < 1e-12);
  const auto diff = kl_between_params(a, b, ps, 50, 1);
  CHECK(diff.mean > 0.0);
  CHECK(diff.std_err >= 0.0);
  const auto again = kl_between_params(a, b, ps, 50, 1);
  CHECK(again.mean == diff.mean);
}

TEST_CASE("kl: agrees with exhaustive enumeration on a K=1, V=4 policy") {
  Layout l;
  l.vocab = 4;
  l.context = 1;
  l.hidden = 3;
  l.prompt_len = 2;
  l.max_response = 4;
  const auto a = random_params(l, 8, 0.8), b = random_params(l, 9, 0.8);
  Prompt p;
  p.id = 0;
  p.tokens = {1, 2};
  const Prompt* ps[] = {&p};
  TokenSeq prefix;
  double num = 0.0, den = 0.0;
  enumerate(a, b, p.tokens, prefix, 1.0, num, den);
  const double exact = num / den;
  const auto est = kl_between_params(a, b, ps, 20000, 4);
  CHECK(std::abs(est.mean - exact) < 3.0 * est.std_err);
}
