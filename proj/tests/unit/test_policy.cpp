#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "npo/error.hpp"
#include "npo/policy.hpp"
#include "support.hpp"

using namespace npo;
using namespace npo::testing;

namespace {

// Plain re-implementation of the forward pass for cross-checking.
std::vector<double> naive_logits(const PolicyParams& p, const ContextFeatures& ctx) {
  const auto& l = p.layout;
  const auto x = ctx.dense(l);
  std::vector<double> h(l.hidden);
  for (int j = 0; j < l.hidden; ++j) {
    double s = p.values[p.b1_offset() + j];
    for (int i = 0; i < l.input_dim(); ++i) s += x[i] * p.values[static_cast<std::size_t>(i) * l.hidden + j];
    h[j] = std::tanh(s);
  }
  std::vector<double> z(l.vocab);
  for (int v = 0; v < l.vocab; ++v) {
    double s = p.values[p.b2_offset() + v];
    for (int j = 0; j < l.hidden; ++j) s += p.values[p.w2_offset() + static_cast<std::size_t>(v) * l.hidden + j] * h[j];
    z[v] = s;
  }
  return z;
}

}  // namespace

TEST_CASE("zero params give a uniform distribution") {
  Layout l;
  PolicyParams p(l);
  const TokenSeq prompt{1, 2, 3};
  ContextFeatures ctx(l, prompt, {});
  const auto lp = forward(p, ctx, 1.0).log_probs();
  for (double x : lp) CHECK(x == doctest::Approx(-std::log(16.0)).epsilon(1e-15));
  CHECK(entropy(forward(p, ctx, 1.0)) == doctest::Approx(2.772588722239781).epsilon(1e-12));
  const TokenSeq resp{4, 5};
  for (double x : sequence_logprobs(p, prompt, resp, 1.0)) CHECK(x == doctest::Approx(-std::log(16.0)));
}

TEST_CASE("forward is deterministic and matches a naive evaluation") {
  const auto l = tiny_layout();
  const auto p = random_params(l, 11);
  const TokenSeq prompt{1, 4};
  const TokenSeq gen{2, 0, 3};
  ContextFeatures ctx(l, prompt, gen);
  const auto a = forward(p, ctx, 1.0).logits;
  const auto b = forward(p, ctx, 1.0).logits;
  CHECK(a == b);
  const auto z = naive_logits(p, ctx);
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(a[i] == doctest::Approx(z[i]).epsilon(1e-12));
}

TEST_CASE("context slots: prompt first, most recent generated token first, -1 padding") {
  const auto l = tiny_layout();  // prompt_len 3, K 2
  const TokenSeq prompt{4};
  const TokenSeq gen{1, 2, 3};
  ContextFeatures ctx(l, prompt, gen);
  const std::vector<Token> expect{4, -1, -1, 3, 2};
  CHECK(std::vector<Token>(ctx.slots().begin(), ctx.slots().end()) == expect);
  const auto d = ctx.dense(l);
  double ones = 0;
  for (double x : d) ones += x;
  CHECK(ones == 3.0);
  CHECK_THROWS_AS(ContextFeatures(l, TokenSeq{1, 2, 3, 4}, {}), LayoutError);
  CHECK_THROWS_AS(ContextFeatures(l, TokenSeq{9}, {}), VocabularyError);
}

TEST_CASE("logit Jacobian agrees with finite differences") {
  const auto l = tiny_layout();
  const auto p = random_params(l, 5);
  const TokenSeq prompt{0, 3};
  const TokenSeq gen{1};
  ContextFeatures ctx(l, prompt, gen);
  for (int v = 0; v < l.vocab; ++v) {
    const auto fd = finite_diff(p, [&](const PolicyParams& q) { return forward(q, ctx, 1.0).logits[v]; });
    // the only dependence on b2 is through logit v itself
    for (int u = 0; u < l.vocab; ++u) CHECK(fd[p.b2_offset() + u] == doctest::Approx(u == v ? 1.0 : 0.0).epsilon(1e-8));
  }
}

TEST_CASE("sampling: saturated and uniform cases") {
  TokenDistribution d;
  d.logits.assign(16, 0.0);
  RngStream r1(9), r2(9);
  const auto a = sample_token(d, r1);
  const auto b = sample_token(d, r2);
  CHECK(a.token == b.token);
  CHECK(a.logprob == doctest::Approx(-2.772588722239781).epsilon(1e-12));
  d.logits[5] = 1e6;
  RngStream r3(1);
  for (int i = 0; i < 50; ++i) {
    const auto s = sample_token(d, r3);
    CHECK(s.token == 5);
    CHECK(s.logprob == doctest::Approx(0.0));
  }
}

TEST_CASE("sampling frequencies within 3 sigma over 1e5 draws") {
  TokenDistribution d;
  d.logits = {0.3, -1.2, 2.0, 0.0, 0.7};
  const auto pr = d.probs();
  std::vector<int> counts(pr.size(), 0);
  RngStream r(123);
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[sample_token(d, r).token];
  for (std::size_t k = 0; k < pr.size(); ++k) {
    const double sigma = std::sqrt(n * pr[k] * (1 - pr[k]));
    CHECK(std::abs(counts[k] - n * pr[k]) < 3.0 * sigma);
  }
}

TEST_CASE("temperature scales logits") {
  TokenDistribution d;
  d.logits = {1.0, 2.0, 3.0};
  d.temperature = 2.0;
  TokenDistribution e;
  e.logits = {0.5, 1.0, 1.5};
  const auto a = d.log_probs(), b = e.log_probs();
  for (int i = 0; i < 3; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-14));
}

TEST_CASE("entropy matches direct summation") {
  RngStream r(8);
  for (int trial = 0; trial < 20; ++trial) {
    TokenDistribution d;
    for (int i = 0; i < 16; ++i) d.logits.push_back(6.0 * r.uniform() - 3.0);
    double zsum = 0.0;
    for (double z : d.logits) zsum += std::exp(z);
    double h = 0.0;
    for (double z : d.logits) {
      const double p = std::exp(z) / zsum;
      h -= p * std::log(p);
    }
    CHECK(std::abs(entropy(d) - h) < 1e-10);
  }
  TokenDistribution det;
  det.logits = {1e6, 0, 0};
  CHECK(entropy(det) == doctest::Approx(0.0));
}

TEST_CASE("sequence logprobs: rescoring reproduces generation and length-1 completions sum to 1") {
  const auto l = tiny_layout();
  const auto p = random_params(l, 21);
  const TokenSeq prompt{2, 1};
  RngStream r(4);
  const auto g = generate(p, prompt, 1.0, r);
  CHECK(sequence_logprobs(p, prompt, g.tokens, 1.0) == g.logprobs);
  double total = 0.0;
  for (Token t = 0; t < l.vocab; ++t) {
    const TokenSeq one{t};
    total += std::exp(sequence_logprobs(p, prompt, one, 1.0)[0]);
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("generation stops at EOS or max_response") {
  const auto l = tiny_layout();
  const auto p = random_params(l, 2);
  for (std::uint64_t s = 0; s < 50; ++s) {
    RngStream r(s);
    const auto g = generate(p, TokenSeq{1}, 1.0, r);
    REQUIRE(!g.tokens.empty());
    CHECK(static_cast<int>(g.tokens.size()) <= l.max_response);
    for (std::size_t i = 0; i + 1 < g.tokens.size(); ++i) CHECK(g.tokens[i] != l.eos());
    CHECK(g.logprobs.size() == g.tokens.size());
  }
}

TEST_CASE("weighted-logprob gradient: zero, finite differences, linearity") {
  Layout l;
  l.vocab = 8;
  l.hidden = 8;
  l.context = 2;
  l.prompt_len = 3;
  l.max_response = 3;
  const TokenSeq prompt{1, 2};
  ContextFeatures c0(l, prompt, {});
  ContextFeatures c1(l, prompt, TokenSeq{3});
  const std::vector<WeightedToken> one{{c0, 4, 1.0}};
  PolicyParams wz = random_params(l, 3);
  const auto gz = grad_weighted_logprob(wz, std::vector<WeightedToken>{{c0, 4, 0.0}});
  CHECK(max_abs(gz) == 0.0);

  const auto p = random_params(l, 99);
  const auto g = grad_weighted_logprob(p, one);
  const auto fd = finite_diff(p, [&](const PolicyParams& q) { return forward(q, c0, 1.0).log_probs()[4]; });
  CHECK(rel_error(g, fd) < 1e-4);

  const std::vector<WeightedToken> a{{c0, 4, 0.7}}, b{{c1, 6, -1.3}}, ab{{c0, 4, 0.7}, {c1, 6, -1.3}};
  const auto ga = grad_weighted_logprob(p, a), gb = grad_weighted_logprob(p, b), gab = grad_weighted_logprob(p, ab);
  for (std::size_t i = 0; i < gab.size(); ++i) CHECK(std::abs(gab[i] - ga[i] - gb[i]) < 1e-9);
}

TEST_CASE("init is seeded and respects scales") {
  Layout l;
  const auto a = PolicyParams::init(l, 7, 0.1);
  const auto b = PolicyParams::init(l, 7, 0.1);
  CHECK(a == b);
  CHECK(a.values.size() == l.param_count());
  for (std::size_t i = 0; i < a.b1_offset(); ++i) CHECK(std::abs(a.values[i]) <= 0.1);
  for (int j = 0; j < l.hidden; ++j) CHECK(a.values[a.b1_offset() + j] == 0.0);
  const auto c = PolicyParams::init(l, 7, 0.1, 1.0);
  double big = 0;
  for (std::size_t i = 0; i < c.b1_offset(); ++i) big = std::max(big, std::abs(c.values[i]));
  CHECK(big > 0.1);
  CHECK(big <= 1.0);
}

TEST_CASE("layout validation") {
  Layout l;
  PolicyParams p(l);
  p.values.pop_back();
  CHECK_THROWS_AS(p.check(), LayoutError);
}
