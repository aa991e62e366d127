#include "npo/policy.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "npo/error.hpp"

namespace npo {

PolicyParams::PolicyParams(Layout l) : layout(l), values(l.param_count(), 0.0) {}

PolicyParams PolicyParams::init(Layout l, std::uint64_t seed, double scale, double input_scale) {
  PolicyParams p(l);
  auto rng = RngStream::derive({seed, salt(Stream::Init)});
  auto fill = [&](std::size_t begin, std::size_t end, double s) {
    for (std::size_t i = begin; i < end; ++i) p.values[i] = (2.0 * rng.uniform() - 1.0) * s;
  };
  fill(0, p.b1_offset(), input_scale < 0.0 ? scale : input_scale);
  fill(p.w2_offset(), p.b2_offset(), scale);
  return p;
}

void PolicyParams::check() const {
  if (layout.vocab < 2 || layout.context < 1 || layout.hidden < 1 || layout.prompt_len < 1 ||
      layout.max_response < 1)
    throw LayoutError("policy: degenerate layout");
  if (values.size() != layout.param_count())
    throw LayoutError("policy: parameter vector has " + std::to_string(values.size()) + " entries, layout implies " +
                      std::to_string(layout.param_count()));
}

bool PolicyParams::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

ContextFeatures::ContextFeatures(const Layout& layout, std::span<const Token> prompt,
                                 std::span<const Token> generated)
    : slots_(static_cast<std::size_t>(layout.slots()), -1) {
  if (prompt.size() > static_cast<std::size_t>(layout.prompt_len))
    throw LayoutError("context: prompt of length " + std::to_string(prompt.size()) + " exceeds prompt_len " +
                      std::to_string(layout.prompt_len));
  auto checked = [&](Token t) {
    if (t < 0 || t >= layout.vocab) throw VocabularyError("context: token " + std::to_string(t) + " outside vocabulary");
    return t;
  };
  for (std::size_t i = 0; i < prompt.size(); ++i) slots_[i] = checked(prompt[i]);
  const std::size_t recent = std::min(generated.size(), static_cast<std::size_t>(layout.context));
  for (std::size_t j = 0; j < recent; ++j)
    slots_[layout.prompt_len + j] = checked(generated[generated.size() - 1 - j]);
}

std::vector<double> ContextFeatures::dense(const Layout& layout) const {
  std::vector<double> x(static_cast<std::size_t>(layout.input_dim()), 0.0);
  for (std::size_t s = 0; s < slots_.size(); ++s)
    if (slots_[s] >= 0) x[s * layout.vocab + slots_[s]] = 1.0;
  return x;
}

std::vector<double> TokenDistribution::log_probs() const {
  std::vector<double> z(logits.size());
  double m = -INFINITY;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    z[i] = logits[i] / temperature;
    m = std::max(m, z[i]);
  }
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - m);
  const double lse = m + std::log(sum);
  for (double& v : z) v -= lse;
  return z;
}

std::vector<double> TokenDistribution::probs() const {
  auto lp = log_probs();
  for (double& v : lp) v = std::exp(v);
  return lp;
}

namespace {

void check_context(const PolicyParams& params, const ContextFeatures& ctx) {
  if (ctx.slots().size() != static_cast<std::size_t>(params.layout.slots()))
    throw LayoutError("forward: context has " + std::to_string(ctx.slots().size()) + " slots, layout expects " +
                      std::to_string(params.layout.slots()));
  if (params.values.size() != params.layout.param_count()) params.check();
}

// hidden = tanh(b1 + sum of active W1 rows); logits = W2 hidden + b2.
void forward_into(const PolicyParams& params, const ContextFeatures& ctx, std::vector<double>& hidden,
                  std::vector<double>& logits) {
  const Layout& L = params.layout;
  const double* v = params.values.data();
  hidden.assign(v + params.b1_offset(), v + params.b1_offset() + L.hidden);
  const auto slots = ctx.slots();
  for (std::size_t s = 0; s < slots.size(); ++s) {
    if (slots[s] < 0) continue;
    const double* row = v + (s * L.vocab + slots[s]) * L.hidden;
    for (int j = 0; j < L.hidden; ++j) hidden[j] += row[j];
  }
  for (double& h : hidden) h = std::tanh(h);
  logits.assign(v + params.b2_offset(), v + params.b2_offset() + L.vocab);
  const double* w2 = v + params.w2_offset();
  for (int k = 0; k < L.vocab; ++k) {
    const double* row = w2 + static_cast<std::size_t>(k) * L.hidden;
    double acc = 0.0;
    for (int j = 0; j < L.hidden; ++j) acc += row[j] * hidden[j];
    logits[k] += acc;
  }
}

}  // namespace

TokenDistribution forward(const PolicyParams& params, const ContextFeatures& ctx, double temperature) {
  if (!(temperature > 0.0)) throw ContractError("forward: temperature must be positive");
  check_context(params, ctx);
  std::vector<double> hidden;
  TokenDistribution dist;
  dist.temperature = temperature;
  forward_into(params, ctx, hidden, dist.logits);
  return dist;
}

SampledToken sample_token(const TokenDistribution& dist, RngStream& rng) {
  const auto lp = dist.log_probs();
  const double u = rng.uniform();
  double cum = 0.0;
  std::size_t chosen = lp.size();
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    const double p = std::exp(lp[i]);
    if (p > 0.0) last_positive = i;
    cum += p;
    if (u < cum) {
      chosen = i;
      break;
    }
  }
  // Rounding can leave cum slightly below 1.
  if (chosen == lp.size()) chosen = last_positive;
  return {static_cast<Token>(chosen), lp[chosen]};
}

double entropy(const TokenDistribution& dist) {
  const auto lp = dist.log_probs();
  double h = 0.0;
  for (double v : lp) {
    const double p = std::exp(v);
    if (p > 0.0) h -= p * v;
  }
  return h;
}

std::vector<double> sequence_logprobs(const PolicyParams& params, std::span<const Token> prompt,
                                      std::span<const Token> tokens, double temperature) {
  if (tokens.size() > static_cast<std::size_t>(params.layout.max_response))
    throw ContractError("sequence_logprobs: response longer than max_response");
  std::vector<double> out;
  out.reserve(tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] < 0 || tokens[t] >= params.layout.vocab)
      throw VocabularyError("sequence_logprobs: token " + std::to_string(tokens[t]) + " outside vocabulary");
    ContextFeatures ctx(params.layout, prompt, tokens.first(t));
    out.push_back(forward(params, ctx, temperature).log_probs()[tokens[t]]);
  }
  return out;
}

void accumulate_grad(const PolicyParams& params, const ContextFeatures& ctx, Token token, double weight,
                     double temperature, std::span<double> grad) {
  if (weight == 0.0) return;
  check_context(params, ctx);
  const Layout& L = params.layout;
  std::vector<double> hidden, logits;
  forward_into(params, ctx, hidden, logits);
  TokenDistribution dist{std::move(logits), temperature};
  auto p = dist.probs();

  // d log pi(token) / d logits = (onehot - p) / T
  std::vector<double> g_logits(L.vocab);
  for (int k = 0; k < L.vocab; ++k) g_logits[k] = weight * ((k == token ? 1.0 : 0.0) - p[k]) / temperature;

  const double* v = params.values.data();
  std::vector<double> g_pre(L.hidden, 0.0);
  for (int k = 0; k < L.vocab; ++k) {
    const std::size_t row = params.w2_offset() + static_cast<std::size_t>(k) * L.hidden;
    for (int j = 0; j < L.hidden; ++j) {
      grad[row + j] += g_logits[k] * hidden[j];
      g_pre[j] += g_logits[k] * v[row + j];
    }
    grad[params.b2_offset() + k] += g_logits[k];
  }
  for (int j = 0; j < L.hidden; ++j) {
    g_pre[j] *= 1.0 - hidden[j] * hidden[j];
    grad[params.b1_offset() + j] += g_pre[j];
  }
  const auto slots = ctx.slots();
  for (std::size_t s = 0; s < slots.size(); ++s) {
    if (slots[s] < 0) continue;
    const std::size_t row = (s * L.vocab + slots[s]) * L.hidden;
    for (int j = 0; j < L.hidden; ++j) grad[row + j] += g_pre[j];
  }
}

std::vector<double> grad_weighted_logprob(const PolicyParams& params, std::span<const WeightedToken> batch,
                                          double temperature) {
  std::vector<double> grad(params.values.size(), 0.0);
  for (const auto& item : batch) {
    if (!std::isfinite(item.weight)) throw NumericError("grad_weighted_logprob: non-finite weight");
    accumulate_grad(params, item.ctx, item.token, item.weight, temperature, grad);
  }
  return grad;
}

Generation generate(const PolicyParams& params, std::span<const Token> prompt, double temperature, RngStream& rng) {
  Generation g;
  const Layout& L = params.layout;
  while (static_cast<int>(g.tokens.size()) < L.max_response) {
    ContextFeatures ctx(L, prompt, g.tokens);
    const auto dist = forward(params, ctx, temperature);
    const auto s = sample_token(dist, rng);
    g.tokens.push_back(s.token);
    g.logprobs.push_back(s.logprob);
    g.entropies.push_back(entropy(dist));
    if (s.token == L.eos()) break;
  }
  return g;
}

}  // namespace npo
