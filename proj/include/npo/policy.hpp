#pragma once

// Small autoregressive softmax policy: one-hot context -> tanh hidden layer -> logits.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "npo/rng.hpp"

namespace npo {

using Token = std::int32_t;
using TokenSeq = std::vector<Token>;

struct Layout {
  int vocab = 16;       // V; token V-1 is end-of-sequence
  int context = 4;      // K most recent generated tokens
  int hidden = 32;      // H
  int prompt_len = 8;   // prompt slots; shorter prompts are zero-padded
  int max_response = 8; // generation stops at EOS or this many tokens

  int slots() const { return prompt_len + context; }
  int input_dim() const { return slots() * vocab; }
  std::size_t param_count() const {
    return static_cast<std::size_t>(input_dim()) * hidden + hidden +
           static_cast<std::size_t>(hidden) * vocab + vocab;
  }
  Token eos() const { return vocab - 1; }

  friend bool operator==(const Layout&, const Layout&) = default;
};

/// Flat parameter vector. Storage order: W1 input-major [input_dim][hidden],
/// b1 [hidden], W2 [vocab][hidden], b2 [vocab].
struct PolicyParams {
  Layout layout;
  std::vector<double> values;

  PolicyParams() = default;
  explicit PolicyParams(Layout l);

  /// Uniform(-scale, scale) weights, zero biases.
  static PolicyParams init(Layout l, std::uint64_t seed, double scale = 0.1, double input_scale = -1.0);

  std::span<const double> w1_row(int input) const {
    return {values.data() + static_cast<std::size_t>(input) * layout.hidden,
            static_cast<std::size_t>(layout.hidden)};
  }
  std::size_t b1_offset() const { return static_cast<std::size_t>(layout.input_dim()) * layout.hidden; }
  std::size_t w2_offset() const { return b1_offset() + layout.hidden; }
  std::size_t b2_offset() const { return w2_offset() + static_cast<std::size_t>(layout.hidden) * layout.vocab; }

  void check() const;
  bool all_finite() const;

  friend bool operator==(const PolicyParams&, const PolicyParams&) = default;
};

/// One token (or -1 for padding) per input slot: prompt slots first, then
/// the K most recent generated tokens, most recent first.
class ContextFeatures {
 public:
  ContextFeatures(const Layout& layout, std::span<const Token> prompt, std::span<const Token> generated);

  std::span<const Token> slots() const { return slots_; }
  /// Dense one-hot vector of length (prompt_len + K) * V.
  std::vector<double> dense(const Layout& layout) const;

 private:
  std::vector<Token> slots_;
};

struct TokenDistribution {
  std::vector<double> logits;
  double temperature = 1.0;

  /// log softmax(logits / temperature), computed once per call.
  std::vector<double> log_probs() const;
  std::vector<double> probs() const;
};

struct SampledToken {
  Token token;
  double logprob;
};

TokenDistribution forward(const PolicyParams& params, const ContextFeatures& ctx, double temperature);

SampledToken sample_token(const TokenDistribution& dist, RngStream& rng);

/// Teacher-forced per-token log-probabilities of `tokens` given `prompt`.
std::vector<double> sequence_logprobs(const PolicyParams& params, std::span<const Token> prompt,
                                      std::span<const Token> tokens, double temperature);

double entropy(const TokenDistribution& dist);

struct WeightedToken {
  ContextFeatures ctx;
  Token token;
  double weight;
};

/// Gradient of sum_k weight_k * log pi(token_k | ctx_k) by manual backprop.
std::vector<double> grad_weighted_logprob(const PolicyParams& params, std::span<const WeightedToken> batch,
                                          double temperature = 1.0);

/// Accumulating variant: grad += d/dtheta [weight * log pi(token | ctx)].
void accumulate_grad(const PolicyParams& params, const ContextFeatures& ctx, Token token, double weight,
                     double temperature, std::span<double> grad);

struct Generation {
  TokenSeq tokens;
  std::vector<double> logprobs;
  std::vector<double> entropies;
};

/// Autoregressive sampling until EOS or max_response tokens.
Generation generate(const PolicyParams& params, std::span<const Token> prompt, double temperature, RngStream& rng);

}  // namespace npo
