#pragma once

// Synthetic verifiable-reward tasks: modular arithmetic (easy tier) and
// running-parity chains (hard, sparse-reward tier).

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "npo/policy.hpp"

namespace npo {

enum class Tier : int { Arith = 0, Parity = 1 };

struct Prompt {
  std::int64_t id = 0;
  TokenSeq tokens;
  TokenSeq answer;
  Tier tier = Tier::Arith;

  friend bool operator==(const Prompt&, const Prompt&) = default;
};

struct DataCursor {
  std::int64_t epoch = 0;
  std::int64_t index = 0;
  std::uint64_t shuffle_seed = 0;

  friend bool operator==(const DataCursor&, const DataCursor&) = default;
};

/// Ordered prompts plus an epoch cursor. The visiting order of an epoch is a
/// pure function of (shuffle_seed, epoch).
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<Prompt> prompts, std::uint64_t shuffle_seed);

  const std::vector<Prompt>& prompts() const { return prompts_; }
  std::size_t size() const { return prompts_.size(); }
  const Prompt& by_id(std::int64_t id) const;
  bool contains(std::int64_t id) const;

  DataCursor cursor() const { return cursor_; }
  void set_cursor(const DataCursor& c);

  /// Next `count` prompts in shuffled order, wrapping into new epochs.
  std::vector<const Prompt*> next_batch(std::size_t count);

  /// Visiting order for an epoch (indices into prompts()).
  std::vector<std::size_t> epoch_order(std::int64_t epoch) const;

 private:
  void index_ids();

  std::vector<Prompt> prompts_;
  std::vector<std::size_t> id_index_;  // sorted positions by id
  DataCursor cursor_;
  std::int64_t cached_epoch_ = -1;
  std::vector<std::size_t> order_;
};

enum class ArithOp : int { Add = 0, Sub = 1, Mul = 2 };

/// Prompts (a, op, b), answer = base-V digits of (a op b) mod modulus.
/// Operands range over [0, operand_limit); 0 means [0, modulus).
Dataset gen_arith_mod(std::size_t count, int modulus, std::span<const ArithOp> ops, std::uint64_t seed,
                      int vocab = 16, int operand_limit = 0);

/// Prompt = [marker, b_1..b_L]; answer = running parities.
Dataset gen_parity_chain(std::size_t count, int chain_length, std::uint64_t seed, int vocab = 16);

/// Concatenate datasets, renumbering prompt ids 0..N-1 in order.
Dataset concat(std::vector<Dataset> parts, std::uint64_t shuffle_seed);

/// Base-V digits, most significant first ("0" for zero).
TokenSeq base_digits(std::int64_t value, int base);

Token parity_marker(int vocab);

/// 1 iff response with trailing EOS tokens removed equals the answer.
int verify(const Prompt& prompt, std::span<const Token> response, int vocab = 16);

std::vector<ArithOp> parse_ops(const std::string& symbols);

/// One prompt per line: id, prompt length, prompt tokens, answer length, answer tokens, tier.
void write_dataset(std::ostream& os, const Dataset& d);
Dataset read_dataset(std::istream& is, std::uint64_t shuffle_seed);

}  // namespace npo
