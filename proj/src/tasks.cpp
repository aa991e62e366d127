#include "npo/tasks.hpp"

#include <algorithm>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "npo/error.hpp"

namespace npo {

Dataset::Dataset(std::vector<Prompt> prompts, std::uint64_t shuffle_seed) : prompts_(std::move(prompts)) {
  cursor_.shuffle_seed = shuffle_seed;
  index_ids();
}

void Dataset::index_ids() {
  id_index_.resize(prompts_.size());
  std::iota(id_index_.begin(), id_index_.end(), std::size_t{0});
  std::sort(id_index_.begin(), id_index_.end(),
            [&](std::size_t a, std::size_t b) { return prompts_[a].id < prompts_[b].id; });
  for (std::size_t i = 1; i < id_index_.size(); ++i)
    if (prompts_[id_index_[i]].id == prompts_[id_index_[i - 1]].id)
      throw ContractError("dataset: duplicate prompt id " + std::to_string(prompts_[id_index_[i]].id));
}

const Prompt& Dataset::by_id(std::int64_t id) const {
  auto it = std::lower_bound(id_index_.begin(), id_index_.end(), id,
                             [&](std::size_t pos, std::int64_t key) { return prompts_[pos].id < key; });
  if (it == id_index_.end() || prompts_[*it].id != id) throw NotFoundError("dataset: no prompt " + std::to_string(id));
  return prompts_[*it];
}

bool Dataset::contains(std::int64_t id) const {
  auto it = std::lower_bound(id_index_.begin(), id_index_.end(), id,
                             [&](std::size_t pos, std::int64_t key) { return prompts_[pos].id < key; });
  return it != id_index_.end() && prompts_[*it].id == id;
}

void Dataset::set_cursor(const DataCursor& c) {
  if (c.index < 0 || c.index > static_cast<std::int64_t>(prompts_.size()) || c.epoch < 0)
    throw ContractError("dataset: cursor out of range");
  cursor_ = c;
  cached_epoch_ = -1;
}

std::vector<std::size_t> Dataset::epoch_order(std::int64_t epoch) const {
  std::vector<std::size_t> order(prompts_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = RngStream::derive({cursor_.shuffle_seed, static_cast<std::uint64_t>(epoch), salt(Stream::Shuffle)});
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

std::vector<const Prompt*> Dataset::next_batch(std::size_t count) {
  if (prompts_.empty()) throw ContractError("dataset: empty");
  std::vector<const Prompt*> out;
  out.reserve(count);
  while (out.size() < count) {
    if (cursor_.index >= static_cast<std::int64_t>(prompts_.size())) {
      ++cursor_.epoch;
      cursor_.index = 0;
    }
    if (cached_epoch_ != cursor_.epoch) {
      order_ = epoch_order(cursor_.epoch);
      cached_epoch_ = cursor_.epoch;
    }
    out.push_back(&prompts_[order_[cursor_.index++]]);
  }
  return out;
}

TokenSeq base_digits(std::int64_t value, int base) {
  if (value < 0 || base < 2) throw EncodingError("base_digits: invalid input");
  TokenSeq d;
  do {
    d.push_back(static_cast<Token>(value % base));
    value /= base;
  } while (value > 0);
  std::reverse(d.begin(), d.end());
  return d;
}

Token parity_marker(int vocab) { return vocab - 2; }

Dataset gen_arith_mod(std::size_t count, int modulus, std::span<const ArithOp> ops, std::uint64_t seed, int vocab,
                      int operand_limit) {
  // EOS occupies vocab-1, so residues must stay below it.
  if (modulus > vocab - 1) throw EncodingError("gen_arith_mod: modulus " + std::to_string(modulus) + " exceeds vocabulary");
  if (modulus < 1 || ops.empty()) throw EncodingError("gen_arith_mod: need modulus >= 1 and at least one op");

  if (operand_limit < 0 || operand_limit > modulus)
    throw EncodingError("gen_arith_mod: operand_limit must lie in [0, modulus]");
  const int limit = operand_limit == 0 ? modulus : operand_limit;

  struct Combo { int a; ArithOp op; int b; };
  std::vector<Combo> all;
  for (auto op : ops)
    for (int a = 0; a < limit; ++a)
      for (int b = 0; b < limit; ++b) all.push_back({a, op, b});
  auto rng = RngStream::derive({seed, 0xa417ULL});
  for (std::size_t i = all.size(); i > 1; --i) std::swap(all[i - 1], all[rng.below(i)]);

  std::vector<Prompt> prompts;
  prompts.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const Combo& c = all[i % all.size()];
    std::int64_t r = 0;
    switch (c.op) {
      case ArithOp::Add: r = c.a + c.b; break;
      case ArithOp::Sub: r = c.a - c.b; break;
      case ArithOp::Mul: r = static_cast<std::int64_t>(c.a) * c.b; break;
    }
    r = ((r % modulus) + modulus) % modulus;
    prompts.push_back({static_cast<std::int64_t>(i), {c.a, static_cast<Token>(c.op), c.b}, base_digits(r, vocab), Tier::Arith});
  }
  return Dataset(std::move(prompts), seed);
}

Dataset gen_parity_chain(std::size_t count, int chain_length, std::uint64_t seed, int vocab) {
  if (chain_length < 1) throw EncodingError("gen_parity_chain: chain_length must be >= 1");
  auto rng = RngStream::derive({seed, 0x9a51ULL});
  std::vector<Prompt> prompts;
  prompts.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Prompt p;
    p.id = static_cast<std::int64_t>(i);
    p.tier = Tier::Parity;
    p.tokens.push_back(parity_marker(vocab));
    int parity = 0;
    for (int k = 0; k < chain_length; ++k) {
      const int bit = static_cast<int>(rng.below(2));
      parity ^= bit;
      p.tokens.push_back(bit);
      p.answer.push_back(parity);
    }
    prompts.push_back(std::move(p));
  }
  return Dataset(std::move(prompts), seed);
}

Dataset concat(std::vector<Dataset> parts, std::uint64_t shuffle_seed) {
  std::vector<Prompt> all;
  for (auto& d : parts)
    for (const auto& p : d.prompts()) {
      all.push_back(p);
      all.back().id = static_cast<std::int64_t>(all.size() - 1);
    }
  return Dataset(std::move(all), shuffle_seed);
}

int verify(const Prompt& prompt, std::span<const Token> response, int vocab) {
  const Token eos = vocab - 1;
  std::size_t len = response.size();
  while (len > 0 && response[len - 1] == eos) --len;
  if (len != prompt.answer.size()) return 0;
  return std::equal(prompt.answer.begin(), prompt.answer.end(), response.begin()) ? 1 : 0;
}

std::vector<ArithOp> parse_ops(const std::string& symbols) {
  std::vector<ArithOp> ops;
  for (char c : symbols) {
    switch (c) {
      case '+': ops.push_back(ArithOp::Add); break;
      case '-': ops.push_back(ArithOp::Sub); break;
      case '*': case 'x': ops.push_back(ArithOp::Mul); break;
      default: throw EncodingError(std::string("parse_ops: unknown op '") + c + "'");
    }
  }
  return ops;
}

void write_dataset(std::ostream& os, const Dataset& d) {
  for (const auto& p : d.prompts()) {
    os << p.id << ' ' << p.tokens.size();
    for (auto t : p.tokens) os << ' ' << t;
    os << ' ' << p.answer.size();
    for (auto t : p.answer) os << ' ' << t;
    os << ' ' << static_cast<int>(p.tier) << '\n';
  }
}

Dataset read_dataset(std::istream& is, std::uint64_t shuffle_seed) {
  std::vector<Prompt> prompts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    Prompt p;
    std::size_t n = 0;
    auto fail = [&] { return ParseError("dataset line " + std::to_string(lineno) + ": malformed record"); };
    if (!(ls >> p.id >> n)) throw fail();
    p.tokens.resize(n);
    for (auto& t : p.tokens)
      if (!(ls >> t)) throw fail();
    if (!(ls >> n)) throw fail();
    p.answer.resize(n);
    for (auto& t : p.answer)
      if (!(ls >> t)) throw fail();
    int tier = 0;
    if (!(ls >> tier) || (tier != 0 && tier != 1)) throw fail();
    std::string rest;
    if (ls >> rest) throw fail();
    p.tier = static_cast<Tier>(tier);
    prompts.push_back(std::move(p));
  }
  return Dataset(std::move(prompts), shuffle_seed);
}

}  // namespace npo
