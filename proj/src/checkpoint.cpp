#include "npo/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "npo/error.hpp"

namespace npo {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'N', 'P', 'O', '1'};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f64s(std::span<const double> v) {
    u64(v.size());
    for (double x : v) f64(x);
  }
  void bytes(std::string_view s) {
    u64(s.size());
    out_.append(s);
  }
  void raw(std::string_view s) { out_.append(s); }
  std::string& str() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::vector<double> f64s() {
    const auto n = u64();
    if (n > (in_.size() - pos_) / 8) throw FormatError("checkpoint: array length exceeds file");
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }
  std::string bytes() {
    const auto n = u64();
    need(n);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::string_view raw(std::size_t n) {
    need(n);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > in_.size() - pos_) throw FormatError("checkpoint: truncated file");
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t checksum64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string encode_checkpoint(const CheckpointRecord& r) {
  Writer w;
  w.raw(std::string_view(kMagic, 4));
  w.u32(r.format_version);
  w.i64(r.step);
  const Layout& L = r.params.layout;
  for (int v : {L.vocab, L.context, L.hidden, L.prompt_len, L.max_response}) w.i32(v);
  w.f64s(r.params.values);
  w.f64s(r.optimizer.m);
  w.f64s(r.optimizer.v);
  w.i64(r.optimizer.step);
  w.f64(r.optimizer.lr);
  w.f64(r.optimizer.beta1);
  w.f64(r.optimizer.beta2);
  w.f64(r.optimizer.eps);
  w.u64(r.rng_states.size());
  for (const auto& [name, state] : r.rng_states) {
    w.bytes(name);
    w.bytes(state);
  }
  w.i64(r.data_cursor.epoch);
  w.i64(r.data_cursor.index);
  w.u64(r.data_cursor.shuffle_seed);
  w.bytes(r.trainer_state);
  w.u64(checksum64(w.str()));
  return std::move(w.str());
}

CheckpointRecord decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < 16) throw FormatError("checkpoint: file too short");
  const auto body = bytes.substr(0, bytes.size() - 8);
  Reader tail(bytes.substr(bytes.size() - 8));
  if (tail.u64() != checksum64(body)) throw ChecksumError("checkpoint: checksum mismatch");

  Reader rd(body);
  if (rd.raw(4) != std::string_view(kMagic, 4)) throw FormatError("checkpoint: bad magic");
  CheckpointRecord r;
  r.format_version = rd.u32();
  if (r.format_version != kCheckpointFormatVersion)
    throw FormatError("checkpoint: unsupported format version " + std::to_string(r.format_version));
  r.step = rd.i64();
  Layout L;
  L.vocab = rd.i32();
  L.context = rd.i32();
  L.hidden = rd.i32();
  L.prompt_len = rd.i32();
  L.max_response = rd.i32();
  r.params.layout = L;
  r.params.values = rd.f64s();
  r.params.check();
  r.optimizer.m = rd.f64s();
  r.optimizer.v = rd.f64s();
  r.optimizer.step = rd.i64();
  r.optimizer.lr = rd.f64();
  r.optimizer.beta1 = rd.f64();
  r.optimizer.beta2 = rd.f64();
  r.optimizer.eps = rd.f64();
  const auto streams = rd.u64();
  for (std::uint64_t i = 0; i < streams; ++i) {
    auto name = rd.bytes();
    r.rng_states[name] = rd.bytes();
  }
  r.data_cursor.epoch = rd.i64();
  r.data_cursor.index = rd.i64();
  r.data_cursor.shuffle_seed = rd.u64();
  r.trainer_state = rd.bytes();
  if (rd.pos() != body.size()) throw FormatError("checkpoint: trailing bytes");
  return r;
}

CheckpointStore::CheckpointStore(fs::path root, Retention retention) : root_(std::move(root)), retention_(retention) {
  if (retention_.keep < 1) throw ContractError("checkpoint store: keep must be >= 1");
  fs::create_directories(root_);
  const auto manifest = root_ / "manifest.txt";
  if (fs::exists(manifest)) {
    std::ifstream in(manifest);
    std::int64_t s = 0;
    while (in >> s)
      if (fs::exists(path_for(s))) steps_.push_back(s);
    std::sort(steps_.begin(), steps_.end());
  }
}

fs::path CheckpointStore::path_for(std::int64_t step) const {
  char name[32];
  std::snprintf(name, sizeof name, "ckpt_%08lld.npo", static_cast<long long>(step));
  return root_ / name;
}

void CheckpointStore::write_manifest() const {
  const auto tmp = root_ / "manifest.txt.tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    for (auto s : steps_) out << s << '\n';
    if (!out) throw Error("checkpoint store: cannot write " + tmp.string());
  }
  fs::rename(tmp, root_ / "manifest.txt");
}

std::int64_t CheckpointStore::save(const CheckpointRecord& record) {
  if (contains(record.step))
    throw ContractError("checkpoint store: step " + std::to_string(record.step) + " already saved");
  const auto bytes = encode_checkpoint(record);
  const auto final_path = path_for(record.step);
  const auto tmp = fs::path(final_path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error("checkpoint store: write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, final_path, ec);
  if (ec) throw Error("checkpoint store: rename failed for " + final_path.string() + ": " + ec.message());
  steps_.insert(std::upper_bound(steps_.begin(), steps_.end(), record.step), record.step);
  while (steps_.size() > static_cast<std::size_t>(retention_.keep)) {
    fs::remove(path_for(steps_.front()));
    steps_.erase(steps_.begin());
  }
  write_manifest();
  return record.step;
}

bool CheckpointStore::contains(std::int64_t step) const {
  return std::binary_search(steps_.begin(), steps_.end(), step);
}

CheckpointRecord CheckpointStore::load(std::int64_t step) const {
  if (!contains(step)) throw NotFoundError("checkpoint store: no checkpoint at step " + std::to_string(step));
  const auto path = path_for(step);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("checkpoint store: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return decode_checkpoint(ss.str());
  } catch (const ChecksumError& e) {
    throw ChecksumError(std::string(e.what()) + " (" + path.string() + ")");
  } catch (const FormatError& e) {
    throw FormatError(std::string(e.what()) + " (" + path.string() + ")");
  }
}

void CheckpointStore::truncate_after(std::int64_t step) {
  auto it = std::upper_bound(steps_.begin(), steps_.end(), step);
  for (auto j = it; j != steps_.end(); ++j) fs::remove(path_for(*j));
  steps_.erase(it, steps_.end());
  write_manifest();
}

KlEstimate kl_between_params(const PolicyParams& a, const PolicyParams& b, std::span<const Prompt* const> probes,
                             int samples, std::uint64_t seed, double temperature) {
  KlEstimate est;
  if (probes.empty() || samples <= 0) return est;
  if (!(a.layout == b.layout)) throw LayoutError("kl_between: layouts differ");
  std::vector<double> sums, lens;
  sums.reserve(samples);
  lens.reserve(samples);
  for (int s = 0; s < samples; ++s) {
    const Prompt& p = *probes[static_cast<std::size_t>(s) % probes.size()];
    auto rng = RngStream::derive({seed, static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(p.id), salt(Stream::Kl)});
    TokenSeq tokens;
    double sum = 0.0;
    while (static_cast<int>(tokens.size()) < a.layout.max_response) {
      ContextFeatures ctx(a.layout, p.tokens, tokens);
      const auto da = forward(a, ctx, temperature);
      const auto la = da.log_probs();
      const auto lb = forward(b, ctx, temperature).log_probs();
      double kl = 0.0;
      for (std::size_t k = 0; k < la.size(); ++k) {
        const double pa = std::exp(la[k]);
        if (pa > 0.0) kl += pa * (la[k] - lb[k]);
      }
      sum += std::max(kl, 0.0);
      const auto tok = sample_token(da, rng).token;
      tokens.push_back(tok);
      if (tok == a.layout.eos()) break;
    }
    sums.push_back(sum);
    lens.push_back(static_cast<double>(tokens.size()));
  }
  double total = 0.0, count = 0.0;
  for (std::size_t i = 0; i < sums.size(); ++i) {
    total += sums[i];
    count += lens[i];
  }
  est.mean = total / count;
  est.tokens = static_cast<std::int64_t>(count);
  const double m = static_cast<double>(sums.size());
  if (m > 1) {
    double rss = 0.0;
    for (std::size_t i = 0; i < sums.size(); ++i) {
      const double r = sums[i] - est.mean * lens[i];
      rss += r * r;
    }
    est.std_err = std::sqrt(rss / (m * (m - 1.0))) / (count / m);
  }
  return est;
}

KlEstimate kl_between(const CheckpointStore& store, std::int64_t step_a, std::int64_t step_b,
                      std::span<const Prompt* const> probes, int samples, std::uint64_t seed, double temperature) {
  const auto a = store.load(step_a);
  const auto b = store.load(step_b);
  return kl_between_params(a.params, b.params, probes, samples, seed, temperature);
}

}  // namespace npo
