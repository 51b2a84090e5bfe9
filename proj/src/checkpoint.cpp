#include "mgan/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "mgan/io.hpp"

namespace mgan {

namespace {

constexpr char kMagic[8] = {'M', 'G', 'A', 'N', 'C', 'K', 'P', 'T'};
// Guards against absurd sizes in corrupt files before any allocation.
constexpr std::uint64_t kMaxCount = std::uint64_t{1} << 32;

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u64(s.size());
    out_.append(s);
  }
  void raw(const char* data, std::size_t n) { out_.append(data, n); }
  void tensor(const Tensor& t) {
    u64(t.rank());
    for (std::size_t d : t.shape()) u64(d);
    for (double v : t.data()) f64(v);
  }
  std::string& bytes() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : in_(bytes) {}

  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw LoadError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(in_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{static_cast<unsigned char>(in_[pos_++])} << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{static_cast<unsigned char>(in_[pos_++])} << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::uint64_t count() {
    const std::uint64_t n = u64();
    if (n > kMaxCount) throw LoadError("checkpoint declares an implausible count " + std::to_string(n));
    return n;
  }
  std::string str() {
    const std::uint64_t n = count();
    need(n);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  Tensor tensor() {
    const std::uint64_t rank = count();
    if (rank == 0 || rank > 2) throw LoadError("checkpoint tensor of rank " + std::to_string(rank));
    Shape shape(rank);
    std::uint64_t total = 1;
    for (auto& d : shape) {
      d = count();
      if (d == 0) throw LoadError("checkpoint tensor with a zero dimension");
      total *= d;
      if (total > kMaxCount) throw LoadError("checkpoint tensor too large");
    }
    need(total * 8);
    std::vector<double> data(total);
    for (auto& v : data) v = f64();
    return Tensor(std::move(shape), std::move(data));
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.str(to_string(ckpt.network.kind()));
  w.str(serialize(ckpt.network.hyperparams()));
  w.u64(ckpt.vocab.hash());
  w.u64(ckpt.vocab.size());
  for (const auto& t : ckpt.vocab.tokens()) w.str(t);
  w.u64(ckpt.categories.size());
  for (const auto& c : ckpt.categories) w.str(c);
  const ParameterSet& params = ckpt.network.params();
  w.u64(params.size());
  params.for_each([&](const Parameter& p) {
    w.str(p.name);
    w.tensor(p.value);
  });
  w.u8(ckpt.optimizer ? 1 : 0);
  if (ckpt.optimizer) {
    const AdamState& s = *ckpt.optimizer;
    if (s.m.size() != params.size() || s.v.size() != params.size()) {
      throw DimensionError("checkpoint: optimizer state does not match the parameter set");
    }
    w.u64(s.step);
    for (const auto& t : s.m) w.tensor(t);
    for (const auto& t : s.v) w.tensor(t);
  }
  const std::uint64_t checksum = fnv1a64(w.bytes());
  w.u64(checksum);
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(std::string_view bytes, const Vocab* expected_vocab) {
  if (bytes.size() < sizeof kMagic + 4 + 8 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw LoadError("not a checkpoint file (bad magic)");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  Reader tail(bytes.substr(bytes.size() - 8));
  if (tail.u64() != fnv1a64(body)) {
    Reader r(bytes.substr(sizeof kMagic));
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
      throw LoadError("checkpoint format version " + std::to_string(version) + ", expected " +
                      std::to_string(kCheckpointVersion));
    }
    throw LoadError("checkpoint checksum mismatch (truncated or corrupt file)");
  }

  Reader r(body.substr(sizeof kMagic));
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw LoadError("checkpoint format version " + std::to_string(version) + ", expected " +
                    std::to_string(kCheckpointVersion));
  }
  const std::string kind_text = r.str();
  NetworkKind kind;
  if (kind_text == "source") kind = NetworkKind::source;
  else if (kind_text == "target") kind = NetworkKind::target;
  else throw LoadError("checkpoint: unknown network kind '" + kind_text + "'");

  Hyperparams hp;
  try {
    hp = parse_hyperparams(r.str());
  } catch (const ConfigError& e) {
    throw LoadError(std::string("checkpoint hyperparameters: ") + e.what());
  }
  const std::uint64_t vocab_hash = r.u64();
  std::vector<std::string> tokens(r.count());
  for (auto& t : tokens) t = r.str();
  Checkpoint ckpt;
  try {
    ckpt.vocab = Vocab::from_tokens(std::move(tokens));
  } catch (const std::exception& e) {
    throw LoadError(std::string("checkpoint vocabulary: ") + e.what());
  }
  if (ckpt.vocab.hash() != vocab_hash) throw LoadError("checkpoint vocabulary does not match its stored hash");
  if (expected_vocab && expected_vocab->hash() != vocab_hash) {
    throw LoadError("checkpoint vocabulary hash " + std::to_string(vocab_hash) + " differs from the expected " +
                    std::to_string(expected_vocab->hash()));
  }
  ckpt.categories.resize(r.count());
  for (auto& c : ckpt.categories) c = r.str();

  Rng unused(0);
  Network net(kind, ckpt.vocab.size(), ckpt.categories.size(), hp, unused);
  const std::uint64_t n_params = r.count();
  if (n_params != net.params().size()) {
    throw LoadError("checkpoint holds " + std::to_string(n_params) + " parameters, the network has " +
                    std::to_string(net.params().size()));
  }
  for (std::uint64_t i = 0; i < n_params; ++i) {
    const std::string name = r.str();
    Tensor value = r.tensor();
    if (!net.params().contains(name)) throw LoadError("checkpoint parameter '" + name + "' is not part of the network");
    Parameter& p = net.params().get(name);
    if (p.value.shape() != value.shape()) {
      throw LoadError("checkpoint parameter '" + name + "' has shape " + shape_str(value.shape()) + ", expected " +
                      shape_str(p.value.shape()));
    }
    p.value = std::move(value);
  }
  if (r.u8() != 0) {
    AdamState s;
    s.step = r.u64();
    for (std::size_t k = 0; k < 2; ++k) {
      auto& moments = k == 0 ? s.m : s.v;
      for (std::size_t i = 0; i < net.params().size(); ++i) {
        Tensor t = r.tensor();
        if (t.shape() != net.params()[i].value.shape()) throw LoadError("checkpoint optimizer moment shape mismatch");
        moments.push_back(std::move(t));
      }
    }
    ckpt.optimizer = std::move(s);
  }
  if (!r.done()) throw LoadError("checkpoint has trailing bytes");
  ckpt.network = std::move(net);
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const Vocab* expected_vocab) {
  try {
    return decode_checkpoint(read_file(path), expected_vocab);
  } catch (const LoadError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

}  // namespace mgan
