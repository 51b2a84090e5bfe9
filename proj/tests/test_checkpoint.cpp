#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "mgan/checkpoint.hpp"
#include "mgan/io.hpp"
#include "test_support.hpp"

using namespace mgan;
using namespace mgan::testing;

namespace {

struct Saved {
  Checkpoint ckpt;
  std::string bytes;
};

Saved make_checkpoint(bool with_optimizer, std::uint64_t seed = 1) {
  SynthConfig sc = default_synth_config();
  sc.source_size = 30;
  sc.target_size = 10;
  const SynthCorpora c = gen_synthetic(sc, seed);
  Hyperparams hp;
  hp.d_w = 6;
  hp.d_h = 4;
  hp.d_u = 3;
  hp.fc = 5;
  hp.lambda = 0.25;
  Checkpoint ck;
  ck.vocab = build_vocab(c.source, c.target);
  ck.categories = c.source.categories;
  Rng rng(seed);
  ck.network = Network(NetworkKind::source, ck.vocab.size(), ck.categories.size(), hp, rng);
  if (with_optimizer) {
    ck.network.params().for_each([&](Parameter& p) { p.grad = random_tensor(p.value.shape(), rng); });
    Adam adam(ck.network.params(), 1e-3);
    adam.step(ck.network.params());
    adam.step(ck.network.params());
    ck.optimizer = adam.state();
  }
  return {ck, encode_checkpoint(ck)};
}

void patch_checksum(std::string& bytes) {
  const std::uint64_t sum = fnv1a64(std::string_view(bytes).substr(0, bytes.size() - 8));
  std::memcpy(bytes.data() + bytes.size() - 8, &sum, 8);
}

}  // namespace

TEST_CASE("checkpoints round-trip bit-exactly") {
  for (bool opt : {false, true}) {
    const Saved s = make_checkpoint(opt);
    const Checkpoint back = decode_checkpoint(s.bytes);
    CHECK(back.network.kind() == NetworkKind::source);
    CHECK(back.network.hyperparams() == s.ckpt.network.hyperparams());
    CHECK(back.vocab.tokens() == s.ckpt.vocab.tokens());
    CHECK(back.categories == s.ckpt.categories);
    REQUIRE(back.network.params().size() == s.ckpt.network.params().size());
    for (std::size_t i = 0; i < back.network.params().size(); ++i) {
      CHECK(back.network.params()[i].name == s.ckpt.network.params()[i].name);
      CHECK(back.network.params()[i].value == s.ckpt.network.params()[i].value);
    }
    CHECK(back.optimizer.has_value() == opt);
    if (opt) CHECK(*back.optimizer == *s.ckpt.optimizer);
    CHECK(encode_checkpoint(back) == s.bytes);
  }
}

TEST_CASE("checkpoint files round-trip through disk") {
  const Saved s = make_checkpoint(true, 2);
  const auto path = std::filesystem::temp_directory_path() / "mgan_test_ckpt.bin";
  save_checkpoint(s.ckpt, path);
  CHECK(read_file(path) == s.bytes);
  const Checkpoint back = load_checkpoint(path, &s.ckpt.vocab);
  CHECK(encode_checkpoint(back) == s.bytes);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), LoadError);
}

TEST_CASE("a flipped byte fails the checksum") {
  Saved s = make_checkpoint(false);
  s.bytes[s.bytes.size() / 2] ^= 0x01;
  CHECK_THROWS_WITH_AS(decode_checkpoint(s.bytes), doctest::Contains("checksum"), LoadError);
}

TEST_CASE("truncation, bad magic and trailing bytes are refused") {
  const Saved s = make_checkpoint(false);
  CHECK_THROWS_AS(decode_checkpoint(s.bytes.substr(0, s.bytes.size() - 20)), LoadError);
  CHECK_THROWS_AS(decode_checkpoint(s.bytes.substr(0, 10)), LoadError);
  std::string bad = s.bytes;
  bad[0] = 'X';
  CHECK_THROWS_WITH_AS(decode_checkpoint(bad), doctest::Contains("magic"), LoadError);
  std::string longer = s.bytes.substr(0, s.bytes.size() - 8) + "junk" + std::string(8, '\0');
  patch_checksum(longer);
  CHECK_THROWS_WITH_AS(decode_checkpoint(longer), doctest::Contains("trailing"), LoadError);
}

TEST_CASE("an unknown format version is named in the error") {
  std::string bytes = make_checkpoint(false).bytes;
  const std::uint32_t version = kCheckpointVersion + 1;
  std::memcpy(bytes.data() + 8, &version, 4);
  CHECK_THROWS_WITH_AS(decode_checkpoint(bytes), doctest::Contains("version"), LoadError);
  patch_checksum(bytes);
  CHECK_THROWS_WITH_AS(decode_checkpoint(bytes), doctest::Contains("version"), LoadError);
}

TEST_CASE("a different expected vocabulary is refused") {
  const Saved s = make_checkpoint(false);
  const Vocab other = Vocab::from_tokens({"<pad>", "<unk>", "something"});
  CHECK_THROWS_WITH_AS(decode_checkpoint(s.bytes, &other), doctest::Contains("vocabulary"), LoadError);
  CHECK_NOTHROW(decode_checkpoint(s.bytes, &s.ckpt.vocab));
}
