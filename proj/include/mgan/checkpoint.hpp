#pragma once

// Binary checkpoint container.
//
//   "MGANCKPT" magic, u32 format version
//   network kind, hyperparameter record (key=value text), vocab hash,
//   vocabulary tokens, category names
//   u64 parameter count, then per parameter: name, rank, dims, f64 values
//   u8 optimizer flag, then optionally the Adam step and both moment sets
//   u64 FNV-1a checksum of everything before it
//
// Integers and doubles are little-endian; strings are a u64 length followed
// by raw bytes.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mgan/corpus.hpp"
#include "mgan/model.hpp"
#include "mgan/training.hpp"

namespace mgan {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Network network;
  Vocab vocab;
  std::vector<std::string> categories;
  std::optional<AdamState> optimizer;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
// Throws LoadError on a bad magic string, version, checksum, truncation or
// inconsistent contents. With `expected_vocab` set, a different vocabulary
// hash is refused.
Checkpoint decode_checkpoint(std::string_view bytes, const Vocab* expected_vocab = nullptr);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path, const Vocab* expected_vocab = nullptr);

}  // namespace mgan
