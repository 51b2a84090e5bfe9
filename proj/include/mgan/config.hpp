#pragma once

// Run configuration: a flat "key = value" file with '#' comments. Command
// line overrides are applied on top and the resolved result is written next
// to every run's outputs.
//
// Relative paths in a file resolve against that file's directory; empty
// corpus paths default to the generated names inside output_dir.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "mgan/corpus.hpp"
#include "mgan/model.hpp"
#include "mgan/training.hpp"

namespace mgan {

struct RunConfig {
  std::filesystem::path output_dir = ".";
  std::filesystem::path source_corpus;       // default output_dir/source.jsonl
  std::filesystem::path source_test_corpus;  // default output_dir/source_test.jsonl
  std::filesystem::path source_test_manifest;
  std::filesystem::path target_corpus;
  std::filesystem::path target_test_corpus;
  std::filesystem::path embeddings;  // optional GloVe-format file

  Hyperparams hp;
  std::uint64_t seed = 1;
  double validation_fraction = 0.1;
  std::size_t patience = 10;
  std::size_t pretrain_max_epochs = 200;
  std::size_t max_epochs = 200;
  bool cfa_gradient_isolation = true;
  std::size_t vocab_min_count = 1;

  // gen-synth sizes and the stand-in embedding file: scale 0 emits none,
  // cluster noise 0 makes every row independent.
  std::size_t synth_source_size = 5000;
  std::size_t synth_source_test_size = 500;
  std::size_t synth_target_size = 200;
  std::size_t synth_target_test_size = 200;
  double synth_embedding_scale = 0.0;
  double synth_embedding_cluster_noise = 0.0;

  std::filesystem::path source_corpus_path() const;
  std::filesystem::path source_test_corpus_path() const;
  std::filesystem::path source_test_manifest_path() const;
  std::filesystem::path target_corpus_path() const;
  std::filesystem::path target_test_corpus_path() const;

  TrainConfig pretrain_config() const;
  TrainConfig train_config() const;
};

// Throws ConfigError naming the key for unknown keys or bad values.
void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value,
                      const std::filesystem::path& base_dir = {});
RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);
// Applies "key=value".
void apply_override(RunConfig& cfg, std::string_view assignment);
void validate(const RunConfig& cfg);

std::string serialize(const RunConfig& cfg);

}  // namespace mgan
