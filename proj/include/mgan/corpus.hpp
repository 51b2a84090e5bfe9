#pragma once

// Sentence/aspect corpora for the category-level source task and the
// term-level target task, plus vocabulary, embeddings, batching and the
// seeded synthetic benchmark generator.
//
// Corpus files are JSON lines. The first line is a header
//   {"kind":"source","categories":["food","service"]}   or   {"kind":"target"}
// and every following line is one record:
//   source: {"context":[...],"aspect":[...],"category":"food","sentiment":"positive"}
//   target: {"context":[...],"span_start":3,"span_len":1,"sentiment":"negative"}
// span_start is 0-based.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mgan/numerics.hpp"

namespace mgan {

enum class Sentiment : int { positive = 0, neutral = 1, negative = 2 };
inline constexpr std::size_t kNumSentiments = 3;

std::string_view to_string(Sentiment s);
Sentiment parse_sentiment(std::string_view text);

using Tokens = std::vector<std::string>;

struct SourceExample {
  Tokens context;
  Tokens aspect;  // category words; need not occur in the context
  std::size_t category = 0;
  Sentiment sentiment = Sentiment::neutral;

  friend bool operator==(const SourceExample&, const SourceExample&) = default;
};

struct TargetExample {
  Tokens context;
  std::size_t span_start = 0;  // 0-based index of the first aspect-term token
  std::size_t span_len = 1;
  Sentiment sentiment = Sentiment::neutral;

  Tokens aspect() const;
  friend bool operator==(const TargetExample&, const TargetExample&) = default;
};

struct SourceCorpus {
  std::vector<std::string> categories;
  std::vector<SourceExample> examples;

  friend bool operator==(const SourceCorpus&, const SourceCorpus&) = default;
};

struct TargetCorpus {
  std::vector<TargetExample> examples;

  friend bool operator==(const TargetCorpus&, const TargetCorpus&) = default;
};

enum class CorpusKind { source, target };

// Throws ValidationError when m0 + m > n, m == 0 or the context is empty.
void validate(const TargetExample& ex);

CorpusKind peek_corpus_kind(const std::filesystem::path& path);
SourceCorpus load_source_corpus(const std::filesystem::path& path);
TargetCorpus load_target_corpus(const std::filesystem::path& path);
SourceCorpus parse_source_corpus(std::istream& in, std::string_view name = "<stream>");
TargetCorpus parse_target_corpus(std::istream& in, std::string_view name = "<stream>");
std::string serialize(const SourceCorpus& corpus);
std::string serialize(const TargetCorpus& corpus);
void write_corpus(const SourceCorpus& corpus, const std::filesystem::path& path);
void write_corpus(const TargetCorpus& corpus, const std::filesystem::path& path);

// --- vocabulary ---

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  Vocab();
  // `tokens` must start with the two reserved entries.
  static Vocab from_tokens(std::vector<std::string> tokens);

  int id(std::string_view token) const;
  const std::string& token(int id) const;
  bool contains(std::string_view token) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::vector<int> ids(std::span<const std::string> tokens) const;
  std::uint64_t hash() const;

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

class VocabBuilder {
 public:
  void add(std::span<const std::string> tokens);
  void add(const SourceCorpus& corpus);
  void add(const TargetCorpus& corpus);
  // Tokens seen at least min_count times, ordered by descending frequency
  // then lexicographically.
  Vocab build(std::size_t min_count) const;

 private:
  std::unordered_map<std::string, std::size_t> counts_;
};

Vocab build_vocab(const SourceCorpus& source, const TargetCorpus& target, std::size_t min_count = 1);

// --- embeddings ---

struct EmbeddingTable {
  Tensor table;  // [|V| × dim]
  std::size_t coverage = 0;
};

// GloVe text format: one token followed by `dim` decimals per line. Rows of
// vocabulary words found in the file are copied, others drawn from
// U(-0.01, 0.01); the padding row is zero.
EmbeddingTable load_embeddings(const std::filesystem::path& path, const Vocab& vocab, std::size_t dim, Rng& rng);
EmbeddingTable parse_embeddings(std::istream& in, const Vocab& vocab, std::size_t dim, Rng& rng);
Tensor random_embeddings(const Vocab& vocab, std::size_t dim, Rng& rng, double scale = kInitScale);

// --- batching ---

struct Batch {
  CorpusKind kind = CorpusKind::source;
  std::size_t n_max = 0;
  std::size_t m_max = 0;
  std::vector<std::vector<int>> context_ids;  // [B × n_max], padded with Vocab::kPad
  std::vector<Mask> context_mask;
  std::vector<std::vector<int>> aspect_ids;   // [B × m_max]
  std::vector<Mask> aspect_mask;
  std::vector<std::size_t> lengths;           // true sentence lengths
  std::vector<std::size_t> span_start;        // target only
  std::vector<std::size_t> span_len;          // target only
  std::vector<std::size_t> category;          // source only
  std::vector<Sentiment> sentiment;
  std::vector<std::size_t> example_index;     // positions in the batched sequence

  std::size_t size() const { return sentiment.size(); }
};

Batch make_batch(std::span<const SourceExample> examples, std::span<const std::size_t> order, const Vocab& vocab);
Batch make_batch(std::span<const TargetExample> examples, std::span<const std::size_t> order, const Vocab& vocab);

// One epoch: every example exactly once, in seeded shuffled order when
// `shuffle` is set (rng must then be non-null).
std::vector<Batch> make_batches(std::span<const SourceExample> examples, const Vocab& vocab, std::size_t batch_size,
                                Rng* rng, bool shuffle);
std::vector<Batch> make_batches(std::span<const TargetExample> examples, const Vocab& vocab, std::size_t batch_size,
                                Rng* rng, bool shuffle);

// Seeded train/validation split; the first result holds 1 - fraction.
template <typename Example>
std::pair<std::vector<Example>, std::vector<Example>> split_holdout(const std::vector<Example>& examples,
                                                                    double fraction, Rng& rng) {
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(std::span<std::size_t>(order));
  std::size_t held = static_cast<std::size_t>(static_cast<double>(examples.size()) * fraction + 0.5);
  if (fraction > 0.0 && held == 0 && examples.size() > 1) held = 1;
  std::pair<std::vector<Example>, std::vector<Example>> out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < held ? out.second : out.first).push_back(examples[order[i]]);
  }
  return out;
}

// --- synthetic benchmark ---

struct TermSpan {
  std::size_t start = 0;
  std::size_t length = 1;

  friend bool operator==(const TermSpan&, const TermSpan&) = default;
};

struct SynthConfig {
  std::vector<std::string> categories;
  std::vector<Tokens> category_aspects;            // aspect words per category
  std::vector<std::vector<std::string>> source_terms;  // per-category term lexicons (disjoint)
  std::vector<std::string> target_terms;           // target-domain terms, may be multi-word
  std::vector<std::string> positive_cues;
  std::vector<std::string> negative_cues;
  std::vector<std::string> neutral_cues;
  std::vector<std::string> fillers;
  // Whitespace-separated tokens with placeholders {T}/{C} (single aspect)
  // or {T1}/{C1}/{T2}/{C2} (two aspects, the contrastive case).
  std::vector<std::string> single_templates;
  std::vector<std::string> multi_templates;
  double multi_aspect_fraction = 0.5;
  double neutral_fraction = 0.2;
  double contrast_probability = 0.7;  // chance the second cue has a different polarity
  std::size_t max_fillers = 2;        // per side of the sentence
  std::size_t source_size = 1000;
  std::size_t source_test_size = 0;
  std::size_t target_size = 200;
  std::size_t target_test_size = 0;
};

SynthConfig default_synth_config();

struct SynthCorpora {
  SourceCorpus source;
  std::vector<TermSpan> source_manifest;  // planted term of the example's category, never used for training
  SourceCorpus source_test;
  std::vector<TermSpan> source_test_manifest;
  TargetCorpus target;
  TargetCorpus target_test;
};

// Throws ConfigError when category lexicons overlap or lists are empty.
SynthCorpora gen_synthetic(const SynthConfig& config, std::uint64_t seed);

// Manifest: one line per source record, "start" or "start length".
std::string serialize_manifest(const std::vector<TermSpan>& manifest);
std::vector<TermSpan> load_manifest(const std::filesystem::path& path);
std::vector<TermSpan> parse_manifest(std::istream& in);

// Writes "word v1 ... v_dim" lines with entries drawn from U(-scale, scale)
// for every token in `vocab` except the reserved ids.
std::string random_embedding_text(const Vocab& vocab, std::size_t dim, Rng& rng, double scale);

// Stand-in for pretrained vectors with semantic neighbourhoods. Each
// category's aspect words and source terms sit around a shared centroid, as
// do the cues of each polarity; every other word is independent. Centroid
// and free entries come from U(-scale, scale), offsets from U(-noise, noise).
// noise == 0 gives independent rows for every word. Reserved rows are zero.
Tensor stand_in_embeddings(const SynthConfig& config, const Vocab& vocab, std::size_t dim, Rng& rng, double scale,
                           double noise);
// "word v1 ... v_dim" lines for every non-reserved row.
std::string embedding_text(const Vocab& vocab, const Tensor& table);

}  // namespace mgan
