#pragma once

// Accuracy and macro-F1 over a 3×3 confusion matrix, the Coarse2Fine
// localization hit rate and per-example attention traces.

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mgan/corpus.hpp"
#include "mgan/model.hpp"

namespace mgan {

// Rows are gold classes, columns predicted classes.
class Confusion {
 public:
  void add(Sentiment gold, Sentiment predicted);
  std::size_t at(Sentiment gold, Sentiment predicted) const;
  std::size_t at(std::size_t gold, std::size_t predicted) const { return counts_[gold][predicted]; }
  std::size_t& at(std::size_t gold, std::size_t predicted) { return counts_[gold][predicted]; }
  std::size_t total() const;
  std::size_t correct() const;

  friend bool operator==(const Confusion&, const Confusion&) = default;

 private:
  std::array<std::array<std::size_t, kNumSentiments>, kNumSentiments> counts_{};
};

Confusion make_confusion(std::span<const Sentiment> gold, std::span<const Sentiment> predicted);

// Both throw DomainError on an empty confusion matrix.
double accuracy(const Confusion& c);
// Unweighted mean of per-class F1 over all three classes. Zero denominators
// give 0 for precision, recall and F1.
double macro_f1(const Confusion& c);

struct Metrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::size_t count = 0;
};

Metrics metrics(const Confusion& c);
// "accuracy=... macro_f1=... count=..." with shortest round-trip decimals.
std::string format_metrics(const Metrics& m, std::string_view prefix = "");

// Highest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

std::vector<Sentiment> predict(Network& net, std::span<const SourceExample> examples, const Vocab& vocab,
                               std::size_t batch_size = 64);
std::vector<Sentiment> predict(Network& net, std::span<const TargetExample> examples, const Vocab& vocab,
                               std::size_t batch_size = 64);
Confusion evaluate(Network& net, std::span<const SourceExample> examples, const Vocab& vocab,
                   std::size_t batch_size = 64);
Confusion evaluate(Network& net, std::span<const TargetExample> examples, const Vocab& vocab,
                   std::size_t batch_size = 64);

// Fraction of sentences whose argmax β lies inside the planted span.
// `betas[k]` covers at least the true length of sentence k.
double localization_hit_rate(const std::vector<std::vector<double>>& betas, std::span<const TermSpan> manifest);
// Coarse2Fine weights of a source network for each example, truncated to
// the true sentence length.
std::vector<std::vector<double>> c2f_weights(Network& source, std::span<const SourceExample> examples,
                                             const Vocab& vocab, std::size_t batch_size = 64);
// Throws ValidationError when the manifest and corpus lengths differ and
// DomainError on an empty corpus.
double c2f_localization(Network& source, std::span<const SourceExample> examples,
                        std::span<const TermSpan> manifest, const Vocab& vocab);

// mean(span_len / n): hit rate of a uniformly random position.
double chance_localization(std::span<const SourceExample> examples, std::span<const TermSpan> manifest);
// The same baseline estimated by drawing `draws` random positions per sentence.
double chance_localization_mc(std::span<const SourceExample> examples, std::span<const TermSpan> manifest, Rng& rng,
                              std::size_t draws);

struct AttentionTrace {
  NetworkKind kind = NetworkKind::target;
  Tokens tokens;
  Tokens aspect;
  std::optional<TermSpan> span;           // target only
  std::vector<double> alpha;              // [m]
  std::optional<std::vector<double>> beta;  // source only, [n]
  std::vector<double> gamma;              // [n]
  std::vector<double> p;                  // [n]
  std::vector<std::vector<double>> alignment;  // M, [n × m]
  Sentiment prediction = Sentiment::neutral;
  Sentiment gold = Sentiment::neutral;
  std::vector<double> probabilities;      // [3]
};

// Re-checks that α, β and γ sum to 1 within 1e-10 and throws
// EvaluationError otherwise.
AttentionTrace extract_trace(Network& net, const Vocab& vocab, const SourceExample& example);
AttentionTrace extract_trace(Network& net, const Vocab& vocab, const TargetExample& example);

// One JSON object on a single line.
std::string trace_to_json(const AttentionTrace& trace);

}  // namespace mgan
