#include "mgan/eval.hpp"

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mgan/io.hpp"

namespace mgan {

void Confusion::add(Sentiment gold, Sentiment predicted) {
  ++counts_[static_cast<std::size_t>(gold)][static_cast<std::size_t>(predicted)];
}

std::size_t Confusion::at(Sentiment gold, Sentiment predicted) const {
  return counts_[static_cast<std::size_t>(gold)][static_cast<std::size_t>(predicted)];
}

std::size_t Confusion::total() const {
  std::size_t n = 0;
  for (const auto& row : counts_) {
    for (std::size_t v : row) n += v;
  }
  return n;
}

std::size_t Confusion::correct() const {
  std::size_t n = 0;
  for (std::size_t c = 0; c < kNumSentiments; ++c) n += counts_[c][c];
  return n;
}

Confusion make_confusion(std::span<const Sentiment> gold, std::span<const Sentiment> predicted) {
  if (gold.size() != predicted.size()) {
    throw DimensionError("confusion: " + std::to_string(gold.size()) + " gold labels but " +
                         std::to_string(predicted.size()) + " predictions");
  }
  Confusion c;
  for (std::size_t i = 0; i < gold.size(); ++i) c.add(gold[i], predicted[i]);
  return c;
}

double accuracy(const Confusion& c) {
  const std::size_t total = c.total();
  if (total == 0) throw DomainError("accuracy of an empty confusion matrix");
  return static_cast<double>(c.correct()) / static_cast<double>(total);
}

double macro_f1(const Confusion& c) {
  if (c.total() == 0) throw DomainError("macro-F1 of an empty confusion matrix");
  double sum = 0.0;
  for (std::size_t k = 0; k < kNumSentiments; ++k) {
    const double tp = static_cast<double>(c.at(k, k));
    double predicted = 0.0, gold = 0.0;
    for (std::size_t j = 0; j < kNumSentiments; ++j) {
      predicted += static_cast<double>(c.at(j, k));
      gold += static_cast<double>(c.at(k, j));
    }
    const double precision = predicted > 0.0 ? tp / predicted : 0.0;
    const double recall = gold > 0.0 ? tp / gold : 0.0;
    sum += precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }
  return sum / static_cast<double>(kNumSentiments);
}

Metrics metrics(const Confusion& c) { return {accuracy(c), macro_f1(c), c.total()}; }

std::string format_metrics(const Metrics& m, std::string_view prefix) {
  std::ostringstream out;
  const std::string p(prefix);
  out << p << "accuracy=" << format_double(m.accuracy) << " " << p << "macro_f1=" << format_double(m.macro_f1) << " "
      << p << "count=" << m.count;
  return out.str();
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw DomainError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

namespace {

template <typename Example>
std::vector<Sentiment> predict_impl(Network& net, std::span<const Example> examples, const Vocab& vocab,
                                    std::size_t batch_size) {
  std::vector<Sentiment> out;
  out.reserve(examples.size());
  for (const Batch& batch : make_batches(examples, vocab, batch_size, nullptr, false)) {
    for (const auto& probs : predict_proba(net, batch)) out.push_back(static_cast<Sentiment>(argmax(probs)));
  }
  return out;
}

template <typename Example>
Confusion evaluate_impl(Network& net, std::span<const Example> examples, const Vocab& vocab, std::size_t batch_size) {
  std::vector<Sentiment> gold;
  gold.reserve(examples.size());
  for (const auto& ex : examples) gold.push_back(ex.sentiment);
  return make_confusion(gold, predict_impl(net, examples, vocab, batch_size));
}

}  // namespace

std::vector<Sentiment> predict(Network& net, std::span<const SourceExample> examples, const Vocab& vocab,
                               std::size_t batch_size) {
  return predict_impl(net, examples, vocab, batch_size);
}

std::vector<Sentiment> predict(Network& net, std::span<const TargetExample> examples, const Vocab& vocab,
                               std::size_t batch_size) {
  return predict_impl(net, examples, vocab, batch_size);
}

Confusion evaluate(Network& net, std::span<const SourceExample> examples, const Vocab& vocab, std::size_t batch_size) {
  return evaluate_impl(net, examples, vocab, batch_size);
}

Confusion evaluate(Network& net, std::span<const TargetExample> examples, const Vocab& vocab, std::size_t batch_size) {
  return evaluate_impl(net, examples, vocab, batch_size);
}

double localization_hit_rate(const std::vector<std::vector<double>>& betas, std::span<const TermSpan> manifest) {
  if (betas.size() != manifest.size()) {
    throw ValidationError("localization: " + std::to_string(betas.size()) + " sentences but " +
                          std::to_string(manifest.size()) + " manifest entries");
  }
  if (betas.empty()) throw DomainError("localization over an empty corpus");
  std::size_t hits = 0;
  for (std::size_t k = 0; k < betas.size(); ++k) {
    const std::size_t i = argmax(betas[k]);
    if (i >= manifest[k].start && i < manifest[k].start + manifest[k].length) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(betas.size());
}

std::vector<std::vector<double>> c2f_weights(Network& source, std::span<const SourceExample> examples,
                                             const Vocab& vocab, std::size_t batch_size) {
  if (source.kind() != NetworkKind::source) throw DomainError("Coarse2Fine weights need a source network");
  std::vector<std::vector<double>> out;
  out.reserve(examples.size());
  for (const Batch& batch : make_batches(examples, vocab, batch_size, nullptr, false)) {
    Tape tape(false);
    BatchOutputs fwd = forward_batch(tape, source, batch, {.trainable = false});
    for (const ExampleOutputs& ex : fwd.examples) {
      const auto beta = ex.beta.value().data();
      out.emplace_back(beta.begin(), beta.begin() + static_cast<std::ptrdiff_t>(ex.length));
    }
  }
  return out;
}

double c2f_localization(Network& source, std::span<const SourceExample> examples, std::span<const TermSpan> manifest,
                        const Vocab& vocab) {
  if (examples.size() != manifest.size()) {
    throw ValidationError("localization: " + std::to_string(examples.size()) + " sentences but " +
                          std::to_string(manifest.size()) + " manifest entries");
  }
  if (examples.empty()) throw DomainError("localization over an empty corpus");
  return localization_hit_rate(c2f_weights(source, examples, vocab), manifest);
}

double chance_localization(std::span<const SourceExample> examples, std::span<const TermSpan> manifest) {
  if (examples.size() != manifest.size()) throw ValidationError("localization: manifest length mismatch");
  if (examples.empty()) throw DomainError("localization over an empty corpus");
  double sum = 0.0;
  for (std::size_t k = 0; k < examples.size(); ++k) {
    sum += static_cast<double>(manifest[k].length) / static_cast<double>(examples[k].context.size());
  }
  return sum / static_cast<double>(examples.size());
}

double chance_localization_mc(std::span<const SourceExample> examples, std::span<const TermSpan> manifest, Rng& rng,
                              std::size_t draws) {
  if (examples.size() != manifest.size()) throw ValidationError("localization: manifest length mismatch");
  if (examples.empty() || draws == 0) throw DomainError("localization over an empty corpus");
  std::size_t hits = 0;
  for (std::size_t k = 0; k < examples.size(); ++k) {
    for (std::size_t d = 0; d < draws; ++d) {
      const std::size_t i = rng.below(examples[k].context.size());
      if (i >= manifest[k].start && i < manifest[k].start + manifest[k].length) ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(examples.size() * draws);
}

namespace {

std::vector<double> head(const Var& v, std::size_t n) {
  const auto data = v.value().data();
  return {data.begin(), data.begin() + static_cast<std::ptrdiff_t>(n)};
}

void check_distribution(const std::vector<double>& d, const char* name) {
  double s = 0.0;
  for (double x : d) s += x;
  if (std::abs(s - 1.0) > 1e-10) {
    throw EvaluationError(std::string("attention trace: ") + name + " sums to " + format_double(s));
  }
}

template <typename Example>
AttentionTrace trace_impl(Network& net, const Vocab& vocab, const Example& example) {
  std::vector<Example> one{example};
  std::vector<std::size_t> order{0};
  const Batch batch = make_batch(std::span<const Example>(one), order, vocab);
  Tape tape(false);
  ExampleOutputs out = forward_example(tape, net, batch, 0, {.trainable = false});
  const std::size_t n = out.length;
  const std::size_t m = batch.aspect_ids[0].size();

  AttentionTrace trace;
  trace.kind = net.kind();
  trace.tokens = example.context;
  trace.alpha = head(out.alpha, m);
  trace.gamma = head(out.gamma, n);
  trace.p = head(out.p, n);
  const Tensor& M = out.alignment.value();
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row(m);
    for (std::size_t j = 0; j < m; ++j) row[j] = M.at(i, j);
    trace.alignment.push_back(std::move(row));
  }
  if (out.beta.valid()) {
    trace.beta = head(out.beta, n);
    check_distribution(*trace.beta, "beta");
  }
  check_distribution(trace.alpha, "alpha");
  check_distribution(trace.gamma, "gamma");
  trace.probabilities = softmax_values(out.logits.value().data(), Mask(kNumSentiments, true)).values();
  trace.prediction = static_cast<Sentiment>(argmax(trace.probabilities));
  trace.gold = example.sentiment;
  return trace;
}

}  // namespace

AttentionTrace extract_trace(Network& net, const Vocab& vocab, const SourceExample& example) {
  AttentionTrace t = trace_impl(net, vocab, example);
  t.aspect = example.aspect;
  return t;
}

AttentionTrace extract_trace(Network& net, const Vocab& vocab, const TargetExample& example) {
  validate(example);
  AttentionTrace t = trace_impl(net, vocab, example);
  t.aspect = example.aspect();
  t.span = TermSpan{example.span_start, example.span_len};
  return t;
}

std::string trace_to_json(const AttentionTrace& trace) {
  nlohmann::ordered_json j;
  j["kind"] = to_string(trace.kind);
  j["tokens"] = trace.tokens;
  j["aspect"] = trace.aspect;
  if (trace.span) {
    j["span_start"] = trace.span->start;
    j["span_len"] = trace.span->length;
  }
  j["alpha"] = trace.alpha;
  if (trace.beta) j["beta"] = *trace.beta;
  j["gamma"] = trace.gamma;
  j["p"] = trace.p;
  j["alignment"] = trace.alignment;
  j["prediction"] = to_string(trace.prediction);
  j["gold"] = to_string(trace.gold);
  j["probabilities"] = trace.probabilities;
  return j.dump();
}

}  // namespace mgan
