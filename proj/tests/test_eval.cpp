#include <doctest.h>

#include <nlohmann/json.hpp>

#include "criteria.hpp"
#include "mgan/eval.hpp"
#include "mgan/io.hpp"
#include "test_support.hpp"

using namespace mgan;
using namespace mgan::testing;

namespace {

struct Bench {
  SynthCorpora corpora;
  Vocab vocab;
  Network source;
  Network target;
};

Bench small_bench(std::uint64_t seed) {
  SynthConfig sc = default_synth_config();
  sc.source_size = 60;
  sc.source_test_size = 300;
  sc.target_size = 40;
  Bench b{gen_synthetic(sc, seed), {}, {}, {}};
  b.vocab = build_vocab(b.corpora.source, b.corpora.target);
  Hyperparams hp;
  hp.d_w = 10;
  hp.d_h = 8;
  hp.d_u = 6;
  hp.fc = 12;
  Rng rng(seed);
  b.source = Network(NetworkKind::source, b.vocab.size(), b.corpora.source.categories.size(), hp, rng);
  b.target = Network(NetworkKind::target, b.vocab.size(), 0, hp, rng);
  return b;
}

}  // namespace

TEST_CASE("macro-F1 hand-worked fixture") {
  CHECK(seven_ninths_fixture() == doctest::Approx(7.0 / 9.0).epsilon(1e-15));
}

TEST_CASE("property: macro-F1 agrees with a brute-force count") {
  Rng rng(808);
  const SuiteResult r = macro_f1_oracle(rng, kPropertyCases);
  CHECK_MESSAGE(r.passed(), r.first_failure);
  CHECK(r.worst <= 1e-12);
}

TEST_CASE("accuracy and the confusion matrix") {
  const std::vector<Sentiment> gold{Sentiment::positive, Sentiment::neutral, Sentiment::negative, Sentiment::negative};
  const std::vector<Sentiment> pred{Sentiment::positive, Sentiment::negative, Sentiment::negative, Sentiment::negative};
  const Confusion c = make_confusion(gold, pred);
  CHECK(c.total() == 4);
  CHECK(c.correct() == 3);
  CHECK(c.at(Sentiment::neutral, Sentiment::negative) == 1);
  CHECK(accuracy(c) == 0.75);
  const Metrics m = metrics(c);
  CHECK(m.count == 4);
  CHECK(format_metrics(m) == "accuracy=0.75 macro_f1=" + format_double(m.macro_f1) + " count=4");
  CHECK(format_metrics(m, "test_").starts_with("test_accuracy=0.75"));
  const std::vector<Sentiment> short_pred{Sentiment::positive};
  CHECK_THROWS_AS(make_confusion(gold, short_pred), DimensionError);
}

TEST_CASE("a class never predicted nor present contributes zero F1") {
  const std::vector<Sentiment> all_pos(5, Sentiment::positive);
  CHECK(macro_f1(make_confusion(all_pos, all_pos)) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("argmax takes the lowest index on ties") {
  CHECK(argmax(std::vector<double>{1.0, 3.0, 3.0}) == 1);
  CHECK(argmax(std::vector<double>{-1.0}) == 0);
  CHECK(argmax(std::vector<double>{0.2, 0.2, 0.2}) == 0);
}

TEST_CASE("localization hit rate counts argmax inside the span") {
  const std::vector<std::vector<double>> betas{{0.1, 0.7, 0.2}, {0.5, 0.2, 0.3}, {0.2, 0.3, 0.5}};
  const std::vector<TermSpan> spans{{1, 1}, {1, 2}, {1, 2}};
  CHECK(localization_hit_rate(betas, spans) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("chance localization matches its Monte-Carlo estimate") {
  const Bench b = small_bench(21);
  const auto& ex = b.corpora.source_test.examples;
  const auto& man = b.corpora.source_test_manifest;
  double exact = 0.0;
  for (std::size_t k = 0; k < ex.size(); ++k) {
    exact += static_cast<double>(man[k].length) / static_cast<double>(ex[k].context.size());
  }
  exact /= static_cast<double>(ex.size());
  CHECK(chance_localization(ex, man) == doctest::Approx(exact).epsilon(1e-14));
  Rng rng(3);
  CHECK(std::abs(chance_localization_mc(ex, man, rng, 200) - exact) < 0.01);
}

TEST_CASE("an untrained network localizes at about chance") {
  Bench b = small_bench(22);
  const auto& ex = b.corpora.source_test.examples;
  const auto& man = b.corpora.source_test_manifest;
  const double hit = c2f_localization(b.source, ex, man, b.vocab);
  CHECK(std::abs(hit - chance_localization(ex, man)) <= 0.1);
}

TEST_CASE("localization validates its inputs") {
  Bench b = small_bench(23);
  const auto& ex = b.corpora.source_test.examples;
  const std::vector<TermSpan> short_manifest(ex.size() - 1);
  CHECK_THROWS_AS(c2f_localization(b.source, ex, short_manifest, b.vocab), ValidationError);
  const std::vector<SourceExample> none;
  CHECK_THROWS_AS(c2f_localization(b.source, none, {}, b.vocab), DomainError);
}

TEST_CASE("coarse-to-fine weights are truncated to the sentence") {
  Bench b = small_bench(24);
  const auto& ex = b.corpora.source_test.examples;
  const auto w = c2f_weights(b.source, ex, b.vocab, 7);
  REQUIRE(w.size() == ex.size());
  for (std::size_t k = 0; k < ex.size(); ++k) {
    CHECK(w[k].size() == ex[k].context.size());
    double s = 0.0;
    for (double v : w[k]) s += v;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("predictions do not depend on the batch size") {
  Bench b = small_bench(25);
  const auto& tgt = b.corpora.target.examples;
  CHECK(predict(b.target, tgt, b.vocab, 1) == predict(b.target, tgt, b.vocab, 64));
  const auto& src = b.corpora.source_test.examples;
  CHECK(predict(b.source, src, b.vocab, 5) == predict(b.source, src, b.vocab, 64));
  const Confusion c = evaluate(b.target, tgt, b.vocab);
  CHECK(c.total() == tgt.size());
}

TEST_CASE("attention traces are normalized and serialize to one JSON line") {
  Bench b = small_bench(26);
  const AttentionTrace s = extract_trace(b.source, b.vocab, b.corpora.source.examples[0]);
  REQUIRE(s.beta.has_value());
  CHECK(s.beta->size() == s.tokens.size());
  const AttentionTrace t = extract_trace(b.target, b.vocab, b.corpora.target.examples[0]);
  CHECK(!t.beta.has_value());
  REQUIRE(t.span.has_value());
  for (const AttentionTrace* tr : {&s, &t}) {
    double g = 0.0, a = 0.0, pr = 0.0;
    for (double v : tr->gamma) g += v;
    for (double v : tr->alpha) a += v;
    for (double v : tr->probabilities) pr += v;
    CHECK(g == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(a == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(pr == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(tr->alignment.size() == tr->tokens.size());
    const std::string line = trace_to_json(*tr);
    CHECK(line.find('\n') == std::string::npos);
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("tokens").size() == tr->tokens.size());
    CHECK(j.at("gamma").size() == tr->gamma.size());
  }
}
