#pragma once

// Randomized property suites shared by the unit tests and the acceptance
// binary. Each suite returns the number of cases checked and the first
// violation it found. Oracles here are written independently of the library
// code they check.

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "mgan/attention.hpp"
#include "mgan/corpus.hpp"
#include "mgan/eval.hpp"
#include "mgan/losses.hpp"
#include "mgan/model.hpp"
#include "mgan/numerics.hpp"

namespace mgan::testing {

struct SuiteResult {
  std::size_t cases = 0;
  std::size_t failures = 0;
  double worst = 0.0;  // largest observed deviation, where meaningful
  std::string first_failure;

  bool passed() const { return failures == 0 && cases > 0; }
  void fail(const std::string& what) {
    if (failures++ == 0) first_failure = what;
  }
  void observe(double deviation, double tolerance, const std::string& what) {
    worst = std::max(worst, deviation);
    if (!(deviation <= tolerance)) fail(what + " deviation " + std::to_string(deviation));
  }
};

// p_i as printed, with 1-based i and I0 = m0 + 1.
inline double relevance_oracle(std::size_t n, std::size_t m0, std::size_t m, std::size_t i) {
  const double I0 = static_cast<double>(m0 + 1), len = static_cast<double>(n), ii = static_cast<double>(i),
               mm = static_cast<double>(m);
  if (ii < I0) return 1.0 - (I0 - ii) / len;
  if (ii <= I0 + mm) return 0.0;
  return 1.0 - (ii - (I0 + mm)) / len;
}

inline SuiteResult relevance_sweep(std::size_t max_n = 12) {
  SuiteResult r;
  for (std::size_t n = 1; n <= max_n; ++n) {
    for (std::size_t m = 1; m <= n; ++m) {
      for (std::size_t m0 = 0; m0 + m <= n; ++m0) {
        ++r.cases;
        const Tensor p = position_relevance_target(n, m0, m, true);
        for (std::size_t i = 1; i <= n; ++i) {
          if (p[i - 1] != relevance_oracle(n, m0, m, i)) {
            std::ostringstream msg;
            msg << "n=" << n << " m0=" << m0 << " m=" << m << " i=" << i;
            r.fail(msg.str());
          }
        }
      }
    }
  }
  return r;
}

inline std::vector<double> random_simplex(std::size_t n, Rng& rng) {
  std::vector<double> b(n);
  double total = 0.0;
  for (auto& v : b) total += v = -std::log(1.0 - rng.uniform());
  for (auto& v : b) v /= total;
  return b;
}

inline SuiteResult location_relevance_oracle(Rng& rng, int cases) {
  SuiteResult r;
  for (int c = 0; c < cases; ++c) {
    const std::size_t n = 1 + rng.below(40);
    std::vector<double> beta = random_simplex(n, rng);
    if (rng.bernoulli(0.1)) {
      std::fill(beta.begin(), beta.end(), 0.0);
      beta[rng.below(n)] = 1.0;
    }
    const Tensor p = position_relevance_source(beta);
    ++r.cases;
    for (std::size_t i = 0; i < n; ++i) {
      long double ref = 0.0L;
      for (std::size_t j = 0; j < n; ++j) {
        const long double dist = i > j ? i - j : j - i;
        ref += (1.0L - dist / static_cast<long double>(n)) * beta[j];
      }
      r.observe(std::abs(static_cast<double>(p[i] - ref)), 1e-12, "n=" + std::to_string(n));
    }
  }
  return r;
}

struct ContrastiveResults {
  SuiteResult symmetry, nonnegativity, same_zero, different_margin, duplication;
};

inline ContrastiveResults contrastive_suite(Rng& rng, int cases, double margin = 1.0) {
  ContrastiveResults out;
  for (int c = 0; c < cases; ++c) {
    const std::size_t d = 1 + rng.below(8);
    std::vector<double> u(d), v(d);
    const double spread = rng.uniform(0.01, 2.0);
    for (auto& x : u) x = rng.uniform(-spread, spread);
    for (auto& x : v) x = rng.uniform(-spread, spread);
    for (bool same : {true, false}) {
      const double a = contrastive_omega(u, v, same, margin), b = contrastive_omega(v, u, same, margin);
      ++out.symmetry.cases;
      if (a != b) out.symmetry.fail("omega(u,v) != omega(v,u)");
      ++out.nonnegativity.cases;
      if (!(a >= 0.0)) out.nonnegativity.fail("negative omega " + std::to_string(a));
    }
    ++out.same_zero.cases;
    if (contrastive_omega(u, u, true, margin) != 0.0) out.same_zero.fail("omega(u,u,same) != 0");
    ++out.different_margin.cases;
    if (contrastive_omega(u, u, false, margin) != margin) out.different_margin.fail("omega(u,u,diff) != D");

    const std::size_t bs = 1 + rng.below(5), bt = 1 + rng.below(5);
    Tensor s({bs, d}), t({bt, d});
    for (auto& x : s.data()) x = rng.uniform(-spread, spread);
    for (auto& x : t.data()) x = rng.uniform(-spread, spread);
    std::vector<Sentiment> ls(bs), lt(bt);
    for (auto& l : ls) l = static_cast<Sentiment>(rng.below(3));
    for (auto& l : lt) l = static_cast<Sentiment>(rng.below(3));
    auto twice = [](const Tensor& x) {
      Tensor y({2 * x.rows(), x.cols()});
      for (std::size_t k = 0; k < 2; ++k) {
        std::copy(x.data().begin(), x.data().end(), y.data().begin() + static_cast<long>(k * x.size()));
      }
      return y;
    };
    std::vector<Sentiment> ls2 = ls, lt2 = lt;
    ls2.insert(ls2.end(), ls.begin(), ls.end());
    lt2.insert(lt2.end(), lt.begin(), lt.end());
    const double base = cfa_loss_value(s, ls, t, lt, margin);
    const double dup = cfa_loss_value(twice(s), ls2, twice(t), lt2, margin);
    ++out.duplication.cases;
    out.duplication.observe(std::abs(base - dup), 1e-12, "duplicated batch");
  }
  return out;
}

// --- attention normalization over random small models ---

struct RandomModel {
  Hyperparams hp;
  Vocab vocab;
  Network net;
};

inline Vocab toy_vocab(std::size_t words) {
  std::vector<std::string> tokens{"<pad>", "<unk>"};
  for (std::size_t i = 0; i < words; ++i) tokens.push_back("w" + std::to_string(i));
  return Vocab::from_tokens(std::move(tokens));
}

inline RandomModel random_model(NetworkKind kind, Rng& rng) {
  RandomModel m;
  m.hp.d_w = 3 + rng.below(5);
  m.hp.d_h = 2 + rng.below(4);
  m.hp.d_u = 2 + rng.below(4);
  m.hp.fc = 2 + rng.below(5);
  m.hp.literal_eq9 = rng.bernoulli(0.5);
  m.vocab = toy_vocab(12);
  Rng init(rng.next_u64());
  m.net = Network(kind, m.vocab.size(), kind == NetworkKind::source ? 2 + rng.below(3) : 0, m.hp, init);
  const double scale = rng.uniform(0.05, 2.0);
  m.net.params().for_each([&](Parameter& p) {
    for (auto& v : p.value.data()) v = rng.uniform(-scale, scale);
  });
  return m;
}

inline Tokens random_tokens(std::size_t n, Rng& rng) {
  Tokens t(n);
  for (auto& w : t) w = "w" + std::to_string(rng.below(12));
  return t;
}

inline SourceExample random_source_example(std::size_t categories, Rng& rng, std::size_t max_n = 9) {
  SourceExample ex;
  ex.context = random_tokens(1 + rng.below(max_n), rng);
  ex.aspect = random_tokens(1 + rng.below(3), rng);
  ex.category = rng.below(categories);
  ex.sentiment = static_cast<Sentiment>(rng.below(3));
  return ex;
}

inline TargetExample random_target_example(Rng& rng, std::size_t max_n = 9) {
  TargetExample ex;
  ex.context = random_tokens(1 + rng.below(max_n), rng);
  ex.span_len = 1 + rng.below(std::min<std::size_t>(3, ex.context.size()));
  ex.span_start = rng.below(ex.context.size() - ex.span_len + 1);
  ex.sentiment = static_cast<Sentiment>(rng.below(3));
  return ex;
}

inline double masked_total(const Tensor& t, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += t[i];
  return s;
}

struct NormalizationResults {
  SuiteResult alpha, beta, gamma, padding;
};

inline void compare_prefix(SuiteResult& r, const Tensor& alone, const Tensor& padded, std::size_t n, const char* what) {
  double dev = 0.0;
  for (std::size_t i = 0; i < n; ++i) dev = std::max(dev, std::abs(alone[i] - padded[i]));
  r.observe(dev, 1e-10, what);
  for (std::size_t i = n; i < padded.size(); ++i) {
    if (padded[i] != 0.0) r.fail(std::string(what) + " nonzero on padding");
  }
}

template <typename Example>
void check_normalization(NormalizationResults& out, RandomModel& m, const std::vector<Example>& batch_examples) {
  std::vector<std::size_t> order(batch_examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::span<const Example> span(batch_examples);
  const Batch batch = make_batch(span, order, m.vocab);
  Tape tape(false);
  const BatchOutputs outs = forward_batch(tape, m.net, batch, {.trainable = false});
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const ExampleOutputs& e = outs.examples[k];
    const std::size_t n = batch.lengths[k];
    std::size_t m_len = 0;
    for (bool b : batch.aspect_mask[k]) m_len += b;
    out.alpha.observe(std::abs(masked_total(e.alpha.value(), m_len) - 1.0), 1e-12, "alpha sum");
    ++out.alpha.cases;
    out.gamma.observe(std::abs(masked_total(e.gamma.value(), n) - 1.0), 1e-12, "gamma sum");
    ++out.gamma.cases;
    if (e.beta.valid()) {
      out.beta.observe(std::abs(masked_total(e.beta.value(), n) - 1.0), 1e-12, "beta sum");
      ++out.beta.cases;
    }

    // The same example alone has no padding at all.
    const std::vector<std::size_t> self{k};
    const Batch solo = make_batch(span, self, m.vocab);
    Tape solo_tape(false);
    const ExampleOutputs s = forward_example(solo_tape, m.net, solo, 0, {.trainable = false});
    ++out.padding.cases;
    compare_prefix(out.padding, s.gamma.value(), e.gamma.value(), n, "gamma");
    compare_prefix(out.padding, s.alpha.value(), e.alpha.value(), m_len, "alpha");
    compare_prefix(out.padding, s.p.value(), e.p.value(), n, "p");
    if (e.beta.valid()) compare_prefix(out.padding, s.beta.value(), e.beta.value(), n, "beta");
    double dev = 0.0;
    for (std::size_t c = 0; c < kNumSentiments; ++c) {
      dev = std::max(dev, std::abs(s.logits.value()[c] - e.logits.value()[c]));
    }
    out.padding.observe(dev, 1e-10, "logits");
  }
}

inline NormalizationResults attention_normalization(Rng& rng, int draws) {
  NormalizationResults out;
  for (int d = 0; d < draws; ++d) {
    const bool source = d % 2 == 0;
    RandomModel m = random_model(source ? NetworkKind::source : NetworkKind::target, rng);
    const std::size_t b = 2 + rng.below(3);
    if (source) {
      std::vector<SourceExample> ex;
      for (std::size_t i = 0; i < b; ++i) ex.push_back(random_source_example(m.net.categories(), rng));
      check_normalization(out, m, ex);
    } else {
      std::vector<TargetExample> ex;
      for (std::size_t i = 0; i < b; ++i) ex.push_back(random_target_example(rng));
      check_normalization(out, m, ex);
    }
  }
  return out;
}

// --- macro-F1 oracle ---

// Per-class counts taken from explicit (gold, predicted) pairs rather than
// from the confusion matrix.
inline double brute_force_macro_f1(const std::vector<std::pair<int, int>>& pairs) {
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    long tp = 0, fp = 0, fn = 0;
    for (auto [g, p] : pairs) {
      if (g == c && p == c) ++tp;
      if (g != c && p == c) ++fp;
      if (g == c && p != c) ++fn;
    }
    const double prec = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    const double rec = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    total += prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
  }
  return total / 3.0;
}

inline SuiteResult macro_f1_oracle(Rng& rng, int cases) {
  SuiteResult r;
  for (int c = 0; c < cases; ++c) {
    const std::size_t n = 1 + rng.below(1000);
    // Skewed class draws so that empty rows and columns occur.
    std::array<double, 3> wg{rng.uniform(), rng.uniform(), rng.uniform()}, wp{rng.uniform(), rng.uniform(), rng.uniform()};
    if (rng.bernoulli(0.2)) wg[rng.below(3)] = 0.0;
    if (rng.bernoulli(0.2)) wp[rng.below(3)] = 0.0;
    auto draw = [&](const std::array<double, 3>& w) {
      const double t = w[0] + w[1] + w[2];
      if (t == 0.0) return static_cast<int>(rng.below(3));
      double u = rng.uniform() * t;
      for (int k = 0; k < 3; ++k) {
        if (u < w[k]) return k;
        u -= w[k];
      }
      return 2;
    };
    std::vector<std::pair<int, int>> pairs(n);
    std::vector<Sentiment> gold(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      pairs[i] = {draw(wg), draw(wp)};
      gold[i] = static_cast<Sentiment>(pairs[i].first);
      pred[i] = static_cast<Sentiment>(pairs[i].second);
    }
    ++r.cases;
    r.observe(std::abs(macro_f1(make_confusion(gold, pred)) - brute_force_macro_f1(pairs)), 1e-12,
              "case " + std::to_string(c));
  }
  return r;
}

inline double seven_ninths_fixture() {
  const std::vector<Sentiment> gold{Sentiment::positive, Sentiment::positive, Sentiment::negative, Sentiment::neutral};
  const std::vector<Sentiment> pred{Sentiment::positive, Sentiment::negative, Sentiment::negative, Sentiment::neutral};
  return macro_f1(make_confusion(gold, pred));
}

}  // namespace mgan::testing
