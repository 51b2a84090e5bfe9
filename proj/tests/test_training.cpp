#include <doctest.h>

#include <cmath>
#include <limits>

#include "mgan/gradcheck_suite.hpp"
#include "mgan/training.hpp"
#include "test_support.hpp"

using namespace mgan;
using namespace mgan::testing;

namespace {

Hyperparams small_hp() {
  Hyperparams hp;
  hp.d_w = 8;
  hp.d_h = 6;
  hp.d_u = 5;
  hp.fc = 10;
  hp.learning_rate = 1e-2;
  hp.source_batch = 16;
  hp.target_batch = 16;
  return hp;
}

SynthCorpora small_corpora(std::uint64_t seed, std::size_t source = 120, std::size_t target = 48) {
  SynthConfig sc = default_synth_config();
  sc.source_size = source;
  sc.target_size = target;
  return gen_synthetic(sc, seed);
}

double max_abs_grad(const ParameterSet& params) {
  double m = 0.0;
  params.for_each([&](const Parameter& p) {
    for (double g : p.grad.data()) m = std::max(m, std::abs(g));
  });
  return m;
}

}  // namespace

TEST_CASE("global norm and clipping") {
  ParameterSet params;
  params.add("a", Tensor::vector({0.0, 0.0}));
  params.add("b", Tensor::vector({0.0}));
  params.get("a").grad = Tensor::vector({30.0, 40.0});
  params.get("b").grad = Tensor::vector({0.0});
  CHECK(global_grad_norm(params) == 50.0);
  CHECK(clip_gradients(params, 100.0) == 50.0);
  CHECK(params.get("a").grad[0] == 30.0);
  CHECK(clip_gradients(params, 10.0) == 50.0);
  CHECK(params.get("a").grad[0] == doctest::Approx(6.0).epsilon(1e-15));
  CHECK(params.get("a").grad[1] == doctest::Approx(8.0).epsilon(1e-15));
  CHECK(global_grad_norm(params) == doctest::Approx(10.0).epsilon(1e-15));
}

TEST_CASE("non-finite gradients name the parameter") {
  ParameterSet params;
  params.add("fine", Tensor::vector({0.0}));
  params.add("broken", Tensor::vector({0.0, 0.0}));
  params.get("broken").grad[1] = std::numeric_limits<double>::quiet_NaN();
  try {
    clip_gradients(params, 40.0);
    FAIL("expected NonFiniteGradient");
  } catch (const NonFiniteGradient& e) {
    CHECK(e.param() == "broken");
  }
}

TEST_CASE("Adam follows the bias-corrected update") {
  ParameterSet params;
  params.add("w", Tensor::vector({1.0, -2.0}));
  Adam adam(params, 0.1);
  const std::vector<std::vector<double>> grads{{0.5, -1.0}, {0.2, 3.0}, {-0.4, 0.0}};
  std::vector<double> w{1.0, -2.0}, m(2, 0.0), v(2, 0.0);
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    params.get("w").grad = Tensor::vector(grads[t - 1]);
    adam.step(params);
    for (std::size_t k = 0; k < 2; ++k) {
      const double g = grads[t - 1][k];
      m[k] = 0.9 * m[k] + 0.1 * g;
      v[k] = 0.999 * v[k] + 0.001 * g * g;
      const double mh = m[k] / (1.0 - std::pow(0.9, static_cast<double>(t)));
      const double vh = v[k] / (1.0 - std::pow(0.999, static_cast<double>(t)));
      w[k] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
      CHECK(params.get("w").value[k] == doctest::Approx(w[k]).epsilon(1e-13));
    }
  }
  CHECK(adam.state().step == 3);
}

TEST_CASE("Adam's first step moves each weight by about the learning rate") {
  ParameterSet params;
  params.add("w", Tensor::vector({0.0, 0.0, 0.0}));
  params.get("w").grad = Tensor::vector({1e-3, -5.0, 7.0});
  Adam adam(params, 1e-4);
  adam.step(params);
  CHECK(params.get("w").value[0] == doctest::Approx(-1e-4).epsilon(1e-4));
  CHECK(params.get("w").value[1] == doctest::Approx(1e-4).epsilon(1e-6));
  CHECK(params.get("w").value[2] == doctest::Approx(-1e-4).epsilon(1e-6));
}

TEST_CASE("batch cursor covers every example once per epoch") {
  const SynthCorpora c = small_corpora(3, 40, 10);
  const Vocab vocab = build_vocab(c.source, c.target);
  Rng rng(1);
  BatchCursor<SourceExample> cursor(c.source.examples, vocab, 16, rng);
  CHECK(cursor.batches_per_epoch() == 3);
  std::vector<int> seen(40, 0);
  for (int b = 0; b < 3; ++b) {
    for (std::size_t idx : cursor.next().example_index) ++seen[idx];
  }
  CHECK(cursor.epoch() == 1);
  for (int s : seen) CHECK(s == 1);
  cursor.next();
  CHECK(cursor.epoch() == 2);
  const std::vector<SourceExample> none;
  CHECK_THROWS_AS(BatchCursor<SourceExample>(none, vocab, 4, rng), DomainError);
}

TEST_CASE("init_pair shares every common array and omits the coarse-to-fine block") {
  const SynthCorpora c = small_corpora(4);
  const Vocab vocab = build_vocab(c.source, c.target);
  Rng rng(2);
  Network source(NetworkKind::source, vocab.size(), c.source.categories.size(), small_hp(), rng);
  const NetworkPair pair = init_pair(source);
  CHECK(pair.target.kind() == NetworkKind::target);
  std::size_t shared = 0;
  pair.target.params().for_each([&](const Parameter& p) {
    CHECK(!p.name.starts_with("c2f."));
    CHECK(p.value == source.params().get(p.name).value);
    ++shared;
  });
  CHECK(shared + 8 == source.params().size());
  CHECK_THROWS_AS(init_pair(pair.target), ConfigError);
}

TEST_CASE("isolated steps leave the opposite network untouched") {
  ToyFixture fx = make_toy_fixture(5);
  const ParameterSet target_before = fx.target_net.params();
  Adam opt(fx.source_net.params(), 1e-3);
  const StepStats s = source_step(fx.source_net, fx.target_net, fx.source_batch, fx.target_batch, opt, nullptr, true);
  CHECK(s.loss > 0.0);
  CHECK(s.l_cfa > 0.0);
  CHECK(s.l_aux > 0.0);
  CHECK(max_abs_grad(fx.target_net.params()) == 0.0);
  CHECK(max_abs_grad(fx.source_net.params()) == 0.0);
  for (std::size_t i = 0; i < target_before.size(); ++i) {
    CHECK(fx.target_net.params()[i].value == target_before[i].value);
  }
}

TEST_CASE("without isolation the alignment gradient reaches the opposite network") {
  ToyFixture fx = make_toy_fixture(5);
  Adam opt(fx.source_net.params(), 1e-3);
  source_step(fx.source_net, fx.target_net, fx.source_batch, fx.target_batch, opt, nullptr, false);
  CHECK(max_abs_grad(fx.target_net.params()) > 0.0);
  Adam topt(fx.target_net.params(), 1e-3);
  const StepStats t = target_step(fx.source_net, fx.target_net, fx.source_batch, fx.target_batch, topt, nullptr, false);
  CHECK(t.l_aux == 0.0);
  CHECK(max_abs_grad(fx.target_net.params()) == 0.0);
  CHECK(max_abs_grad(fx.source_net.params()) > 0.0);
}

TEST_CASE("repeated steps on one batch lower the pretraining loss") {
  ToyFixture fx = make_toy_fixture(6, 0.1);
  Adam opt(fx.source_net.params(), 1e-2);
  const double first = pretrain_step(fx.source_net, fx.source_batch, opt, nullptr).loss;
  double last = first;
  for (int i = 0; i < 60; ++i) last = pretrain_step(fx.source_net, fx.source_batch, opt, nullptr).loss;
  CHECK(last < 0.5 * first);
}

TEST_CASE("target-only training fits a small set and is deterministic") {
  const SynthCorpora c = small_corpora(8, 20, 32);
  const Vocab vocab = build_vocab(c.source, c.target);
  TrainConfig cfg;
  cfg.seed = 3;
  cfg.max_epochs = 300;
  cfg.dropout = false;
  cfg.validation_fraction = 0.0;
  cfg.stop_at_train_accuracy = 1.0;
  Rng er(5);
  const Tensor emb = random_embeddings(vocab, 8, er, 0.5);
  const TrainResult a = train_target_only(c.target, vocab, small_hp(), cfg, &emb);
  const TrainResult b = train_target_only(c.target, vocab, small_hp(), cfg, &emb);
  REQUIRE(a.fit_epoch.has_value());
  CHECK(a.epochs_run == *a.fit_epoch);
  CHECK(format_log(a.log) == format_log(b.log));
  CHECK(a.epochs_run == b.epochs_run);
  for (std::size_t i = 0; i < a.network.params().size(); ++i) {
    CHECK(a.network.params()[i].value == b.network.params()[i].value);
  }
}

TEST_CASE("early stopping halts a run whose validation accuracy stalls") {
  const SynthCorpora c = small_corpora(9, 20, 40);
  const Vocab vocab = build_vocab(c.source, c.target);
  Hyperparams hp = small_hp();
  hp.learning_rate = 1e-9;  // nothing moves, so validation never improves
  TrainConfig cfg;
  cfg.max_epochs = 50;
  cfg.patience = 3;
  cfg.validation_fraction = 0.25;
  const TrainResult r = train_target_only(c.target, vocab, hp, cfg);
  CHECK(r.early_stopped);
  CHECK(r.epochs_run == 4);
  REQUIRE(r.best_validation_accuracy.has_value());
}

TEST_CASE("stage-1 and stage-2 runs produce logs and a trained target") {
  const SynthCorpora c = small_corpora(10, 80, 32);
  const Vocab vocab = build_vocab(c.source, c.target);
  TrainConfig cfg;
  cfg.max_epochs = 3;
  std::vector<LogRecord> seen;
  const TrainResult pre = pretrain_source(c.source, vocab, small_hp(), cfg, nullptr,
                                          [&](const LogRecord& r) { seen.push_back(r); });
  CHECK(pre.epochs_run == 3);
  CHECK(seen.size() == pre.log.size());
  CHECK(seen.front().phase == "pretrain");
  const PairResult pair = alternating_train(pre.network, c.target, c.source, vocab, cfg);
  CHECK(pair.epochs_run == 3);
  REQUIRE(!pair.log.empty());
  CHECK(pair.log.back().l_cfa > 0.0);
  CHECK(pair.best_validation_accuracy.has_value());
}

TEST_CASE("training rejects empty corpora") {
  const SynthCorpora c = small_corpora(11, 20, 10);
  const Vocab vocab = build_vocab(c.source, c.target);
  TrainConfig cfg;
  CHECK_THROWS_AS(train_target_only(TargetCorpus{}, vocab, small_hp(), cfg), ConfigError);
  Rng rng(1);
  Network source(NetworkKind::source, vocab.size(), c.source.categories.size(), small_hp(), rng);
  CHECK_THROWS_AS(alternating_train(source, TargetCorpus{}, c.source, vocab, cfg), ConfigError);
}
