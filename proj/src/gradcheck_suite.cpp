#include "mgan/gradcheck_suite.hpp"

#include <cmath>
#include <limits>

#include "mgan/attention.hpp"
#include "mgan/encoder.hpp"
#include "mgan/io.hpp"
#include "mgan/losses.hpp"

namespace mgan {

namespace {

Hyperparams toy_hyperparams() {
  Hyperparams hp;
  hp.d_w = 8;
  hp.d_h = 6;
  hp.d_u = 5;
  hp.fc = 10;
  hp.source_batch = 2;
  hp.target_batch = 2;
  return hp;
}

Tokens random_tokens(Rng& rng, std::size_t n, std::size_t vocab_words) {
  Tokens out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("w" + std::to_string(rng.below(vocab_words)));
  return out;
}

void rescale_params(ParameterSet& params, Rng& rng, double scale) {
  params.for_each([&](Parameter& p) {
    p.value = init_uniform(p.value.shape(), rng, scale);
    if (p.name == "embedding") {
      for (std::size_t c = 0; c < p.value.cols(); ++c) p.value.at(0, c) = 0.0;
    }
  });
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

double clearance(const Tensor& s, std::span<const Sentiment> sl, const Tensor& t, std::span<const Sentiment> tl,
                 double margin) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < sl.size(); ++k) {
    for (std::size_t l = 0; l < tl.size(); ++l) {
      if (sl[k] == tl[l]) continue;
      double d = 0.0;
      for (std::size_t c = 0; c < s.cols(); ++c) d += (s.at(k, c) - t.at(l, c)) * (s.at(k, c) - t.at(l, c));
      best = std::min(best, std::abs(margin - d));
    }
  }
  return best;
}

ToyFixture try_fixture(std::uint64_t seed, double init_scale, bool literal_eq9) {
  Rng rng(seed);
  ToyFixture fx;
  fx.hp = toy_hyperparams();
  fx.hp.literal_eq9 = literal_eq9;
  constexpr std::size_t kWords = 12;
  fx.source.categories = {"c0", "c1", "c2"};
  // Distinct lengths so that the batch carries padding.
  const std::size_t source_lengths[] = {7, 4};
  const std::size_t target_lengths[] = {5, 7};
  for (std::size_t n : source_lengths) {
    SourceExample ex;
    ex.context = random_tokens(rng, n, kWords);
    ex.aspect = random_tokens(rng, 1 + rng.below(3), kWords);
    ex.category = rng.below(3);
    ex.sentiment = static_cast<Sentiment>(rng.below(3));
    fx.source.examples.push_back(ex);
  }
  for (std::size_t n : target_lengths) {
    TargetExample ex;
    ex.context = random_tokens(rng, n, kWords);
    ex.span_len = 1 + rng.below(2);
    ex.span_start = rng.below(n - ex.span_len + 1);
    ex.sentiment = static_cast<Sentiment>(rng.below(3));
    fx.target.examples.push_back(ex);
  }
  // Guarantee a different-label pair exists so the hinge branch is exercised.
  if (fx.target.examples[0].sentiment == fx.source.examples[0].sentiment) {
    fx.target.examples[0].sentiment =
        static_cast<Sentiment>((static_cast<int>(fx.source.examples[0].sentiment) + 1) % 3);
  }
  std::vector<std::string> words{"<pad>", "<unk>"};
  for (std::size_t i = 0; i < kWords; ++i) words.push_back("w" + std::to_string(i));
  fx.vocab = Vocab::from_tokens(words);
  const auto order = iota(2);
  fx.source_batch = make_batch(std::span<const SourceExample>(fx.source.examples), order, fx.vocab);
  fx.target_batch = make_batch(std::span<const TargetExample>(fx.target.examples), order, fx.vocab);
  fx.source_net = Network(NetworkKind::source, fx.vocab.size(), 3, fx.hp, rng);
  fx.target_net = Network(NetworkKind::target, fx.vocab.size(), 0, fx.hp, rng);
  rescale_params(fx.source_net.params(), rng, init_scale);
  rescale_params(fx.target_net.params(), rng, init_scale);

  Tape tape(false);
  const Tensor s = forward_batch(tape, fx.source_net, fx.source_batch, {.trainable = false}).reps.value();
  const Tensor t = forward_batch(tape, fx.target_net, fx.target_batch, {.trainable = false}).reps.value();
  fx.hinge_clearance = clearance(s, fx.source_batch.sentiment, t, fx.target_batch.sentiment, fx.hp.margin);
  return fx;
}

GradCheckCase check(std::string name, ParameterSet& params, const ScalarObjective& f,
                    const GradCheckSuiteOptions& o) {
  return {std::move(name), grad_check(params, f, o.epsilon, o.tolerance)};
}

Var constant_reps(Tape& tape, Network& net, const Batch& batch) {
  Tape frozen(false);
  return tape.constant(forward_batch(frozen, net, batch, {.trainable = false}).reps.value());
}

}  // namespace

ToyFixture make_toy_fixture(std::uint64_t seed, double init_scale, double min_clearance, bool literal_eq9) {
  for (std::uint64_t attempt = 0; attempt < 1000; ++attempt) {
    ToyFixture fx = try_fixture(fnv1a64("toy-fixture", seed + attempt), init_scale, literal_eq9);
    if (fx.hinge_clearance >= min_clearance) return fx;
  }
  throw DomainError("no toy fixture with sufficient hinge clearance");
}

Var toy_source_loss(Tape& tape, ToyFixture& fx) {
  const LossWeights w = fx.hp.loss_weights();
  BatchOutputs s = forward_batch(tape, fx.source_net, fx.source_batch);
  Var t_reps = constant_reps(tape, fx.target_net, fx.target_batch);
  Var cfa = cfa_loss(s.reps, fx.source_batch.sentiment, t_reps, fx.target_batch.sentiment, w.margin);
  return source_loss({s.sentiment_loss, s.aux_loss, cfa, l2_reg(tape, fx.source_net.params())}, w);
}

Var toy_target_loss(Tape& tape, ToyFixture& fx) {
  const LossWeights w = fx.hp.loss_weights();
  Var s_reps = constant_reps(tape, fx.source_net, fx.source_batch);
  BatchOutputs t = forward_batch(tape, fx.target_net, fx.target_batch);
  Var cfa = cfa_loss(s_reps, fx.source_batch.sentiment, t.reps, fx.target_batch.sentiment, w.margin);
  return target_loss({t.sentiment_loss, {}, cfa, l2_reg(tape, fx.target_net.params())}, w);
}

std::vector<GradCheckCase> run_module_gradchecks(const GradCheckSuiteOptions& o) {
  std::vector<GradCheckCase> cases;
  Rng rng(fnv1a64("module-gradchecks", o.seed));
  auto uniform = [&](Shape s) { return init_uniform(s, rng, 1.0); };

  {
    ParameterSet ps;
    ps.add("a", uniform({3, 4}));
    ps.add("b", uniform({4, 2}));
    ps.add("r", uniform({2}));
    ps.add("x", uniform({3}));
    const Tensor R = uniform({3, 2});
    const Tensor Rv = uniform({4});
    cases.push_back(check("matmul/transpose/add_rowwise/matvec", ps, [&](Tape& t) {
      Var a = t.param(ps.get("a"));
      Var m = tanh_op(add_rowwise(matmul(a, t.param(ps.get("b"))), t.param(ps.get("r"))));
      Var v = sigmoid_op(matvec(transpose(a), t.param(ps.get("x"))));
      return add(sum(mul_constant(m, R)), sum(mul_constant(v, Rv)));
    }, o));
  }
  {
    ParameterSet ps;
    ps.add("u", uniform({5}));
    ps.add("v", uniform({5}));
    ps.add("m", uniform({3, 4}));
    ps.add("s", uniform({1}));
    const Tensor R = uniform({3, 6});
    const Tensor Rv = uniform({8});
    cases.push_back(check("elementwise/concat/slice/reshape", ps, [&](Tape& t) {
      Var u = t.param(ps.get("u"));
      Var v = t.param(ps.get("v"));
      Var e = sub(elementwise_mul(u, v), scale(add_constant(u, 0.3), 0.7));
      Var c = concat({slice(e, 1, 3), v});
      Var m = t.param(ps.get("m"));
      Var wide = concat_cols(m, slice_cols(repeat_rows(slice(u, 0, 2), 3), 0, 2));
      Var flat = reshape(slice_cols(wide, 0, 4), {12});
      Var mixed = add_scalar_var(slice(flat, 2, 8), t.param(ps.get("s")));
      return add_n({sum(mul_constant(wide, R)), sum(mul_constant(c, Rv)), sum_squares(mixed), mean(tanh_op(e))});
    }, o));
  }
  {
    ParameterSet ps;
    ps.add("a", uniform({4}));
    ps.add("b", uniform({3}));
    ps.add("h", uniform({4, 5}));
    ps.add("z", uniform({4}));
    const Mask rows{true, true, true, false};
    const Mask cols{true, false, true};
    const Mask mask{true, true, false, true};
    cases.push_back(check("outer_sum/masked_softmax/masked_mean/weighted_sum", ps, [&](Tape& t) {
      Var m = tanh_op(outer_sum(t.param(ps.get("a")), t.param(ps.get("b"))));
      Var alpha = masked_mean_rows(masked_softmax_rows(m, cols), rows);
      Var g = masked_softmax(t.param(ps.get("z")), mask);
      Var h = t.param(ps.get("h"));
      Var pooled = weighted_sum_rows(g, h);
      return add(sum(mul_constant(alpha, Tensor::vector({0.3, -1.2, 0.8}))),
                 sum(mul_constant(pooled, Tensor::vector({1.0, -0.5, 0.25, 2.0, -1.5}))));
    }, o));
  }
  {
    ParameterSet ps;
    ps.add("table", uniform({6, 3}));
    ps.add("row", uniform({3}));
    const std::vector<int> ids{4, 1, 4, 0};
    const Tensor R = uniform({4, 3});
    cases.push_back(check("gather_rows/stack_rows", ps, [&](Tape& t) {
      Var g = gather_rows(t.param(ps.get("table")), ids);
      Var r = t.param(ps.get("row"));
      Var stacked = stack_rows({r, scale(r, -2.0)});
      return add(sum(mul_constant(g, R)), sum_squares(tanh_op(stacked)));
    }, o));
  }
  {
    ParameterSet ps;
    ps.add("u", Tensor::vector({0.3, -0.2, 0.5}));
    ps.add("v", Tensor::vector({0.1, 0.4, -0.3}));
    ps.add("z", uniform({3}));
    cases.push_back(check("sq_euclidean/hinge/cross_entropy", ps, [&](Tape& t) {
      Var u = t.param(ps.get("u"));
      Var v = t.param(ps.get("v"));
      // ‖u−v‖² = 0.69 here, so the hinge is active and far from its kink.
      return add_n({contrastive_omega(u, v, true, 1.0), contrastive_omega(u, v, false, 1.0),
                    cross_entropy(t.param(ps.get("z")), 2)});
    }, o));
  }
  {
    ParameterSet ps;
    ps.add("s", uniform({3, 4}));
    ps.add("t", uniform({2, 4}));
    const std::vector<Sentiment> sl{Sentiment::positive, Sentiment::negative, Sentiment::neutral};
    const std::vector<Sentiment> tl{Sentiment::positive, Sentiment::neutral};
    // Margin chosen far from every pairwise distance of this draw.
    double margin = 0.0;
    {
      const Tensor& s = ps.get("s").value;
      const Tensor& t = ps.get("t").value;
      double lo = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < 3; ++k) {
        for (std::size_t l = 0; l < 2; ++l) {
          double d = 0.0;
          for (std::size_t c = 0; c < 4; ++c) d += (s.at(k, c) - t.at(l, c)) * (s.at(k, c) - t.at(l, c));
          lo = std::min(lo, d);
        }
      }
      margin = lo + 0.5;
    }
    cases.push_back(check("cfa_loss", ps, [&, margin](Tape& t) {
      return cfa_loss(t.param(ps.get("s")), sl, t.param(ps.get("t")), tl, margin);
    }, o));
  }
  {
    ParameterSet ps;
    ps.add("z", uniform({6}));
    const Mask mask{true, true, true, true, true, false};
    const Tensor R = uniform({6});
    cases.push_back(check("location_relevance", ps, [&](Tape& t) {
      Var beta = masked_softmax(t.param(ps.get("z")), mask);
      return sum(mul_constant(location_relevance(beta, 5), R));
    }, o));
  }
  {
    ParameterSet ps;
    ps.add("x", uniform({5, 3}));
    ps.add("w_x", uniform({16, 3}));
    ps.add("w_h", uniform({16, 4}));
    ps.add("b", uniform({16}));
    const Mask mask{true, true, true, true, false};
    const Tensor R = uniform({5, 4});
    cases.push_back(check("lstm", ps, [&](Tape& t) {
      LstmWeights w{t.param(ps.get("w_x")), t.param(ps.get("w_h")), t.param(ps.get("b"))};
      Var x = t.param(ps.get("x"));
      return add(sum(mul_constant(lstm(x, w, mask, false), R)), sum(mul_constant(lstm(x, w, mask, true), R)));
    }, o));
  }
  {
    ParameterSet ps;
    Rng init(fnv1a64("encoder", o.seed));
    add_encoder_params(ps, 7, 4, 3, init);
    rescale_params(ps, init, 0.5);
    const std::vector<int> ids{2, 5, 3, 6, 0, 0};
    const Mask mask{true, true, true, true, false, false};
    const Tensor R = uniform({6, 6});
    cases.push_back(check("encoder", ps, [&](Tape& t) {
      EncoderWeights w = bind_encoder(t, ps, true);
      return sum(mul_constant(bilstm(embed(w.embedding, ids, mask), w, mask), R));
    }, o));
  }
  {
    ParameterSet ps;
    Rng init(fnv1a64("attention", o.seed));
    const std::size_t d_h = 3, d_e = 4, d_u = 5, n = 6, m = 3;
    add_c2a_params(ps, d_h, d_e, init);
    add_c2f_params(ps, d_h, d_e, d_u, 3, init);
    add_pas_params(ps, d_h, d_e, d_u, init);
    ps.add("h", init_uniform({n, 2 * d_h}, init));
    ps.add("aspect", init_uniform({m, d_e}, init));
    rescale_params(ps, init, 0.5);
    const Mask ctx{true, true, true, true, true, false};
    const Mask asp{true, true, false};
    const Tensor Rv = uniform({2 * d_h});
    const Tensor Ra = uniform({3});
    const Tensor p_target = [&] {
      Tensor p({n}, 0.0);
      Tensor t = position_relevance_target(5, 1, 2);
      for (std::size_t i = 0; i < 5; ++i) p[i] = t[i];
      return p;
    }();
    cases.push_back(check("attention", ps, [&](Tape& t) {
      Var h = t.param(ps.get("h"));
      C2AOutput a = c2a(h, t.param(ps.get("aspect")), ctx, asp, bind_c2a(t, ps, true));
      C2FOutput f = c2f(h, a.h_a, ctx, bind_c2f(t, ps, true));
      PaSWeights pw = bind_pas(t, ps, true);
      PaSOutput src = pas(h, f.r_a, location_relevance(f.beta, 5), ctx, pw);
      PaSOutput tgt = pas(h, a.h_a, t.constant(p_target), ctx, pw);
      return add_n({sum(mul_constant(src.v_o, Rv)), sum(mul_constant(tgt.v_o, Rv)),
                    sum(mul_constant(f.aux_logits, Ra))});
    }, o));
  }
  {
    ParameterSet ps;
    Rng init(fnv1a64("classifier", o.seed));
    add_classifier_params(ps, 6, 5, init);
    ps.add("v_o", init_uniform({6}, init));
    rescale_params(ps, init, 0.5);
    cases.push_back(check("classifier", ps, [&](Tape& t) {
      return cross_entropy(sentiment_logits(t.param(ps.get("v_o")), bind_classifier(t, ps, true)), 1);
    }, o));
  }
  return cases;
}

std::vector<GradCheckCase> run_end_to_end_gradchecks(std::uint64_t seed, const GradCheckSuiteOptions& o,
                                                     bool literal_eq9) {
  ToyFixture fx = make_toy_fixture(seed, 0.5, 1e-2, literal_eq9);
  const std::string suffix = literal_eq9 ? "" : " (half-open band)";
  std::vector<GradCheckCase> cases;
  cases.push_back(check("source_loss" + suffix, fx.source_net.params(),
                        [&](Tape& t) { return toy_source_loss(t, fx); }, o));
  cases.push_back(check("target_loss" + suffix, fx.target_net.params(),
                        [&](Tape& t) { return toy_target_loss(t, fx); }, o));
  return cases;
}

std::vector<GradCheckCase> run_gradcheck_suite(const GradCheckSuiteOptions& o) {
  std::vector<GradCheckCase> cases = run_module_gradchecks(o);
  for (auto& c : run_end_to_end_gradchecks(o.seed, o)) cases.push_back(std::move(c));
  if (o.full) {
    for (auto& c : run_end_to_end_gradchecks(o.seed, o, false)) cases.push_back(std::move(c));
    for (std::uint64_t s = 1; s <= 3; ++s) {
      for (auto& c : run_end_to_end_gradchecks(o.seed + 1000 * s, o)) {
        c.name += " seed+" + std::to_string(1000 * s);
        cases.push_back(std::move(c));
      }
    }
  }
  return cases;
}

}  // namespace mgan
