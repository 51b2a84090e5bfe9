#include <doctest.h>

#include <cmath>

#include "criteria.hpp"
#include "mgan/attention.hpp"
#include "test_support.hpp"

using namespace mgan;
using namespace mgan::testing;

namespace {

struct Layers {
  ParameterSet params;
  std::size_t d_h, d_e, d_u;
};

Layers make_layers(std::size_t d_h, std::size_t d_e, std::size_t d_u, std::size_t categories, std::uint64_t seed) {
  Layers l{{}, d_h, d_e, d_u};
  Rng rng(seed);
  add_c2a_params(l.params, d_h, d_e, rng);
  add_c2f_params(l.params, d_h, d_e, d_u, categories, rng);
  add_pas_params(l.params, d_h, d_e, d_u, rng);
  return l;
}

void zero_all(ParameterSet& params, std::string_view prefix) {
  params.for_each([&](Parameter& p) {
    if (p.name.starts_with(prefix)) p.value.fill(0.0);
  });
}

}  // namespace

TEST_CASE("target position relevance worked example") {
  const Tensor p = position_relevance_target(10, 4, 2);
  CHECK(p[2] == doctest::Approx(0.8).epsilon(1e-15));
  for (std::size_t i : {5, 6, 7}) CHECK(p[i - 1] == 0.0);
  CHECK(p[9] == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(p[0] == doctest::Approx(0.6).epsilon(1e-15));
}

TEST_CASE("target position relevance matches the closed form on every small case") {
  const SuiteResult r = relevance_sweep(12);
  CHECK(r.cases == 364);
  CHECK_MESSAGE(r.passed(), r.first_failure);
}

TEST_CASE("half-open variant zeroes exactly the term") {
  const Tensor p = position_relevance_target(10, 4, 2, false);
  for (std::size_t i = 0; i < 10; ++i) {
    const bool in_term = i == 4 || i == 5;
    CHECK((p[i] == 0.0) == in_term);
  }
  CHECK(p[6] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(p[3] == doctest::Approx(0.9).epsilon(1e-15));
}

TEST_CASE("target position relevance rejects spans outside the sentence") {
  CHECK_THROWS(position_relevance_target(5, 4, 2));
  CHECK_THROWS(position_relevance_target(5, 0, 0));
}

TEST_CASE("source position relevance examples") {
  const Tensor even = position_relevance_source(std::vector<double>{0.5, 0.5});
  CHECK(even[0] == doctest::Approx(0.75));
  CHECK(even[1] == doctest::Approx(0.75));
  const Tensor onehot = position_relevance_source(std::vector<double>{0.0, 0.0, 1.0, 0.0, 0.0});
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(onehot[i] == doctest::Approx(1.0 - std::abs(static_cast<double>(i) - 2.0) / 5.0).epsilon(1e-15));
  }
}

TEST_CASE("property: source position relevance equals the explicit product") {
  Rng rng(41);
  const SuiteResult r = location_relevance_oracle(rng, kPropertyCases);
  CHECK_MESSAGE(r.passed(), r.first_failure);
  CHECK(r.worst <= 1e-12);
}

TEST_CASE("differentiable location relevance agrees and pads with zero") {
  Rng rng(5);
  for (int c = 0; c < 50; ++c) {
    const std::size_t n = 1 + rng.below(8), pad = rng.below(3);
    std::vector<double> b = random_simplex(n, rng);
    const Tensor ref = position_relevance_source(b);
    b.resize(n + pad, 0.0);
    Tape tape(false);
    const Tensor p = location_relevance(tape.constant(Tensor({n + pad}, b)), n).value();
    for (std::size_t i = 0; i < n; ++i) CHECK(p[i] == doctest::Approx(ref[i]).epsilon(1e-14));
    for (std::size_t i = n; i < n + pad; ++i) CHECK(p[i] == 0.0);
  }
}

TEST_CASE("position-aware attention worked example") {
  // d_h = 1, d_e = 1, d_u = 1: score_i = u·tanh(h_i[0]) picks the first state coordinate.
  Layers l = make_layers(1, 1, 1, 2, 3);
  l.params.get("pas.w_o").value = Tensor({1, 3}, {1.0, 0.0, 0.0});
  l.params.get("pas.b_o").value.fill(0.0);
  l.params.get("pas.u_o").value.fill(4.0);
  Tape tape(false);
  const PaSWeights w = bind_pas(tape, l.params, false);
  Var h = tape.constant(Tensor({2, 2}, {std::atanh(0.75), 0.3, std::atanh(0.5), -0.2}));
  Var r_a = tape.constant(Tensor({1}, {0.7}));
  const PaSOutput out = pas(h, r_a, tape.constant(Tensor::vector({0.0, 1.0})), Mask(2, true), w);
  CHECK(out.scores.value()[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(out.scores.value()[1] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(out.gamma.value()[0] == doctest::Approx(0.1192029).epsilon(1e-6));
  CHECK(out.gamma.value()[1] == doctest::Approx(0.8807971).epsilon(1e-6));
  const Tensor& hv = h.value();
  const Tensor& g = out.gamma.value();
  CHECK(out.v_o.value()[1] == doctest::Approx(g[0] * hv.at(0, 1) + g[1] * hv.at(1, 1)));

  const PaSOutput flat = pas(h, r_a, tape.constant(Tensor::vector({0.0, 0.0})), Mask(2, true), w);
  CHECK(flat.gamma.value()[0] == doctest::Approx(0.5));
  CHECK(flat.gamma.value()[1] == doctest::Approx(0.5));
}

TEST_CASE("context-to-aspect with zero weights averages the aspect words") {
  Layers l = make_layers(2, 3, 2, 2, 7);
  zero_all(l.params, "c2a.");
  Rng rng(8);
  Tape tape(false);
  const C2AWeights w = bind_c2a(tape, l.params, false);
  Var h = tape.constant(random_tensor({4, 4}, rng));
  const Tensor emb = random_tensor({3, 3}, rng);
  const C2AOutput out = c2a(h, tape.constant(emb), Mask(4, true), Mask(3, true), w);
  for (std::size_t j = 0; j < 3; ++j) CHECK(out.alpha.value()[j] == doctest::Approx(1.0 / 3.0));
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(out.h_a.value()[c] == doctest::Approx((emb.at(0, c) + emb.at(1, c) + emb.at(2, c)) / 3.0));
  }
}

TEST_CASE("context-to-aspect with one aspect word puts all weight on it") {
  Layers l = make_layers(2, 3, 2, 2, 9);
  Rng rng(10);
  Tape tape(false);
  const C2AWeights w = bind_c2a(tape, l.params, false);
  const Tensor emb = random_tensor({1, 3}, rng);
  const C2AOutput out = c2a(tape.constant(random_tensor({5, 4}, rng)), tape.constant(emb), Mask(5, true),
                            Mask(1, true), w);
  CHECK(out.alpha.value()[0] == 1.0);
  for (std::size_t c = 0; c < 3; ++c) CHECK(out.h_a.value()[c] == doctest::Approx(emb.at(0, c)).epsilon(1e-14));
}

TEST_CASE("context-to-aspect ignores padded aspect slots") {
  Layers l = make_layers(2, 3, 2, 2, 11);
  Rng rng(12);
  Tape tape(false);
  const C2AWeights w = bind_c2a(tape, l.params, false);
  Var h = tape.constant(random_tensor({3, 4}, rng));
  Tensor emb = random_tensor({3, 3}, rng);
  const C2AOutput out = c2a(h, tape.constant(emb), Mask(3, true), Mask{true, true, false}, w);
  CHECK(out.alpha.value()[2] == 0.0);
  CHECK(out.alpha.value()[0] + out.alpha.value()[1] == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("coarse-to-fine with zero parameters is uniform with an even gate") {
  Layers l = make_layers(2, 3, 2, 4, 13);
  zero_all(l.params, "c2f.");
  Rng rng(14);
  Tape tape(false);
  const C2FWeights w = bind_c2f(tape, l.params, false);
  const Tensor h = random_tensor({5, 4}, rng);
  const C2FOutput out = c2f(tape.constant(h), tape.constant(random_tensor({3}, rng)), Mask(5, true), w);
  for (std::size_t i = 0; i < 5; ++i) CHECK(out.beta.value()[i] == doctest::Approx(0.2));
  for (double g : out.gate.value().data()) CHECK(g == 0.5);
  for (double z : out.aux_logits.value().data()) CHECK(z == 0.0);
}

TEST_CASE("coarse-to-fine on a one-word sentence attends to it") {
  Layers l = make_layers(2, 3, 2, 4, 15);
  Rng rng(16);
  Tape tape(false);
  const C2FWeights w = bind_c2f(tape, l.params, false);
  const Tensor h = random_tensor({1, 4}, rng);
  const C2FOutput out = c2f(tape.constant(h), tape.constant(random_tensor({3}, rng)), Mask(1, true), w);
  CHECK(out.beta.value()[0] == 1.0);
  for (std::size_t c = 0; c < 4; ++c) CHECK(out.v_a.value()[c] == doctest::Approx(h.at(0, c)).epsilon(1e-14));
}

TEST_CASE("fusion gate blends the category and the projected context") {
  Layers l = make_layers(1, 2, 2, 2, 17);
  Rng rng(18);
  Tape tape(false);
  const C2FWeights w = bind_c2f(tape, l.params, false);
  const Tensor h_a = random_tensor({2}, rng);
  const C2FOutput out = c2f(tape.constant(random_tensor({3, 2}, rng)), tape.constant(h_a), Mask(3, true), w);
  const Tensor& proj = l.params.get("c2f.proj_w").value;
  const Tensor& v = out.v_a.value();
  for (std::size_t k = 0; k < 2; ++k) {
    const double projected = proj.at(k, 0) * v[0] + proj.at(k, 1) * v[1];
    const double f = out.gate.value()[k];
    CHECK(out.r_a.value()[k] == doctest::Approx(f * h_a[k] + (1.0 - f) * projected).epsilon(1e-14));
  }
}

TEST_CASE("property: attention weights normalize and ignore padding") {
  Rng rng(2024);
  const NormalizationResults r = attention_normalization(rng, kPropertyCases);
  CHECK_MESSAGE(r.alpha.passed(), r.alpha.first_failure);
  CHECK_MESSAGE(r.beta.passed(), r.beta.first_failure);
  CHECK_MESSAGE(r.gamma.passed(), r.gamma.first_failure);
  CHECK_MESSAGE(r.padding.passed(), r.padding.first_failure);
  CHECK(r.padding.cases >= static_cast<std::size_t>(2 * kPropertyCases));
}
