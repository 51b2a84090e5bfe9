#include <doctest.h>

#include <cmath>
#include <limits>

#include "mgan/gradcheck_suite.hpp"
#include "mgan/numerics.hpp"
#include "test_support.hpp"

using namespace mgan;
using namespace mgan::testing;

namespace {

// Reference xoshiro256** with splitmix64 seeding, written from the published
// algorithm descriptions.
struct ReferenceXoshiro {
  std::uint64_t s[4];

  static std::uint64_t splitmix(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  explicit ReferenceXoshiro(std::uint64_t seed) {
    for (auto& v : s) v = splitmix(seed);
  }
  std::uint64_t next() {
    const std::uint64_t out = rotl(s[1] * 5, 7) * 9;
    const std::uint64_t t = s[1] << 17;
    s[2] ^= s[0];
    s[3] ^= s[1];
    s[1] ^= s[2];
    s[0] ^= s[3];
    s[2] ^= t;
    s[3] = rotl(s[3], 45);
    return out;
  }
};

double scalar_of(Var v) { return v.value().item(); }

}  // namespace

TEST_CASE("matmul hand-worked products and shape errors") {
  Tape tape;
  Var x = tape.constant(Tensor::matrix({{1, 2, 3}, {4, 5, 6}}));
  Var eye = tape.constant(Tensor::matrix({{1, 0}, {0, 1}}));
  CHECK(matmul(eye, x).value() == x.value());

  Var a = tape.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  Var ones = tape.constant(Tensor::matrix({{1}, {1}}));
  CHECK(matmul(a, ones).value() == Tensor::matrix({{3}, {7}}));

  Var b = tape.constant(Tensor({2, 3}));
  try {
    matmul(b, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("matmul agrees with a naive triple loop") {
  Rng rng(11);
  for (int c = 0; c < 50; ++c) {
    const std::size_t n = 1 + rng.below(5), k = 1 + rng.below(5), m = 1 + rng.below(5);
    Tensor a = random_tensor({n, k}, rng), b = random_tensor({k, m}, rng);
    Tape tape;
    const Tensor got = matmul(tape.constant(a), tape.constant(b)).value();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        double ref = 0.0;
        for (std::size_t t = 0; t < k; ++t) ref += a.at(i, t) * b.at(t, j);
        CHECK(got.at(i, j) == doctest::Approx(ref).epsilon(1e-14));
      }
    }
  }
}

TEST_CASE("masked_softmax fixtures") {
  Tape tape;
  auto sm = [&](Tensor z, Mask m) { return masked_softmax(tape.constant(std::move(z)), m).value(); };

  const Tensor uniform = sm(Tensor::vector({0, 0, 0}), {true, true, true});
  for (double v : uniform.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  const Tensor halves = sm(Tensor::vector({std::log(2.0), 0.0, 0.0}), {true, true, true});
  CHECK(halves[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(halves[1] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(halves[2] == doctest::Approx(0.25).epsilon(1e-15));

  const Tensor single = sm(Tensor::vector({5, 100}), {true, false});
  CHECK(single[0] == 1.0);
  CHECK(single[1] == 0.0);

  CHECK_THROWS_AS(sm(Tensor::vector({1, 2}), {false, false}), DomainError);
}

TEST_CASE("masked_softmax is overflow safe") {
  Tape tape;
  const Tensor p = masked_softmax(tape.constant(Tensor::vector({1000.0, 999.0, -1000.0})), {true, true, true}).value();
  CHECK(p.all_finite());
  CHECK(p[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-14));
}

TEST_CASE("property: masked_softmax normalizes and zeroes masked entries") {
  Rng rng(2024);
  for (int c = 0; c < kPropertyCases; ++c) {
    const std::size_t n = 1 + rng.below(12);
    Tensor z = random_tensor({n}, rng, -30.0, 30.0);
    const Mask mask = random_mask(n, rng);
    Tape tape;
    const Tensor p = masked_softmax(tape.constant(z), mask).value();
    const auto ref = reference_softmax(z.data(), mask);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!mask[i]) {
        REQUIRE(p[i] == 0.0);
      } else {
        REQUIRE(p[i] >= 0.0);
        REQUIRE(std::abs(p[i] - static_cast<double>(ref[i])) <= 1e-14);
      }
      total += p[i];
    }
    REQUIRE(std::abs(total - 1.0) <= 1e-12);
  }
}

TEST_CASE("elementwise and reduction fixtures") {
  Tape tape;
  CHECK(scalar_of(sum(sigmoid_op(tape.constant(Tensor::vector({0.0}))))) == 0.5);
  CHECK(sq_euclidean(tape.constant(Tensor::vector({1, 0})), tape.constant(Tensor::vector({0, 0}))).value().item() ==
        1.0);
  Var a = tape.constant(Tensor::vector({1, 2, 3}));
  Var b = tape.constant(Tensor::vector({4, 5}));
  CHECK(concat({a, b}).value().size() == 5);
  CHECK(mean(a).value().item() == 2.0);
  CHECK(tanh_op(tape.constant(Tensor::vector({0.5}))).value()[0] == std::tanh(0.5));
  CHECK_THROWS_AS(add(a, b), DimensionError);
  CHECK_THROWS_AS(elementwise_mul(a, b), DimensionError);
  CHECK_THROWS_AS(sq_euclidean(a, b), DimensionError);
}

TEST_CASE("hinge subgradient at the kink is zero") {
  Tape tape;
  Parameter p{"x", Tensor::vector({0.0, 1.0, -1.0}), Tensor({3})};
  Var x = tape.param(p);
  tape.backward(sum(hinge(x)));
  CHECK(p.grad[0] == 0.0);
  CHECK(p.grad[1] == 1.0);
  CHECK(p.grad[2] == 0.0);
}

TEST_CASE("a node used twice accumulates both gradient paths") {
  Tape tape;
  Parameter p{"x", Tensor::vector({3.0}), Tensor({1})};
  Var x = tape.param(p);
  tape.backward(sum(elementwise_mul(x, x)));
  CHECK(p.grad[0] == 6.0);
}

TEST_CASE("backward leaves every parameter gradient with its parameter's shape") {
  Rng rng(5);
  ParameterSet ps;
  ps.add("w", random_tensor({3, 4}, rng));
  ps.add("v", random_tensor({4}, rng));
  ps.add("unused", random_tensor({2, 2}, rng));
  ps.zero_grad();
  Tape tape;
  tape.backward(sum(tanh_op(matvec(tape.param(ps.get("w")), tape.param(ps.get("v"))))));
  ps.for_each([](const Parameter& p) { CHECK(p.grad.shape() == p.value.shape()); });
}

TEST_CASE("a no-grad tape records nothing for backward") {
  Parameter p{"x", Tensor::vector({1.0, 2.0}), Tensor({2})};
  Tape tape(false);
  Var y = sum_squares(tape.param(p));
  CHECK(y.value().item() == 5.0);
  CHECK_FALSE(tape.requires_grad(y));
}

TEST_CASE("init_uniform range and determinism") {
  Rng a(123), b(123), c(124);
  const Tensor ta = init_uniform({50, 40}, a);
  const Tensor tb = init_uniform({50, 40}, b);
  const Tensor tc = init_uniform({50, 40}, c);
  for (double v : ta.data()) {
    CHECK(v >= -0.01);
    CHECK(v <= 0.01);
  }
  CHECK(ta == tb);
  CHECK_FALSE(ta == tc);
}

TEST_CASE("Rng matches a reference xoshiro256** stream") {
  std::uint64_t state = 0;
  CHECK(ReferenceXoshiro::splitmix(state) == 0xe220a8397b1dcdafULL);
  for (std::uint64_t seed : {0ULL, 1ULL, 42ULL, 0xdeadbeefULL}) {
    Rng rng(seed);
    ReferenceXoshiro ref(seed);
    for (int i = 0; i < 1000; ++i) REQUIRE(rng.next_u64() == ref.next());
  }
}

TEST_CASE("Rng helpers stay in range") {
  Rng rng(9);
  for (int i = 0; i < kPropertyCases; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    REQUIRE(rng.below(7) < 7);
  }
  CHECK_THROWS_AS(rng.below(0), DomainError);
}

TEST_CASE("grad_check on x squared") {
  ParameterSet ps;
  ps.add("x", Tensor::vector({3.0}));
  const auto report = grad_check(
      ps, [&](Tape& t) { return sum_squares(t.param(ps.get("x"))); }, 1e-4, 1e-5);
  CHECK(ps.get("x").grad[0] == 6.0);
  CHECK(report.max_rel_error * 6.0 < 1e-7);
  CHECK(report.passed());
}

TEST_CASE("grad_check on a constant function") {
  ParameterSet ps;
  ps.add("x", Tensor::vector({1.0, -2.0}));
  const auto report = grad_check(
      ps, [&](Tape& t) { return t.constant(Tensor::scalar(4.0)); }, 1e-4, 1e-5);
  CHECK(report.max_rel_error == 0.0);
  CHECK(ps.get("x").grad[0] == 0.0);
  CHECK(report.passed());
}

TEST_CASE("grad_check errors") {
  ParameterSet ps;
  ps.add("x", Tensor::vector({1.0}));
  auto log_of = [&](Tape& t) {
    Var x = t.param(ps.get("x"));
    const double v = std::log(x.value()[0] - 1.0);
    return t.record(Tensor::scalar(v), {x}, [](Tape&, const Tensor&, const Tensor&) {});
  };
  CHECK_THROWS_AS(grad_check(ps, log_of, 1e-4, 1e-5), EvaluationError);
  auto square = [&](Tape& t) { return sum_squares(t.param(ps.get("x"))); };
  CHECK_THROWS_AS(grad_check(ps, square, 1e-2, 1e-5), DomainError);
  CHECK_THROWS_AS(grad_check(ps, square, 1e-7, 1e-5), DomainError);
}

TEST_CASE("grad_check catches a 0.1% backward error on a small gradient") {
  // f = 1 + 1e-7·x² has gradient ~2e-7, well below the scale of f, which is
  // where the round-off allowance is largest relative to the gradient.
  ParameterSet ps;
  ps.add("x", Tensor::vector({0.8, -1.3}));
  auto objective = [&](double backward_factor) {
    return [&ps, backward_factor](Tape& t) {
      Var x = t.param(ps.get("x"));
      Tensor v({1}, {1.0 + 1e-7 * (x.value()[0] * x.value()[0] + x.value()[1] * x.value()[1])});
      return t.record(std::move(v), {x}, [x, backward_factor](Tape& tp, const Tensor& g, const Tensor&) {
        Tensor& gx = tp.grad(x);
        for (std::size_t i = 0; i < 2; ++i) gx[i] += g[0] * 2e-7 * x.value()[i] * backward_factor;
      });
    };
  };
  CHECK(grad_check(ps, objective(1.0), 1e-4, 1e-5).passed());
  const auto broken = grad_check(ps, objective(1.001), 1e-4, 1e-5);
  CHECK_FALSE(broken.passed());
  CHECK(broken.max_resolved_rel_error > 5e-4);
  CHECK(broken.worst_param == "x");
}

TEST_CASE("relative error uses the 1e-8 floor") {
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(2.0, 1.0) == 0.5);
  CHECK(relative_error(0.0, 1e-10) == doctest::Approx(1e-2));
}

TEST_CASE("property: primitive backward rules match finite differences") {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL, 5ULL}) {
    GradCheckSuiteOptions o;
    o.seed = seed;
    for (const auto& c : run_module_gradchecks(o)) {
      INFO(c.name << " seed " << seed << " worst " << c.report.worst_param << "[" << c.report.worst_index << "]");
      CHECK(c.report.passed());
      CHECK(c.report.entries_checked > 0);
    }
  }
}

TEST_CASE("forward passes are bit-identical across runs") {
  Rng rng(77);
  const Tensor w = random_tensor({5, 4}, rng), x = random_tensor({4}, rng);
  auto run = [&] {
    Tape t(false);
    return masked_softmax(tanh_op(matvec(t.constant(w), t.constant(x))), Mask(5, true)).value();
  };
  CHECK(run() == run());
}

TEST_CASE("ParameterSet copies are deep and keep names") {
  ParameterSet a;
  a.add("w", Tensor::vector({1, 2}));
  ParameterSet b = a;
  b.get("w").value[0] = 9.0;
  CHECK(a.get("w").value[0] == 1.0);
  CHECK(b.contains("w"));
  CHECK(a.scalar_count() == 2);
}
