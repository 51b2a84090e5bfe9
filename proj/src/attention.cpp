#include "mgan/attention.hpp"

#include <cmath>
#include <cstdlib>

namespace mgan {

namespace {

Var bind(Tape& tape, Parameter& p, bool trainable) { return trainable ? tape.param(p) : tape.frozen(p); }

// Splits W [r × (p + q)] applied to [x; y] into W[:, :p]·x-style pieces.
struct SplitWeight {
  Var left;
  Var right;
};

SplitWeight split_cols(Var w, std::size_t left_cols) {
  const std::size_t total = w.value().cols();
  return {slice_cols(w, 0, left_cols), slice_cols(w, left_cols, total - left_cols)};
}

// u·tanh(H W_hᵀ + (W_x x + b)) for every row of H.
Var additive_scores(Var h, Var x, Var w, Var b, Var u) {
  const std::size_t two_dh = h.value().cols();
  auto [w_h, w_x] = split_cols(w, two_dh);
  Var shared = add(matvec(w_x, x), b);
  Var hidden = tanh_op(add_rowwise(matmul(h, transpose(w_h)), shared));
  return matvec(hidden, u);
}

}  // namespace

void add_c2a_params(ParameterSet& params, std::size_t d_h, std::size_t d_w, Rng& rng) {
  params.add("c2a.w_a", init_uniform({1, 2 * d_h + d_w}, rng));
  params.add("c2a.b_a", init_uniform({1}, rng));
}

void add_c2f_params(ParameterSet& params, std::size_t d_h, std::size_t d_e, std::size_t d_u, std::size_t categories,
                    Rng& rng) {
  params.add("c2f.w_f", init_uniform({d_u, 2 * d_h + d_e}, rng));
  params.add("c2f.b_f", init_uniform({d_u}, rng));
  params.add("c2f.u_f", init_uniform({d_u}, rng));
  params.add("c2f.aux_w", init_uniform({categories, 2 * d_h}, rng));
  params.add("c2f.aux_b", init_uniform({categories}, rng));
  params.add("c2f.gate_w", init_uniform({d_e, 2 * d_h + d_e}, rng));
  params.add("c2f.gate_b", init_uniform({d_e}, rng));
  params.add("c2f.proj_w", init_uniform({d_e, 2 * d_h}, rng));
}

void add_pas_params(ParameterSet& params, std::size_t d_h, std::size_t d_e, std::size_t d_u, Rng& rng) {
  params.add("pas.w_o", init_uniform({d_u, 2 * d_h + d_e}, rng));
  params.add("pas.b_o", init_uniform({d_u}, rng));
  params.add("pas.u_o", init_uniform({d_u}, rng));
}

C2AWeights bind_c2a(Tape& tape, ParameterSet& params, bool trainable) {
  return {bind(tape, params.get("c2a.w_a"), trainable), bind(tape, params.get("c2a.b_a"), trainable)};
}

C2FWeights bind_c2f(Tape& tape, ParameterSet& params, bool trainable) {
  auto b = [&](const char* name) { return bind(tape, params.get(name), trainable); };
  return {b("c2f.w_f"),   b("c2f.b_f"),    b("c2f.u_f"),    b("c2f.aux_w"),
          b("c2f.aux_b"), b("c2f.gate_w"), b("c2f.gate_b"), b("c2f.proj_w")};
}

PaSWeights bind_pas(Tape& tape, ParameterSet& params, bool trainable) {
  return {bind(tape, params.get("pas.w_o"), trainable), bind(tape, params.get("pas.b_o"), trainable),
          bind(tape, params.get("pas.u_o"), trainable)};
}

C2AOutput c2a(Var h, Var aspect_emb, const Mask& context_mask, const Mask& aspect_mask, const C2AWeights& w) {
  const std::size_t two_dh = h.value().cols();
  const std::size_t d_w = aspect_emb.value().cols();
  if (w.w_a.value().size() != two_dh + d_w) {
    throw DimensionError("c2a: w_a " + shape_str(w.w_a.shape()) + " does not fit [h; e] of width " +
                         std::to_string(two_dh + d_w));
  }
  Var w_vec = reshape(w.w_a, {two_dh + d_w});
  Var context_score = matvec(h, slice(w_vec, 0, two_dh));
  Var aspect_score = matvec(aspect_emb, slice(w_vec, two_dh, d_w));
  Var alignment = tanh_op(add_scalar_var(outer_sum(context_score, aspect_score), w.b_a));
  Var per_row = masked_softmax_rows(alignment, aspect_mask);
  Var alpha = masked_mean_rows(per_row, context_mask);
  Var h_a = weighted_sum_rows(alpha, aspect_emb);
  return {alpha, h_a, alignment};
}

C2FOutput c2f(Var h, Var h_a, const Mask& context_mask, const C2FWeights& w) {
  Var z = additive_scores(h, h_a, w.w_f, w.b_f, w.u_f);
  Var beta = masked_softmax(z, context_mask);
  Var v_a = weighted_sum_rows(beta, h);
  Var aux_logits = add(matvec(w.aux_w, v_a), w.aux_b);
  Var gate = sigmoid_op(add(matvec(w.gate_w, concat({v_a, h_a})), w.gate_b));
  Var projected = matvec(w.proj_w, v_a);
  Var r_a = add(elementwise_mul(gate, h_a), elementwise_mul(add_constant(scale(gate, -1.0), 1.0), projected));
  return {beta, v_a, r_a, aux_logits, gate};
}

PaSOutput pas(Var h, Var r_a, Var p, const Mask& context_mask, const PaSWeights& w) {
  Var z = additive_scores(h, r_a, w.w_o, w.b_o, w.u_o);
  Var gamma = masked_softmax(elementwise_mul(p, z), context_mask);
  Var v_o = weighted_sum_rows(gamma, h);
  return {gamma, v_o, z};
}

Tensor position_relevance_target(std::size_t n, std::size_t m0, std::size_t m, bool literal) {
  if (n == 0 || m == 0 || m0 + m > n) {
    throw ValidationError("position relevance: span start " + std::to_string(m0) + " length " + std::to_string(m) +
                          " does not fit sentence length " + std::to_string(n));
  }
  const double len = static_cast<double>(n);
  const long first = static_cast<long>(m0) + 1;  // 1-based
  const long band_end = literal ? first + static_cast<long>(m) : first + static_cast<long>(m) - 1;
  Tensor p({n});
  for (std::size_t k = 0; k < n; ++k) {
    const long i = static_cast<long>(k) + 1;
    if (i < first) {
      p[k] = 1.0 - static_cast<double>(first - i) / len;
    } else if (i <= band_end) {
      p[k] = 0.0;
    } else {
      p[k] = 1.0 - static_cast<double>(i - band_end) / len;
    }
  }
  return p;
}

namespace {

// out_i = Σ_j (1 − |i−j|/n) x_j for i < n, using prefix sums of x_j and j·x_j.
void apply_location(const double* x, double* out, std::size_t n) {
  double total = 0.0;
  double weighted_total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    total += x[j];
    weighted_total += static_cast<double>(j) * x[j];
  }
  double left = 0.0;
  double left_weighted = 0.0;
  const double len = static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double di = static_cast<double>(i);
    left += x[i];
    left_weighted += di * x[i];
    const double right = total - left;
    const double right_weighted = weighted_total - left_weighted;
    const double distance = di * left - left_weighted + right_weighted - di * right;
    out[i] = total - distance / len;
  }
}

}  // namespace

Tensor position_relevance_source(std::span<const double> beta) {
  if (beta.empty()) throw ValidationError("position relevance: empty attention vector");
  double total = 0.0;
  for (double b : beta) {
    if (!(b >= 0.0)) throw ValidationError("position relevance: attention weights must be nonnegative");
    total += b;
  }
  if (std::abs(total - 1.0) > 1e-8) {
    throw ValidationError("position relevance: attention weights sum to " + std::to_string(total) + ", not 1");
  }
  Tensor p({beta.size()});
  apply_location(beta.data(), p.data().data(), beta.size());
  return p;
}

Var location_relevance(Var beta, std::size_t n) {
  const Tensor& b = beta.value();
  if (b.rank() != 1 || n == 0 || n > b.size()) {
    throw DimensionError("location_relevance: length " + std::to_string(n) + " for " + shape_str(b.shape()));
  }
  Tensor p({b.size()});
  apply_location(b.data().data(), p.data().data(), n);
  // L is symmetric, so the backward pass applies the same operator.
  return beta.tape().record(std::move(p), {beta}, [beta, n](Tape& t, const Tensor& g, const Tensor&) {
    Tensor* gb = t.grad_if(beta);
    if (!gb) return;
    std::vector<double> tmp(n);
    apply_location(g.data().data(), tmp.data(), n);
    for (std::size_t j = 0; j < n; ++j) (*gb)[j] += tmp[j];
  });
}

}  // namespace mgan
