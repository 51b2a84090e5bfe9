#pragma once

// The three attention hops.
//
//   Context2Aspect   M(i,j) = tanh(w_a·[h_i; e_j] + b_a), row softmax over the
//                    aspect words, averaged over context rows -> α, h_a = Σ α_j e_j
//   Coarse2Fine      z_i = u_f·tanh(W_f[h_i; h_a] + b_f), β = softmax(z),
//                    v_a = Σ β_i h_i, auxiliary category logits from v_a,
//                    gate F = σ(W_g[v_a; h_a] + b_g), r_a = F⊙h_a + (1−F)⊙W'v_a
//   Position-aware   z_i = u_o·tanh(W_o[h_i; r_a] + b_o),
//   sentiment        γ_i ∝ exp(p_i z_i), v_o = Σ γ_i h_i
//
// All softmaxes exclude masked (padding) positions.

#include <cstddef>

#include "mgan/numerics.hpp"

namespace mgan {

struct C2AWeights {
  Var w_a;  // [1 × (2d_h + d_w)]
  Var b_a;  // [1]
};

struct C2AOutput {
  Var alpha;      // [m]
  Var h_a;        // [d_w]
  Var alignment;  // M, [n × m]
};

struct C2FWeights {
  Var w_f;     // [d_u × (2d_h + d_e)]
  Var b_f;     // [d_u]
  Var u_f;     // [d_u]
  Var aux_w;   // [|C| × 2d_h]
  Var aux_b;   // [|C|]
  Var gate_w;  // [d_e × (2d_h + d_e)], input [v_a; h_a]
  Var gate_b;  // [d_e]
  Var proj_w;  // W', [d_e × 2d_h]
};

struct C2FOutput {
  Var beta;        // [n]
  Var v_a;         // [2d_h]
  Var r_a;         // [d_e]
  Var aux_logits;  // [|C|]
  Var gate;        // F, [d_e]
};

struct PaSWeights {
  Var w_o;  // [d_u × (2d_h + d_e)]
  Var b_o;  // [d_u]
  Var u_o;  // [d_u]
};

struct PaSOutput {
  Var gamma;   // [n]
  Var v_o;     // [2d_h]
  Var scores;  // z^o, [n]
};

void add_c2a_params(ParameterSet& params, std::size_t d_h, std::size_t d_w, Rng& rng);
void add_c2f_params(ParameterSet& params, std::size_t d_h, std::size_t d_e, std::size_t d_u, std::size_t categories,
                    Rng& rng);
void add_pas_params(ParameterSet& params, std::size_t d_h, std::size_t d_e, std::size_t d_u, Rng& rng);

C2AWeights bind_c2a(Tape& tape, ParameterSet& params, bool trainable);
C2FWeights bind_c2f(Tape& tape, ParameterSet& params, bool trainable);
PaSWeights bind_pas(Tape& tape, ParameterSet& params, bool trainable);

// h: [n × 2d_h] contextual states, aspect_emb: [m × d_w].
C2AOutput c2a(Var h, Var aspect_emb, const Mask& context_mask, const Mask& aspect_mask, const C2AWeights& w);

C2FOutput c2f(Var h, Var h_a, const Mask& context_mask, const C2FWeights& w);

// p: [n] position relevance in [0, 1]; zero on padding.
PaSOutput pas(Var h, Var r_a, Var p, const Mask& context_mask, const PaSWeights& w);

// Target-side proximity to the aspect term for a sentence of true length n
// with the term at 0-based [m0, m0 + m). With I0 = m0 + 1 and 1-based i:
//   p_i = 1 − (I0 − i)/n        for i < I0
//   p_i = 0                     for I0 ≤ i ≤ I0 + m
//   p_i = 1 − (i − (I0 + m))/n  for i > I0 + m
// The zero band covers m + 1 positions. With literal == false the band is
// the term itself (I0 ≤ i < I0 + m) and distances on the right are measured
// from the last term token.
Tensor position_relevance_target(std::size_t n, std::size_t m0, std::size_t m, bool literal = true);

// Source-side relevance p = L·β with L(i,i') = 1 − |i − i'|/n, evaluated in
// O(n) without forming L. beta must be a probability vector (within 1e-8).
Tensor position_relevance_source(std::span<const double> beta);

// Differentiable form over the first n entries of beta; entries past n are
// padding and map to 0.
Var location_relevance(Var beta, std::size_t n);

}  // namespace mgan
