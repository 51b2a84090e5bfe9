#pragma once

// Training objectives: sentiment and auxiliary cross-entropies, contrastive
// feature alignment between the two networks' aspect-specific
// representations, ℓ2 regularization and the composite per-network losses.

#include <cstddef>
#include <span>

#include "mgan/corpus.hpp"
#include "mgan/numerics.hpp"

namespace mgan {

struct LossWeights {
  double lambda = 0.1;  // contrastive alignment weight
  double rho = 1e-6;    // ℓ2 weight
  double margin = 1.0;  // D, separation margin for different-label pairs
};

struct ClassifierWeights {
  Var fc_w;   // [fc × 2d_h]
  Var fc_b;   // [fc]
  Var out_w;  // [3 × fc]
  Var out_b;  // [3]
};

void add_classifier_params(ParameterSet& params, std::size_t input_dim, std::size_t fc, Rng& rng);
ClassifierWeights bind_classifier(Tape& tape, ParameterSet& params, bool trainable);

// logits = W_out·tanh(W_fc·v_o + b_fc) + b_out
Var sentiment_logits(Var v_o, const ClassifierWeights& w);

// −log softmax(logits)[label], via log-sum-exp.
Var cross_entropy(Var logits, std::size_t label);
double cross_entropy_value(std::span<const double> logits, std::size_t label);

// ‖u−v‖² for same-label pairs, max(0, D − ‖u−v‖²) otherwise.
double contrastive_omega(std::span<const double> u, std::span<const double> v, bool same_label, double margin);
Var contrastive_omega(Var u, Var v, bool same_label, double margin);

// Mean of contrastive_omega over every (source row, target row) pair.
// source_reps: [B_s × d], target_reps: [B_t × d].
Var cfa_loss(Var source_reps, std::span<const Sentiment> source_labels, Var target_reps,
             std::span<const Sentiment> target_labels, double margin);
double cfa_loss_value(const Tensor& source_reps, std::span<const Sentiment> source_labels, const Tensor& target_reps,
                      std::span<const Sentiment> target_labels, double margin);

// Σ of squared entries over every parameter except the embedding table.
Var l2_reg(Tape& tape, ParameterSet& params, bool trainable = true);
double l2_reg_value(const ParameterSet& params);

struct LossTerms {
  Var sentiment;  // batch mean
  Var aux;        // batch mean; source network only
  Var cfa;
  Var reg;
};

// L_src = L_sen + L_aux + λ·L_cfa + ρ·L_reg. Unset terms count as zero.
Var source_loss(const LossTerms& terms, const LossWeights& weights);
// L_tar = L_sen + λ·L_cfa + ρ·L_reg.
Var target_loss(const LossTerms& terms, const LossWeights& weights);

double source_loss(double sentiment, double aux, double cfa, double reg, const LossWeights& weights);
double target_loss(double sentiment, double cfa, double reg, const LossWeights& weights);

}  // namespace mgan
