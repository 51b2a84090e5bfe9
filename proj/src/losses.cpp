#include "mgan/losses.hpp"

#include <algorithm>
#include <cmath>

namespace mgan {

namespace {
Var bind(Tape& tape, Parameter& p, bool trainable) { return trainable ? tape.param(p) : tape.frozen(p); }
}  // namespace

void add_classifier_params(ParameterSet& params, std::size_t input_dim, std::size_t fc, Rng& rng) {
  params.add("classifier.fc_w", init_uniform({fc, input_dim}, rng));
  params.add("classifier.fc_b", init_uniform({fc}, rng));
  params.add("classifier.out_w", init_uniform({kNumSentiments, fc}, rng));
  params.add("classifier.out_b", init_uniform({kNumSentiments}, rng));
}

ClassifierWeights bind_classifier(Tape& tape, ParameterSet& params, bool trainable) {
  auto b = [&](const char* name) { return bind(tape, params.get(name), trainable); };
  return {b("classifier.fc_w"), b("classifier.fc_b"), b("classifier.out_w"), b("classifier.out_b")};
}

Var sentiment_logits(Var v_o, const ClassifierWeights& w) {
  Var hidden = tanh_op(add(matvec(w.fc_w, v_o), w.fc_b));
  return add(matvec(w.out_w, hidden), w.out_b);
}

namespace {

double log_sum_exp(std::span<const double> z) {
  const double max = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - max);
  return max + std::log(s);
}

}  // namespace

double cross_entropy_value(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) {
    throw IndexError("cross_entropy: label " + std::to_string(label) + " for " + std::to_string(logits.size()) +
                     " classes");
  }
  return log_sum_exp(logits) - logits[label];
}

Var cross_entropy(Var logits, std::size_t label) {
  const Tensor& z = logits.value();
  if (z.rank() != 1) throw DimensionError("cross_entropy: logits must be a vector, got " + shape_str(z.shape()));
  const double loss = cross_entropy_value(z.data(), label);
  return logits.tape().record(Tensor::scalar(loss), {logits}, [logits, label](Tape& t, const Tensor& g, const Tensor&) {
    Tensor* gz = t.grad_if(logits);
    if (!gz) return;
    const Tensor& z = logits.value();
    const double lse = log_sum_exp(z.data());
    for (std::size_t i = 0; i < z.size(); ++i) {
      (*gz)[i] += g[0] * (std::exp(z[i] - lse) - (i == label ? 1.0 : 0.0));
    }
  });
}

double contrastive_omega(std::span<const double> u, std::span<const double> v, bool same_label, double margin) {
  if (u.size() != v.size()) {
    throw DimensionError("contrastive_omega: dimensions " + std::to_string(u.size()) + " and " +
                         std::to_string(v.size()));
  }
  double d = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) d += (u[i] - v[i]) * (u[i] - v[i]);
  return same_label ? d : std::max(0.0, margin - d);
}

Var contrastive_omega(Var u, Var v, bool same_label, double margin) {
  Var d = sq_euclidean(u, v);
  if (same_label) return d;
  return hinge(add_constant(scale(d, -1.0), margin));
}

namespace {

void check_reps(const Tensor& reps, std::span<const Sentiment> labels, const char* side) {
  if (reps.rank() != 2 || reps.rows() != labels.size()) {
    throw DimensionError(std::string("cfa_loss: ") + side + " representations " + shape_str(reps.shape()) + " for " +
                         std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw DomainError(std::string("cfa_loss: empty ") + side + " batch");
}

}  // namespace

double cfa_loss_value(const Tensor& source_reps, std::span<const Sentiment> source_labels, const Tensor& target_reps,
                      std::span<const Sentiment> target_labels, double margin) {
  check_reps(source_reps, source_labels, "source");
  check_reps(target_reps, target_labels, "target");
  if (source_reps.cols() != target_reps.cols()) {
    throw DimensionError("cfa_loss: representation widths " + shape_str(source_reps.shape()) + " vs " +
                         shape_str(target_reps.shape()));
  }
  const std::size_t d = source_reps.cols();
  double total = 0.0;
  for (std::size_t k = 0; k < source_labels.size(); ++k) {
    for (std::size_t l = 0; l < target_labels.size(); ++l) {
      total += contrastive_omega(source_reps.data().subspan(k * d, d), target_reps.data().subspan(l * d, d),
                                 source_labels[k] == target_labels[l], margin);
    }
  }
  return total / static_cast<double>(source_labels.size() * target_labels.size());
}

Var cfa_loss(Var source_reps, std::span<const Sentiment> source_labels, Var target_reps,
             std::span<const Sentiment> target_labels, double margin) {
  const double value = cfa_loss_value(source_reps.value(), source_labels, target_reps.value(), target_labels, margin);
  std::vector<Sentiment> s_labels(source_labels.begin(), source_labels.end());
  std::vector<Sentiment> t_labels(target_labels.begin(), target_labels.end());
  return source_reps.tape().record(
      Tensor::scalar(value), {source_reps, target_reps},
      [source_reps, target_reps, s_labels = std::move(s_labels), t_labels = std::move(t_labels), margin](
          Tape& t, const Tensor& g, const Tensor&) {
        Tensor* gs = t.grad_if(source_reps);
        Tensor* gt = t.grad_if(target_reps);
        const auto S = source_reps.value().mat();
        const auto T = target_reps.value().mat();
        const double w = g[0] / static_cast<double>(s_labels.size() * t_labels.size());
        for (std::size_t k = 0; k < s_labels.size(); ++k) {
          for (std::size_t l = 0; l < t_labels.size(); ++l) {
            const auto ki = static_cast<Eigen::Index>(k);
            const auto li = static_cast<Eigen::Index>(l);
            Eigen::RowVectorXd diff = S.row(ki) - T.row(li);
            double coeff;
            if (s_labels[k] == t_labels[l]) {
              coeff = 2.0 * w;
            } else if (margin - diff.squaredNorm() > 0.0) {
              coeff = -2.0 * w;
            } else {
              continue;
            }
            if (gs) gs->mat().row(ki) += coeff * diff;
            if (gt) gt->mat().row(li) -= coeff * diff;
          }
        }
      });
}

Var l2_reg(Tape& tape, ParameterSet& params, bool trainable) {
  std::vector<Var> terms;
  params.for_each([&](Parameter& p) {
    if (p.name == "embedding") return;
    terms.push_back(sum_squares(bind(tape, p, trainable)));
  });
  if (terms.empty()) return tape.constant(Tensor::scalar(0.0));
  return add_n(terms);
}

double l2_reg_value(const ParameterSet& params) {
  double total = 0.0;
  params.for_each([&](const Parameter& p) {
    if (p.name != "embedding") total += p.value.vec().squaredNorm();
  });
  return total;
}

Var source_loss(const LossTerms& terms, const LossWeights& weights) {
  std::vector<Var> parts{terms.sentiment};
  if (terms.aux.valid()) parts.push_back(terms.aux);
  if (terms.cfa.valid()) parts.push_back(scale(terms.cfa, weights.lambda));
  if (terms.reg.valid()) parts.push_back(scale(terms.reg, weights.rho));
  return add_n(parts);
}

Var target_loss(const LossTerms& terms, const LossWeights& weights) {
  std::vector<Var> parts{terms.sentiment};
  if (terms.cfa.valid()) parts.push_back(scale(terms.cfa, weights.lambda));
  if (terms.reg.valid()) parts.push_back(scale(terms.reg, weights.rho));
  return add_n(parts);
}

double source_loss(double sentiment, double aux, double cfa, double reg, const LossWeights& weights) {
  return sentiment + aux + weights.lambda * cfa + weights.rho * reg;
}

double target_loss(double sentiment, double cfa, double reg, const LossWeights& weights) {
  return sentiment + weights.lambda * cfa + weights.rho * reg;
}

}  // namespace mgan
