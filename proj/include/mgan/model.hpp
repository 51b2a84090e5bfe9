#pragma once

// The two networks. The source network stacks encoder, Context2Aspect,
// Coarse2Fine and position-aware sentiment attention; the target network
// drops Coarse2Fine and takes its position relevance from the known term span.

#include <cstddef>
#include <string>
#include <vector>

#include "mgan/attention.hpp"
#include "mgan/corpus.hpp"
#include "mgan/encoder.hpp"
#include "mgan/losses.hpp"
#include "mgan/numerics.hpp"

namespace mgan {

struct Hyperparams {
  std::size_t d_w = 200;  // word embedding size, also d_e
  std::size_t d_h = 150;
  std::size_t d_u = 100;
  std::size_t fc = 300;
  double lambda = 0.1;
  double rho = 1e-6;
  double margin = 1.0;
  double learning_rate = 1e-4;
  double clip_norm = 40.0;
  double dropout = 0.5;
  std::size_t source_batch = 64;
  std::size_t target_batch = 32;
  bool literal_eq9 = true;

  LossWeights loss_weights() const { return {lambda, rho, margin}; }
  friend bool operator==(const Hyperparams&, const Hyperparams&) = default;
};

// "key=value" lines, one per field.
std::string serialize(const Hyperparams& hp);
// Unknown keys and malformed values raise ConfigError naming the key.
Hyperparams parse_hyperparams(const std::string& text);
// Assigns one field from its text form; false when `key` is not a field.
bool set_hyperparam(Hyperparams& hp, std::string_view key, std::string_view value);
// Range checks; ConfigError names the offending key.
void validate(const Hyperparams& hp);

enum class NetworkKind { source, target };
std::string_view to_string(NetworkKind kind);

class Network {
 public:
  Network() = default;
  // Registers every parameter in a fixed order: encoder, C2A, C2F (source
  // only), PaS, classifier.
  Network(NetworkKind kind, std::size_t vocab_size, std::size_t categories, const Hyperparams& hp, Rng& rng,
          const Tensor* embeddings = nullptr);

  NetworkKind kind() const { return kind_; }
  std::size_t categories() const { return categories_; }
  const Hyperparams& hyperparams() const { return hp_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

 private:
  NetworkKind kind_ = NetworkKind::target;
  std::size_t categories_ = 0;
  Hyperparams hp_;
  ParameterSet params_;
};

// Per-example forward results; every Var lives on the tape passed to forward.
struct ExampleOutputs {
  std::size_t length = 0;  // true sentence length
  Var logits;              // [3]
  Var v_o;                 // [2d_h]
  Var alpha;               // [m_max]
  Var alignment;           // M, [n_max × m_max]
  Var gamma;               // [n_max]
  Var p;                   // [n_max]
  Var beta;                // source only
  Var aux_logits;          // source only
};

struct BatchOutputs {
  std::vector<ExampleOutputs> examples;
  Var reps;            // stacked v_o, [B × 2d_h]
  Var sentiment_loss;  // batch mean cross-entropy
  Var aux_loss;        // source only
};

struct ForwardOptions {
  bool trainable = true;  // bind parameters with gradient tracking
  DropoutSpec dropout{};  // context-word dropout
};

ExampleOutputs forward_example(Tape& tape, Network& net, const Batch& batch, std::size_t index,
                               const ForwardOptions& options = {});
BatchOutputs forward_batch(Tape& tape, Network& net, const Batch& batch, const ForwardOptions& options = {});

// Class probabilities without building a gradient tape.
std::vector<std::vector<double>> predict_proba(Network& net, const Batch& batch);

// Mean over the batch of per-example cross-entropies.
Var mean_cross_entropy(const std::vector<Var>& logits, const std::vector<std::size_t>& labels);

}  // namespace mgan
