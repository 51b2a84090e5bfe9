#include "mgan/model.hpp"

#include <charconv>
#include <sstream>

#include "mgan/io.hpp"

namespace mgan {

namespace {

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw ConfigError(std::string(key), "invalid value '" + std::string(text) + "' for " + std::string(key));
  }
  return value;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(std::string(key), "invalid boolean '" + std::string(text) + "' for " + std::string(key));
}

}  // namespace

std::string serialize(const Hyperparams& hp) {
  std::ostringstream out;
  out << "d_w=" << hp.d_w << "\n"
      << "d_h=" << hp.d_h << "\n"
      << "d_u=" << hp.d_u << "\n"
      << "fc=" << hp.fc << "\n"
      << "lambda=" << format_double(hp.lambda) << "\n"
      << "rho=" << format_double(hp.rho) << "\n"
      << "margin=" << format_double(hp.margin) << "\n"
      << "learning_rate=" << format_double(hp.learning_rate) << "\n"
      << "clip_norm=" << format_double(hp.clip_norm) << "\n"
      << "dropout=" << format_double(hp.dropout) << "\n"
      << "source_batch=" << hp.source_batch << "\n"
      << "target_batch=" << hp.target_batch << "\n"
      << "literal_eq9=" << (hp.literal_eq9 ? "true" : "false") << "\n";
  return out.str();
}

bool set_hyperparam(Hyperparams& hp, std::string_view key, std::string_view value) {
  if (key == "d_w") hp.d_w = parse_number<std::size_t>(key, value);
  else if (key == "d_h") hp.d_h = parse_number<std::size_t>(key, value);
  else if (key == "d_u") hp.d_u = parse_number<std::size_t>(key, value);
  else if (key == "fc") hp.fc = parse_number<std::size_t>(key, value);
  else if (key == "lambda") hp.lambda = parse_number<double>(key, value);
  else if (key == "rho") hp.rho = parse_number<double>(key, value);
  else if (key == "margin") hp.margin = parse_number<double>(key, value);
  else if (key == "learning_rate") hp.learning_rate = parse_number<double>(key, value);
  else if (key == "clip_norm") hp.clip_norm = parse_number<double>(key, value);
  else if (key == "dropout") hp.dropout = parse_number<double>(key, value);
  else if (key == "source_batch") hp.source_batch = parse_number<std::size_t>(key, value);
  else if (key == "target_batch") hp.target_batch = parse_number<std::size_t>(key, value);
  else if (key == "literal_eq9") hp.literal_eq9 = parse_bool(key, value);
  else return false;
  return true;
}

void validate(const Hyperparams& hp) {
  auto positive = [](const char* key, double v) {
    if (!(v > 0.0)) throw ConfigError(key, std::string(key) + " must be positive");
  };
  auto nonnegative = [](const char* key, double v) {
    if (!(v >= 0.0)) throw ConfigError(key, std::string(key) + " must be nonnegative");
  };
  positive("d_w", static_cast<double>(hp.d_w));
  positive("d_h", static_cast<double>(hp.d_h));
  positive("d_u", static_cast<double>(hp.d_u));
  positive("fc", static_cast<double>(hp.fc));
  nonnegative("lambda", hp.lambda);
  nonnegative("rho", hp.rho);
  nonnegative("margin", hp.margin);
  positive("learning_rate", hp.learning_rate);
  positive("clip_norm", hp.clip_norm);
  positive("source_batch", static_cast<double>(hp.source_batch));
  positive("target_batch", static_cast<double>(hp.target_batch));
  if (!(hp.dropout >= 0.0 && hp.dropout < 1.0)) throw ConfigError("dropout", "dropout must lie in [0, 1)");
}

Hyperparams parse_hyperparams(const std::string& text) {
  Hyperparams hp;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const std::string_view body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) throw ConfigError(std::string(body), "expected key=value, got '" + line + "'");
    const std::string key(trim(body.substr(0, eq)));
    if (!set_hyperparam(hp, key, trim(body.substr(eq + 1)))) throw ConfigError(key, "unknown hyperparameter " + key);
  }
  validate(hp);
  return hp;
}

std::string_view to_string(NetworkKind kind) { return kind == NetworkKind::source ? "source" : "target"; }

Network::Network(NetworkKind kind, std::size_t vocab_size, std::size_t categories, const Hyperparams& hp, Rng& rng,
                 const Tensor* embeddings)
    : kind_(kind), categories_(categories), hp_(hp) {
  if (kind == NetworkKind::source && categories == 0) {
    throw ConfigError("categories", "source network needs at least one aspect category");
  }
  add_encoder_params(params_, vocab_size, hp.d_w, hp.d_h, rng, embeddings);
  add_c2a_params(params_, hp.d_h, hp.d_w, rng);
  if (kind == NetworkKind::source) add_c2f_params(params_, hp.d_h, hp.d_w, hp.d_u, categories, rng);
  add_pas_params(params_, hp.d_h, hp.d_w, hp.d_u, rng);
  add_classifier_params(params_, 2 * hp.d_h, hp.fc, rng);
}

namespace {

struct BoundWeights {
  EncoderWeights encoder;
  C2AWeights c2a;
  C2FWeights c2f;
  PaSWeights pas;
  ClassifierWeights classifier;
};

BoundWeights bind_all(Tape& tape, Network& net, bool trainable) {
  BoundWeights w;
  w.encoder = bind_encoder(tape, net.params(), trainable);
  w.c2a = bind_c2a(tape, net.params(), trainable);
  if (net.kind() == NetworkKind::source) w.c2f = bind_c2f(tape, net.params(), trainable);
  w.pas = bind_pas(tape, net.params(), trainable);
  w.classifier = bind_classifier(tape, net.params(), trainable);
  return w;
}

ExampleOutputs forward_bound(Tape& tape, Network& net, const BoundWeights& w, const Batch& batch, std::size_t b,
                             const ForwardOptions& options) {
  if (b >= batch.size()) throw IndexError("forward: example " + std::to_string(b) + " of batch size " +
                                          std::to_string(batch.size()));
  const bool source = net.kind() == NetworkKind::source;
  if (source != (batch.kind == CorpusKind::source)) {
    throw DimensionError("forward: " + std::string(to_string(net.kind())) + " network given a batch of the other kind");
  }
  const Mask& mask = batch.context_mask[b];
  const Mask& aspect_mask = batch.aspect_mask[b];
  ExampleOutputs out;
  out.length = batch.lengths[b];

  Var context = embed(w.encoder.embedding, batch.context_ids[b], mask, options.dropout);
  Var aspect = embed(w.encoder.embedding, batch.aspect_ids[b], aspect_mask);
  Var h = bilstm(context, w.encoder, mask);
  C2AOutput c2a_out = c2a(h, aspect, mask, aspect_mask, w.c2a);
  out.alpha = c2a_out.alpha;
  out.alignment = c2a_out.alignment;

  Var aspect_rep;
  if (source) {
    C2FOutput c2f_out = c2f(h, c2a_out.h_a, mask, w.c2f);
    out.beta = c2f_out.beta;
    out.aux_logits = c2f_out.aux_logits;
    out.p = location_relevance(c2f_out.beta, out.length);
    aspect_rep = c2f_out.r_a;
  } else {
    Tensor p_true = position_relevance_target(out.length, batch.span_start[b], batch.span_len[b],
                                              net.hyperparams().literal_eq9);
    Tensor p_padded({batch.n_max}, 0.0);
    for (std::size_t i = 0; i < out.length; ++i) p_padded[i] = p_true[i];
    out.p = tape.constant(std::move(p_padded));
    aspect_rep = c2a_out.h_a;
  }
  PaSOutput pas_out = pas(h, aspect_rep, out.p, mask, w.pas);
  out.gamma = pas_out.gamma;
  out.v_o = pas_out.v_o;
  out.logits = sentiment_logits(pas_out.v_o, w.classifier);
  return out;
}

}  // namespace

Var mean_cross_entropy(const std::vector<Var>& logits, const std::vector<std::size_t>& labels) {
  if (logits.empty() || logits.size() != labels.size()) {
    throw DimensionError("mean_cross_entropy: " + std::to_string(logits.size()) + " logits for " +
                         std::to_string(labels.size()) + " labels");
  }
  std::vector<Var> terms;
  terms.reserve(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) terms.push_back(cross_entropy(logits[i], labels[i]));
  return scale(add_n(terms), 1.0 / static_cast<double>(terms.size()));
}

ExampleOutputs forward_example(Tape& tape, Network& net, const Batch& batch, std::size_t index,
                               const ForwardOptions& options) {
  return forward_bound(tape, net, bind_all(tape, net, options.trainable), batch, index, options);
}

BatchOutputs forward_batch(Tape& tape, Network& net, const Batch& batch, const ForwardOptions& options) {
  if (batch.size() == 0) throw DomainError("forward_batch: empty batch");
  const BoundWeights w = bind_all(tape, net, options.trainable);
  BatchOutputs out;
  std::vector<Var> logits, reps, aux;
  std::vector<std::size_t> labels, categories;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    ExampleOutputs ex = forward_bound(tape, net, w, batch, b, options);
    logits.push_back(ex.logits);
    reps.push_back(ex.v_o);
    labels.push_back(static_cast<std::size_t>(batch.sentiment[b]));
    if (net.kind() == NetworkKind::source) {
      aux.push_back(ex.aux_logits);
      categories.push_back(batch.category[b]);
    }
    out.examples.push_back(std::move(ex));
  }
  out.reps = stack_rows(reps);
  out.sentiment_loss = mean_cross_entropy(logits, labels);
  if (!aux.empty()) out.aux_loss = mean_cross_entropy(aux, categories);
  return out;
}

std::vector<std::vector<double>> predict_proba(Network& net, const Batch& batch) {
  Tape tape(false);
  const BoundWeights w = bind_all(tape, net, false);
  std::vector<std::vector<double>> probs;
  probs.reserve(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    ExampleOutputs ex = forward_bound(tape, net, w, batch, b, {});
    Tensor p = softmax_values(ex.logits.value().data(), Mask(kNumSentiments, true));
    probs.emplace_back(p.values());
  }
  return probs;
}

}  // namespace mgan
