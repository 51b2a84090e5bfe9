#include "mgan/training.hpp"

#include <cmath>
#include <sstream>

#include "mgan/io.hpp"

namespace mgan {

double global_grad_norm(const ParameterSet& params) {
  double sq = 0.0;
  params.for_each([&](const Parameter& p) { sq += p.grad.vec().squaredNorm(); });
  return std::sqrt(sq);
}

double clip_gradients(ParameterSet& params, double max_norm) {
  params.for_each([](const Parameter& p) {
    if (!p.grad.all_finite()) throw NonFiniteGradient(p.name, "non-finite gradient in parameter " + p.name);
  });
  const double norm = global_grad_norm(params);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    params.for_each([&](Parameter& p) { p.grad.vec() *= factor; });
  }
  return norm;
}

Adam::Adam(const ParameterSet& params, double learning_rate) : lr_(learning_rate) {
  params.for_each([&](const Parameter& p) {
    state_.m.emplace_back(p.value.shape());
    state_.v.emplace_back(p.value.shape());
  });
}

Adam::Adam(AdamState state, double learning_rate) : state_(std::move(state)), lr_(learning_rate) {}

void Adam::step(ParameterSet& params) {
  if (params.size() != state_.m.size()) {
    throw DimensionError("adam: state for " + std::to_string(state_.m.size()) + " parameters, given " +
                         std::to_string(params.size()));
  }
  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const double c1 = 1.0 - std::pow(kBeta1, t);
  const double c2 = 1.0 - std::pow(kBeta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    if (p.value.shape() != state_.m[i].shape()) {
      throw DimensionError("adam: moment shape mismatch for " + p.name);
    }
    auto g = p.grad.vec().array();
    auto m = state_.m[i].vec().array();
    auto v = state_.v[i].vec().array();
    m = kBeta1 * m + (1.0 - kBeta1) * g;
    v = kBeta2 * v + (1.0 - kBeta2) * g.square();
    p.value.vec().array() -= lr_ * (m / c1) / ((v / c2).sqrt() + kEpsilon);
  }
}

std::string format(const LogRecord& r) {
  std::ostringstream out;
  out << "phase=" << r.phase << " epoch=" << r.epoch << " step=" << r.step << " l_sen=" << format_double(r.l_sen)
      << " l_aux=" << format_double(r.l_aux) << " l_cfa=" << format_double(r.l_cfa)
      << " l_reg=" << format_double(r.l_reg) << " loss=" << format_double(r.loss);
  if (r.train_accuracy) out << " train_accuracy=" << format_double(*r.train_accuracy);
  if (r.validation) out << " " << format_metrics(*r.validation, "val_");
  return out.str();
}

std::string format_log(const std::vector<LogRecord>& log) {
  std::string out;
  for (const auto& r : log) out += format(r) + "\n";
  return out;
}

namespace {

Rng stream(std::uint64_t seed, std::string_view name) { return Rng(fnv1a64(name, seed)); }

DropoutSpec dropout_for(const Network& net, Rng* rng) {
  return {rng != nullptr && net.hyperparams().dropout > 0.0, net.hyperparams().dropout, rng};
}

// Representations of the opposite network, either as constants or with
// gradient tracking on `tape`.
Var opposite_reps(Tape& tape, Network& net, const Batch& batch, bool isolation) {
  if (isolation) {
    Tape frozen(false);
    BatchOutputs out = forward_batch(frozen, net, batch, {.trainable = false});
    return tape.constant(out.reps.value());
  }
  return forward_batch(tape, net, batch, {.trainable = true}).reps;
}

StepStats finish_step(Tape& tape, Var loss, Network& net, Adam& optimizer, StepStats stats) {
  stats.loss = loss.value().item();
  if (!std::isfinite(stats.loss)) throw EvaluationError("non-finite training loss");
  tape.backward(loss);
  stats.grad_norm = clip_gradients(net.params(), net.hyperparams().clip_norm);
  optimizer.step(net.params());
  net.params().zero_grad();
  return stats;
}

}  // namespace

StepStats source_step(Network& source, Network& target, const Batch& source_batch, const Batch& target_batch,
                      Adam& optimizer, Rng* dropout_rng, bool isolation) {
  const LossWeights w = source.hyperparams().loss_weights();
  Tape tape;
  BatchOutputs s = forward_batch(tape, source, source_batch, {.trainable = true, .dropout = dropout_for(source, dropout_rng)});
  Var t_reps = opposite_reps(tape, target, target_batch, isolation);
  Var cfa = cfa_loss(s.reps, source_batch.sentiment, t_reps, target_batch.sentiment, w.margin);
  Var reg = l2_reg(tape, source.params());
  Var loss = source_loss({s.sentiment_loss, s.aux_loss, cfa, reg}, w);
  StepStats stats{s.sentiment_loss.value().item(), s.aux_loss.value().item(), cfa.value().item(), reg.value().item()};
  return finish_step(tape, loss, source, optimizer, stats);
}

StepStats target_step(Network& source, Network& target, const Batch& source_batch, const Batch& target_batch,
                      Adam& optimizer, Rng* dropout_rng, bool isolation) {
  const LossWeights w = target.hyperparams().loss_weights();
  Tape tape;
  Var s_reps = opposite_reps(tape, source, source_batch, isolation);
  BatchOutputs t = forward_batch(tape, target, target_batch, {.trainable = true, .dropout = dropout_for(target, dropout_rng)});
  Var cfa = cfa_loss(s_reps, source_batch.sentiment, t.reps, target_batch.sentiment, w.margin);
  Var reg = l2_reg(tape, target.params());
  Var loss = target_loss({t.sentiment_loss, {}, cfa, reg}, w);
  StepStats stats{t.sentiment_loss.value().item(), 0.0, cfa.value().item(), reg.value().item()};
  return finish_step(tape, loss, target, optimizer, stats);
}

StepStats target_only_step(Network& target, const Batch& target_batch, Adam& optimizer, Rng* dropout_rng) {
  const LossWeights w = target.hyperparams().loss_weights();
  Tape tape;
  BatchOutputs t = forward_batch(tape, target, target_batch, {.trainable = true, .dropout = dropout_for(target, dropout_rng)});
  Var reg = l2_reg(tape, target.params());
  Var loss = target_loss({t.sentiment_loss, {}, {}, reg}, w);
  StepStats stats{t.sentiment_loss.value().item(), 0.0, 0.0, reg.value().item()};
  return finish_step(tape, loss, target, optimizer, stats);
}

StepStats pretrain_step(Network& source, const Batch& source_batch, Adam& optimizer, Rng* dropout_rng) {
  const LossWeights w = source.hyperparams().loss_weights();
  Tape tape;
  BatchOutputs s = forward_batch(tape, source, source_batch, {.trainable = true, .dropout = dropout_for(source, dropout_rng)});
  Var reg = l2_reg(tape, source.params());
  Var loss = source_loss({s.sentiment_loss, s.aux_loss, {}, reg}, w);
  StepStats stats{s.sentiment_loss.value().item(), s.aux_loss.value().item(), 0.0, reg.value().item()};
  return finish_step(tape, loss, source, optimizer, stats);
}

namespace {

class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  // True when `accuracy` strictly improves on the best so far.
  bool update(double accuracy) {
    if (!best_ || accuracy > *best_) {
      best_ = accuracy;
      stale_ = 0;
      return true;
    }
    ++stale_;
    return false;
  }
  bool should_stop() const { return patience_ > 0 && stale_ >= patience_; }
  std::optional<double> best() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t stale_ = 0;
  std::optional<double> best_;
};

struct StatsMean {
  StepStats sum;
  std::size_t count = 0;

  void add(const StepStats& s) {
    sum.l_sen += s.l_sen;
    sum.l_aux += s.l_aux;
    sum.l_cfa += s.l_cfa;
    sum.l_reg += s.l_reg;
    sum.loss += s.loss;
    ++count;
  }
  void fill(LogRecord& r) const {
    const double n = count ? static_cast<double>(count) : 1.0;
    r.l_sen = sum.l_sen / n;
    r.l_aux = sum.l_aux / n;
    r.l_cfa = sum.l_cfa / n;
    r.l_reg = sum.l_reg / n;
    r.loss = sum.loss / n;
  }
};

template <typename Example>
double train_accuracy(Network& net, const std::vector<Example>& examples, const Vocab& vocab) {
  return accuracy(evaluate(net, std::span<const Example>(examples), vocab));
}

// Shared single-network loop for pretraining and the baseline.
template <typename Example, typename StepFn>
TrainResult single_network_loop(Network net, const std::vector<Example>& all, const Vocab& vocab,
                                std::size_t batch_size, const TrainConfig& config, std::string_view phase,
                                StepFn step, const LogSink& sink) {
  Rng split_rng = stream(config.seed, "split");
  Rng shuffle_rng = stream(config.seed, "shuffle");
  Rng dropout_rng = stream(config.seed, "dropout");
  auto [train, validation] = split_holdout(all, config.validation_fraction, split_rng);
  if (train.empty()) throw ConfigError("validation_fraction", "no training examples left after the validation split");

  Adam optimizer(net.params(), net.hyperparams().learning_rate);
  EarlyStopping stopper(config.patience);
  TrainResult result;
  ParameterSet best = net.params();
  std::size_t step_count = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    StatsMean mean;
    for (const Batch& batch : make_batches(std::span<const Example>(train), vocab, batch_size, &shuffle_rng, true)) {
      mean.add(step(net, batch, optimizer, config.dropout ? &dropout_rng : nullptr));
      ++step_count;
    }
    result.epochs_run = epoch;
    LogRecord record{std::string(phase), epoch, step_count};
    mean.fill(record);
    if (config.track_train_accuracy || config.stop_at_train_accuracy) {
      record.train_accuracy = train_accuracy(net, train, vocab);
      if (!result.fit_epoch && *record.train_accuracy >= 1.0) result.fit_epoch = epoch;
    }
    bool stop = false;
    if (!validation.empty()) {
      record.validation = metrics(evaluate(net, std::span<const Example>(validation), vocab));
      if (stopper.update(record.validation->accuracy)) best = net.params();
      stop = stopper.should_stop();
      result.early_stopped = stop;
    } else {
      best = net.params();
    }
    if (config.stop_at_train_accuracy && *record.train_accuracy >= *config.stop_at_train_accuracy) stop = true;
    if (sink) sink(record);
    result.log.push_back(std::move(record));
    if (stop) break;
  }
  net.params() = best;
  result.best_validation_accuracy = stopper.best();
  result.network = std::move(net);
  return result;
}

}  // namespace

TrainResult pretrain_source(const SourceCorpus& corpus, const Vocab& vocab, const Hyperparams& hp,
                            const TrainConfig& config, const Tensor* embeddings, const LogSink& sink) {
  if (corpus.examples.empty()) throw ConfigError("source_corpus", "source corpus is empty");
  Rng init_rng = stream(config.seed, "init.source");
  Network net(NetworkKind::source, vocab.size(), corpus.categories.size(), hp, init_rng, embeddings);
  return single_network_loop(std::move(net), corpus.examples, vocab, hp.source_batch, config, "pretrain",
                             pretrain_step, sink);
}

TrainResult train_target_only(const TargetCorpus& target, const Vocab& vocab, const Hyperparams& hp,
                              const TrainConfig& config, const Tensor* embeddings, const LogSink& sink) {
  if (target.examples.empty()) throw ConfigError("target_corpus", "target corpus is empty");
  Rng init_rng = stream(config.seed, "init.target");
  Network net(NetworkKind::target, vocab.size(), 0, hp, init_rng, embeddings);
  return single_network_loop(std::move(net), target.examples, vocab, hp.target_batch, config, "baseline",
                             target_only_step, sink);
}

NetworkPair init_pair(const Network& pretrained_source) {
  if (pretrained_source.kind() != NetworkKind::source) throw ConfigError("from", "stage 2 needs a source network");
  NetworkPair pair;
  pair.source = pretrained_source;
  const Hyperparams& hp = pretrained_source.hyperparams();
  const std::size_t vocab_size = pretrained_source.params().get("embedding").value.rows();
  Rng unused(0);
  pair.target = Network(NetworkKind::target, vocab_size, 0, hp, unused);
  pair.target.params().for_each([&](Parameter& p) {
    p.value = pretrained_source.params().get(p.name).value;
    p.grad.fill(0.0);
  });
  return pair;
}

PairResult alternating_train(const Network& pretrained_source, const TargetCorpus& target, const SourceCorpus& source,
                             const Vocab& vocab, const TrainConfig& config, const LogSink& sink) {
  if (target.examples.empty()) throw ConfigError("target_corpus", "target corpus is empty");
  if (source.examples.empty()) throw ConfigError("source_corpus", "source corpus is empty");
  NetworkPair pair = init_pair(pretrained_source);
  const Hyperparams& hp = pair.source.hyperparams();

  Rng split_rng = stream(config.seed, "split");
  Rng source_rng = stream(config.seed, "shuffle.source");
  Rng target_rng = stream(config.seed, "shuffle.target");
  Rng dropout_rng = stream(config.seed, "dropout");
  auto [train, validation] = split_holdout(target.examples, config.validation_fraction, split_rng);
  if (train.empty()) throw ConfigError("validation_fraction", "no target training examples left after the split");

  BatchCursor<SourceExample> source_batches(source.examples, vocab, hp.source_batch, source_rng);
  BatchCursor<TargetExample> target_batches(train, vocab, hp.target_batch, target_rng);
  Adam source_opt(pair.source.params(), hp.learning_rate);
  Adam target_opt(pair.target.params(), hp.learning_rate);
  Rng* drop = config.dropout ? &dropout_rng : nullptr;

  EarlyStopping stopper(config.patience);
  PairResult result;
  NetworkPair best = pair;
  std::size_t step_count = 0;
  const std::size_t iterations = target_batches.batches_per_epoch();

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    StatsMean source_mean, target_mean;
    for (std::size_t it = 0; it < iterations; ++it) {
      const Batch& sb = source_batches.next();
      const Batch& tb = target_batches.next();
      source_mean.add(source_step(pair.source, pair.target, sb, tb, source_opt, drop, config.cfa_gradient_isolation));
      const Batch& sb2 = source_batches.next();
      const Batch& tb2 = target_batches.next();
      target_mean.add(target_step(pair.source, pair.target, sb2, tb2, target_opt, drop, config.cfa_gradient_isolation));
      ++step_count;
    }
    result.epochs_run = epoch;
    LogRecord src_record{"source", epoch, step_count};
    source_mean.fill(src_record);
    LogRecord tgt_record{"target", epoch, step_count};
    target_mean.fill(tgt_record);
    if (config.track_train_accuracy) tgt_record.train_accuracy = train_accuracy(pair.target, train, vocab);
    bool stop = false;
    if (!validation.empty()) {
      tgt_record.validation = metrics(evaluate(pair.target, std::span<const TargetExample>(validation), vocab));
      if (stopper.update(tgt_record.validation->accuracy)) best = pair;
      stop = stopper.should_stop();
      result.early_stopped = stop;
    } else {
      best = pair;
    }
    if (sink) {
      sink(src_record);
      sink(tgt_record);
    }
    result.log.push_back(std::move(src_record));
    result.log.push_back(std::move(tgt_record));
    if (stop) break;
  }
  result.pair = std::move(best);
  result.best_validation_accuracy = stopper.best();
  return result;
}

}  // namespace mgan
