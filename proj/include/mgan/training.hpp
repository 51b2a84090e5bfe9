#pragma once

// Optimization: global-norm clipping, Adam, stage-1 source pretraining,
// stage-2 alternating training of the source/target pair and the
// target-only baseline.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mgan/corpus.hpp"
#include "mgan/eval.hpp"
#include "mgan/model.hpp"

namespace mgan {

double global_grad_norm(const ParameterSet& params);

// Rescales every gradient by max_norm / ‖g‖ when the global norm exceeds
// max_norm and returns the norm before clipping. Throws NonFiniteGradient
// naming the first parameter with a NaN or infinite entry.
double clip_gradients(ParameterSet& params, double max_norm);

struct AdamState {
  std::uint64_t step = 0;
  std::vector<Tensor> m;  // one per parameter, in ParameterSet order
  std::vector<Tensor> v;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

class Adam {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  Adam(const ParameterSet& params, double learning_rate);
  Adam(AdamState state, double learning_rate);

  // θ ← θ − lr·m̂/(√v̂ + ε) with bias-corrected moments.
  void step(ParameterSet& params);

  const AdamState& state() const { return state_; }
  double learning_rate() const { return lr_; }

 private:
  AdamState state_;
  double lr_;
};

// Endless batch stream that reshuffles at every epoch boundary.
template <typename Example>
class BatchCursor {
 public:
  BatchCursor(std::span<const Example> examples, const Vocab& vocab, std::size_t batch_size, Rng& rng)
      : examples_(examples), vocab_(vocab), batch_size_(batch_size), rng_(rng) {
    if (examples.empty()) throw DomainError("batch cursor over an empty corpus");
  }

  const Batch& next() {
    if (pos_ == batches_.size()) {
      batches_ = make_batches(examples_, vocab_, batch_size_, &rng_, true);
      pos_ = 0;
      ++epoch_;
    }
    return batches_[pos_++];
  }

  // Number of epochs started so far.
  std::size_t epoch() const { return epoch_; }
  std::size_t batches_per_epoch() const { return (examples_.size() + batch_size_ - 1) / batch_size_; }

 private:
  std::span<const Example> examples_;
  const Vocab& vocab_;
  std::size_t batch_size_;
  Rng& rng_;
  std::vector<Batch> batches_;
  std::size_t pos_ = 0;
  std::size_t epoch_ = 0;
};

struct TrainConfig {
  std::uint64_t seed = 1;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
  double validation_fraction = 0.1;
  bool cfa_gradient_isolation = true;
  bool dropout = true;
  // Stop once training accuracy reaches this value (checked per epoch).
  std::optional<double> stop_at_train_accuracy;
  bool track_train_accuracy = false;
};

// One line per evaluation.
struct LogRecord {
  std::string phase;
  std::size_t epoch = 0;
  std::size_t step = 0;
  double l_sen = 0.0;
  double l_aux = 0.0;
  double l_cfa = 0.0;
  double l_reg = 0.0;
  double loss = 0.0;
  std::optional<double> train_accuracy{};
  std::optional<Metrics> validation{};
};

std::string format(const LogRecord& record);
std::string format_log(const std::vector<LogRecord>& log);

using LogSink = std::function<void(const LogRecord&)>;

struct TrainResult {
  Network network;  // best-validation parameters
  std::vector<LogRecord> log;
  std::optional<double> best_validation_accuracy;
  std::size_t epochs_run = 0;
  bool early_stopped = false;
  // First epoch at which training accuracy reached 1 (when tracked).
  std::optional<std::size_t> fit_epoch;
};

// Stage 1: source network alone on L_sen + L_aux + ρ·L_reg.
TrainResult pretrain_source(const SourceCorpus& corpus, const Vocab& vocab, const Hyperparams& hp,
                            const TrainConfig& config, const Tensor* embeddings = nullptr,
                            const LogSink& sink = {});

struct NetworkPair {
  Network source;
  Network target;
};

// Copies the pretrained source network and builds a target network whose
// encoder, C2A, PaS and classifier arrays equal the source's.
NetworkPair init_pair(const Network& pretrained_source);

struct PairResult {
  NetworkPair pair;  // target holds its best-validation parameters
  std::vector<LogRecord> log;
  std::optional<double> best_validation_accuracy;
  std::size_t epochs_run = 0;
  bool early_stopped = false;
};

// Stage 2. Each iteration takes one source step on L_src then one target
// step on L_tar, each on fresh batches. The other network's
// representations enter the CFA term as constants unless
// config.cfa_gradient_isolation is false, in which case they carry
// gradient into that network's next step. Epochs count target epochs.
PairResult alternating_train(const Network& pretrained_source, const TargetCorpus& target, const SourceCorpus& source,
                             const Vocab& vocab, const TrainConfig& config, const LogSink& sink = {});

// Baseline: a freshly initialized target network trained on L_sen + ρ·L_reg
// with the same split and stopping rule.
TrainResult train_target_only(const TargetCorpus& target, const Vocab& vocab, const Hyperparams& hp,
                              const TrainConfig& config, const Tensor* embeddings = nullptr,
                              const LogSink& sink = {});

struct StepStats {
  double l_sen = 0.0;
  double l_aux = 0.0;
  double l_cfa = 0.0;
  double l_reg = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;  // before clipping
};

// Single optimizer steps. A null dropout_rng disables dropout. The stepped
// network's gradients are cleared after its update; with isolation off the
// opposite network keeps the CFA gradient it received until its own step.
StepStats source_step(Network& source, Network& target, const Batch& source_batch, const Batch& target_batch,
                      Adam& optimizer, Rng* dropout_rng, bool isolation = true);
StepStats target_step(Network& source, Network& target, const Batch& source_batch, const Batch& target_batch,
                      Adam& optimizer, Rng* dropout_rng, bool isolation = true);
// Target network on L_sen + ρ·L_reg only.
StepStats target_only_step(Network& target, const Batch& target_batch, Adam& optimizer, Rng* dropout_rng);
// Source network on L_sen + L_aux + ρ·L_reg only.
StepStats pretrain_step(Network& source, const Batch& source_batch, Adam& optimizer, Rng* dropout_rng);

}  // namespace mgan
