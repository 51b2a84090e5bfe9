#pragma once

// Word embedding lookup (with context-only inverted dropout) and the
// bidirectional LSTM that turns embeddings into contextual states h_i.

#include <cstddef>
#include <span>

#include "mgan/numerics.hpp"

namespace mgan {

struct LstmWeights {
  Var w_x;  // [4h × d_in], gate blocks ordered input, forget, candidate, output
  Var w_h;  // [4h × h]
  Var b;    // [4h]
};

struct EncoderWeights {
  Var embedding;  // [|V| × d_w]
  LstmWeights forward;
  LstmWeights backward;
};

// Registers "embedding", "encoder.fw.{w_x,w_h,b}" and "encoder.bw.{w_x,w_h,b}".
// LSTM weights (forget bias included) are drawn from U(-0.01, 0.01). When
// `embeddings` is null the table is drawn from the same distribution with a
// zero padding row.
void add_encoder_params(ParameterSet& params, std::size_t vocab_size, std::size_t d_w, std::size_t d_h, Rng& rng,
                        const Tensor* embeddings = nullptr);

// Binds the encoder parameters onto a tape; frozen bindings take no gradient.
EncoderWeights bind_encoder(Tape& tape, ParameterSet& params, bool trainable);

struct DropoutSpec {
  bool enabled = false;
  double rate = 0.5;
  Rng* rng = nullptr;
};

// Row lookup. With dropout enabled each entry of the unmasked rows is kept
// with probability 1 - rate and scaled by 1 / (1 - rate). Random draws are
// made only for unmasked rows, so trailing padding does not shift them.
Var embed(Var table, std::span<const int> ids, const Mask& mask, const DropoutSpec& dropout = {});

// Single-direction LSTM over the rows of x. Masked rows neither read input
// nor update the recurrent state and produce zero output rows.
Var lstm(Var x, const LstmWeights& w, const Mask& mask, bool reverse);

// [forward LSTM ; backward LSTM] per position: [n × 2h].
Var bilstm(Var x, const EncoderWeights& w, const Mask& mask);

}  // namespace mgan
