#pragma once

#include <random>
#include <string>

#include "cra/layers.hpp"
#include "cra/tensor.hpp"

namespace cra {

// Single-layer LSTM cell. Gate blocks are packed (input, forget, cell
// candidate, output) along the first axis of the weights.
template <typename T>
struct LstmCell {
  LstmCell() = default;
  LstmCell(int in, int hid, std::mt19937_64& rng);

  // One recurrence step: x_row [1 x in], h/c [1 x hid]; returns (h', c').
  std::pair<Tensor<T>, Tensor<T>> step(const Tensor<T>& x_row,
                                       const Tensor<T>& h,
                                       const Tensor<T>& c) const;
  void collect(const std::string& prefix, ParamMap<T>& out);
  int64_t param_count() const;
  int64_t flop_count(int64_t steps) const;

  Tensor<T> w_ih;  // [4*hid x in]
  Tensor<T> w_hh;  // [4*hid x hid]
  Tensor<T> bias;  // [4*hid]
  int in = 0, hid = 0;
};

// Runs the cell over seq [T x in], returning all hidden states [T x hid].
// h0/c0 default to zeros when undefined.
template <typename T>
Tensor<T> lstm_forward(const LstmCell<T>& cell, const Tensor<T>& seq,
                       const Tensor<T>& h0 = Tensor<T>(),
                       const Tensor<T>& c0 = Tensor<T>());

// Two cells run in opposite directions; per-step outputs are summed so the
// output width stays hid for either cell choice.
template <typename T>
struct BiLstm {
  BiLstm() = default;
  BiLstm(int in, int hid, std::mt19937_64& rng);

  Tensor<T> forward(const Tensor<T>& seq) const;
  void collect(const std::string& prefix, ParamMap<T>& out);
  int64_t param_count() const { return fwd.param_count() + bwd.param_count(); }
  int64_t flop_count(int64_t steps) const {
    return fwd.flop_count(steps) + bwd.flop_count(steps);
  }

  LstmCell<T> fwd, bwd;
};

int64_t lstm_param_count(int in, int hid, bool bidirectional);

}  // namespace cra
