#pragma once

#include <random>
#include <utility>
#include <vector>

#include "cra/layers.hpp"
#include "cra/recurrent.hpp"
#include "cra/tensor.hpp"

namespace cra {

enum class AttentionVariant { None, CRA, SRA, CA };
enum class OrderKind { Forward, Reverse, RandomShuffle, FixedPermutation };
enum class CellKind { LSTM, BiLSTM };

// Sequence-order configuration for the recurrent variants. FixedPermutation
// derives its permutation from `seed` unless `fixed_perm` supplies one
// explicitly; the same permutation is used for the module's whole lifetime.
struct OrderConfig {
  OrderKind kind = OrderKind::Forward;
  uint64_t seed = 0;
  std::vector<int> fixed_perm;
};

struct AttentionConfig {
  AttentionVariant variant = AttentionVariant::CRA;
  int d = 16;
  OrderConfig order;
  CellKind cell = CellKind::LSTM;
};

// Reorders the rows of a [T x L] matrix per the order configuration and
// returns the inverse permutation that restores the original row positions.
// RandomShuffle draws a fresh permutation from `shuffle_rng` per call and
// degrades to the identity when the stream is null (evaluation mode).
template <typename T>
std::pair<Tensor<T>, std::vector<int>> apply_order(
    const Tensor<T>& rows, const OrderConfig& order,
    std::mt19937_64* shuffle_rng);

// One attention module instantiated for a fixed feature-map shape c x h x w.
// CRA runs an LSTM over the c/d channel slices (sequence of length-hw
// spatial vectors); SRA transposes and runs over the hw spatial positions
// (sequence of length-c/d channel vectors); CA replaces the recurrence with
// a 3x3 convolution. All variants end in a bare 1x1 conv + sigmoid producing
// a full c x h x w mask that re-weighs the input elementwise.
template <typename T>
class AttentionModule {
 public:
  AttentionModule(const AttentionConfig& cfg, int c, int h, int w,
                  std::mt19937_64& rng);

  // Forward one frame [c x h x w]. Training mode uses batch statistics in
  // the normalization layers and lets RandomShuffle draw fresh permutations.
  Tensor<T> forward(const Tensor<T>& x, bool training) {
    return forward(x, training, nullptr);
  }
  Tensor<T> forward(const Tensor<T>& x, bool training, Tensor<T>* mask_out);
  Tensor<T> forward_with_order(const Tensor<T>& x, bool training,
                               const OrderConfig& order,
                               Tensor<T>* mask_out = nullptr);

  void collect(const std::string& prefix, ParamMap<T>& out);
  void collect_buffers(const std::string& prefix, BufferMap<T>& out);
  int64_t param_count() const;
  int64_t flop_count() const;  // per frame at the configured shape

  const AttentionConfig& config() const { return cfg_; }
  int rows() const;  // recurrence length (c/d for CRA, h*w for SRA)

 private:
  AttentionConfig cfg_;
  int c_ = 0, h_ = 0, w_ = 0, cd_ = 0;
  Conv2d<T> phi_;       // 1x1, c -> c/d, feeds BN+ReLU
  BatchNorm<T> phi_bn_;
  LstmCell<T> lstm_;
  BiLstm<T> bilstm_;
  Conv2d<T> mid_conv_;  // CA only: 3x3, c/d -> c/d, feeds BN+ReLU
  BatchNorm<T> mid_bn_;
  Conv2d<T> psi_;       // 1x1, c/d -> c, bias, pre-sigmoid
  std::mt19937_64 shuffle_rng_;
};

}  // namespace cra
