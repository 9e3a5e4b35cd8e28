#pragma once

#include <random>
#include <string>
#include <vector>

#include "cra/layers.hpp"
#include "cra/tensor.hpp"

namespace cra {

enum class PoolOp { Avg, Max };
enum class PoolKind { AvgOnly, MaxOnly, Combined };

// Permutation-invariant pooling of a frame-feature stack F [t x c] -> [c].
template <typename T>
Tensor<T> pool_set(PoolOp op, const Tensor<T>& frames);

struct AggConfig {
  PoolKind pooling = PoolKind::Combined;
  int r = 16;
  bool share_weights = false;
};

// Gated set aggregation. Pooled summaries pass through bottleneck MLPs whose
// summed output, squashed by a sigmoid, gates each frame feature before the
// frames are averaged in ascending index order:
//
//   m = sigmoid(g_avg(mean F) + g_max(max F)),  out = (1/t) sum_j m * F_j
//
// The gate is a function of order-insensitive pools only, so the whole
// aggregate is invariant to frame order.
template <typename T>
class SetAggCell {
 public:
  SetAggCell() = default;
  SetAggCell(const AggConfig& cfg, int channels, std::mt19937_64& rng);

  // Single clip F [t x c] -> [c]. Normalization inside the gate always uses
  // running statistics here: a lone clip carries no batch to normalize over.
  Tensor<T> forward(const Tensor<T>& frames);
  // A training batch of clips, gated jointly so the gate normalization sees
  // batch statistics across the B pooled summaries. Returns [B x c].
  Tensor<T> forward_batch(const std::vector<Tensor<T>>& clips, bool training);

  // Recomputes the aggregate as an explicit per-frame map followed by a
  // plain normalized sum and compares against forward(): true when the two
  // paths agree within tol everywhere.
  bool decompose_check(const Tensor<T>& frames, T tol = T(1e-6));

  void collect(const std::string& prefix, ParamMap<T>& out);
  void collect_buffers(const std::string& prefix, BufferMap<T>& out);
  int64_t param_count() const;
  int64_t flop_count() const;  // per clip
  const AggConfig& config() const { return cfg_; }

 private:
  struct Gate {
    Linear<T> squeeze;  // c -> c/r, feeds BN+ReLU
    BatchNorm<T> bn;
    Linear<T> expand;   // c/r -> c, pre-sigmoid
  };

  Tensor<T> run_gate(Gate& gate, const Tensor<T>& pooled, bool training);
  // Pre-sigmoid gate output for a batch of pooled summaries [B x c].
  Tensor<T> gate_logits(const Tensor<T>& avg2d, const Tensor<T>& max2d,
                        bool training);
  Tensor<T> mask(const Tensor<T>& frames);
  Gate& second_gate() { return cfg_.share_weights ? gate_ : gate2_; }

  AggConfig cfg_;
  int c_ = 0;
  Gate gate_;   // applied to the primary pool (avg, or max under MaxOnly)
  Gate gate2_;  // Combined only: the max-pool branch, unless shared
};

template <typename T>
Tensor<T> set_agg_forward(SetAggCell<T>& cell, const Tensor<T>& frames) {
  return cell.forward(frames);
}

}  // namespace cra
