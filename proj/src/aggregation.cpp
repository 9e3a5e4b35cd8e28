#include "cra/aggregation.hpp"

#include <cmath>

#include "cra/common.hpp"

namespace cra {

template <typename T>
Tensor<T> pool_set(PoolOp op, const Tensor<T>& frames) {
  check<DimensionError>(frames.shape().size() == 2,
                        "pool_set needs a frame matrix, got ",
                        shape_str(frames.shape()));
  check<DimensionError>(frames.shape()[0] >= 1, "pool_set over an empty set");
  return op == PoolOp::Avg ? mean_rows(frames) : max_rows(frames);
}

template <typename T>
SetAggCell<T>::SetAggCell(const AggConfig& cfg, int channels,
                          std::mt19937_64& rng)
    : cfg_(cfg), c_(channels) {
  check<ConfigError>(channels > 0, "aggregation needs a positive width");
  check<ConfigError>(cfg.r > 0 && channels % cfg.r == 0,
                     "reduction factor ", cfg.r, " must divide the width ",
                     channels);
  const int hidden = channels / cfg.r;
  auto build = [&](Gate& gate) {
    gate.squeeze = Linear<T>(channels, hidden, false, rng,
                             Init::KaimingUniform);
    gate.bn = BatchNorm<T>(hidden);
    gate.expand = Linear<T>(hidden, channels, true, rng);
  };
  build(gate_);
  if (cfg_.pooling == PoolKind::Combined && !cfg_.share_weights)
    build(gate2_);
}

template <typename T>
Tensor<T> SetAggCell<T>::run_gate(Gate& gate, const Tensor<T>& pooled,
                                  bool training) {
  Tensor<T> z = relu(gate.bn.forward(gate.squeeze.forward(pooled), training));
  return gate.expand.forward(z);
}

template <typename T>
Tensor<T> SetAggCell<T>::gate_logits(const Tensor<T>& avg2d,
                                     const Tensor<T>& max2d, bool training) {
  switch (cfg_.pooling) {
    case PoolKind::AvgOnly:
      return run_gate(gate_, avg2d, training);
    case PoolKind::MaxOnly:
      return run_gate(gate_, max2d, training);
    case PoolKind::Combined:
      return add(run_gate(gate_, avg2d, training),
                 run_gate(second_gate(), max2d, training));
  }
  throw ConfigError("unknown pooling kind");
}

template <typename T>
Tensor<T> SetAggCell<T>::mask(const Tensor<T>& frames) {
  check<DimensionError>(frames.shape().size() == 2,
                        "aggregation needs a frame matrix, got ",
                        shape_str(frames.shape()));
  check<DimensionError>(frames.shape()[0] >= 1,
                        "aggregation over an empty set");
  check<DimensionError>(frames.shape()[1] == c_, "frame width ",
                        frames.shape()[1], " does not match the cell width ",
                        c_);
  Tensor<T> avg2d = reshape(mean_rows(frames), {1, c_});
  Tensor<T> max2d = reshape(max_rows(frames), {1, c_});
  return sigmoid(reshape(gate_logits(avg2d, max2d, false), {c_}));
}

template <typename T>
Tensor<T> SetAggCell<T>::forward(const Tensor<T>& frames) {
  return mean_rows(mul(frames, mask(frames)));
}

template <typename T>
Tensor<T> SetAggCell<T>::forward_batch(const std::vector<Tensor<T>>& clips,
                                       bool training) {
  check<DimensionError>(!clips.empty(), "aggregation over an empty batch");
  std::vector<Tensor<T>> avgs, maxs;
  avgs.reserve(clips.size());
  maxs.reserve(clips.size());
  for (const Tensor<T>& f : clips) {
    check<DimensionError>(f.shape().size() == 2 && f.shape()[0] >= 1 &&
                              f.shape()[1] == c_,
                          "bad clip feature shape ", shape_str(f.shape()));
    avgs.push_back(mean_rows(f));
    maxs.push_back(max_rows(f));
  }
  Tensor<T> m = sigmoid(gate_logits(stack_axis0(avgs), stack_axis0(maxs),
                                    training));
  std::vector<Tensor<T>> fused;
  fused.reserve(clips.size());
  for (int b = 0; b < (int)clips.size(); ++b)
    fused.push_back(mean_rows(mul(clips[b], select_axis0(m, b))));
  return stack_axis0(fused);
}

template <typename T>
bool SetAggCell<T>::decompose_check(const Tensor<T>& frames, T tol) {
  const std::vector<T> fused = forward(frames).vals();
  const std::vector<T> m = mask(frames).vals();
  const int t = frames.shape()[0];

  // Explicit set-function form: a per-frame map m * f summed over frames in
  // ascending index order, then normalized once at the end.
  std::vector<T> acc(c_, T(0));
  for (int j = 0; j < t; ++j)
    for (int k = 0; k < c_; ++k)
      acc[k] += m[k] * frames.vals()[(int64_t)j * c_ + k];
  for (int k = 0; k < c_; ++k) acc[k] /= T(t);

  for (int k = 0; k < c_; ++k)
    if (!(std::abs(acc[k] - fused[k]) < tol)) return false;
  return true;
}

template <typename T>
void SetAggCell<T>::collect(const std::string& prefix, ParamMap<T>& out) {
  gate_.squeeze.collect(prefix + ".gate1.squeeze", out);
  gate_.bn.collect(prefix + ".gate1.norm", out);
  gate_.expand.collect(prefix + ".gate1.expand", out);
  if (cfg_.pooling == PoolKind::Combined && !cfg_.share_weights) {
    gate2_.squeeze.collect(prefix + ".gate2.squeeze", out);
    gate2_.bn.collect(prefix + ".gate2.norm", out);
    gate2_.expand.collect(prefix + ".gate2.expand", out);
  }
}

template <typename T>
void SetAggCell<T>::collect_buffers(const std::string& prefix,
                                    BufferMap<T>& out) {
  gate_.bn.collect_buffers(prefix + ".gate1.norm", out);
  if (cfg_.pooling == PoolKind::Combined && !cfg_.share_weights)
    gate2_.bn.collect_buffers(prefix + ".gate2.norm", out);
}

template <typename T>
int64_t SetAggCell<T>::param_count() const {
  int64_t per_gate = gate_.squeeze.param_count() + gate_.bn.param_count() +
                     gate_.expand.param_count();
  bool two = cfg_.pooling == PoolKind::Combined && !cfg_.share_weights;
  return per_gate * (two ? 2 : 1);
}

template <typename T>
int64_t SetAggCell<T>::flop_count() const {
  int64_t per_eval =
      gate_.squeeze.flop_count(1) + gate_.expand.flop_count(1);
  return per_eval * (cfg_.pooling == PoolKind::Combined ? 2 : 1);
}

#define CRA_INSTANTIATE_AGG(T)                                               \
  template Tensor<T> pool_set<T>(PoolOp, const Tensor<T>&);                  \
  template class SetAggCell<T>;

CRA_INSTANTIATE_AGG(float)
CRA_INSTANTIATE_AGG(double)

}  // namespace cra
