#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cra/aggregation.hpp"
#include "cra/attention.hpp"
#include "cra/checkpoint.hpp"
#include "cra/layers.hpp"
#include "cra/tensor.hpp"

namespace cra {

// Backbone stages are conv3x3(stride 2, pad 1) + BN + ReLU; an attention
// module may sit after the activation of any non-final stage. Placement k
// means "after stage k", 1-based.
struct ModelConfig {
  int in_channels = 3;
  int in_h = 64, in_w = 32;
  std::vector<int> stages = {16, 32, 64, 128};
  std::vector<int> attach = {2};
  AttentionConfig attention;
  AggConfig agg;
  int dv = 128;
  int num_ids = 10;
  int t = 4;
};

struct CostReport {
  std::string name;
  int64_t params = 0;
  int64_t flops = 0;  // per clip forward of t frames at the declared shape
};

template <typename T>
struct ClipBatch {
  Tensor<T> frames;  // [B x t x C x H x W]
  std::vector<int> identities;
  std::vector<int> cameras;
};

template <typename T>
class ReidModel {
 public:
  ReidModel(const ModelConfig& cfg, uint64_t seed);

  // Frames [N x C x H x W] through the backbone (+ attached attention, per
  // frame) and global average pooling, giving one row per frame [N x c].
  Tensor<T> frame_features(const Tensor<T>& frames, bool training);
  // Clip batch [B x t x C x H x W] -> embeddings [B x D_v].
  Tensor<T> embed_batch(const Tensor<T>& clips, bool training);
  // One clip [t x C x H x W] -> its embedding [D_v].
  Tensor<T> embed_clip(const Tensor<T>& clip, bool training = false);
  // Raw classifier logits for embeddings [D_v] -> [num_ids] (or batched
  // [B x D_v] -> [B x num_ids]).
  Tensor<T> classify(const Tensor<T>& embedding);

  void collect(ParamMap<T>& out);
  void collect_buffers(BufferMap<T>& out);
  void attach_all(Graph<T>& graph);
  // Per-component parameter and FLOP counts; attention rows are named
  // "attention.p<k>".
  std::vector<CostReport> count_cost() const;
  int64_t param_count() const;

  const ModelConfig& config() const { return cfg_; }
  AttentionModule<T>* attention_at(int placement);
  // Eval-mode feature maps of one frame [C x H x W] immediately before and
  // after the attention module at the given placement.
  std::pair<Tensor<T>, Tensor<T>> attention_maps(const Tensor<T>& frame,
                                                 int placement);
  // Spatial extents and channel width at each stage output, index 0 = input.
  const std::vector<Shape>& stage_shapes() const { return stage_shapes_; }

 private:
  ModelConfig cfg_;
  std::vector<Conv2d<T>> convs_;
  std::vector<BatchNorm<T>> norms_;
  std::vector<std::unique_ptr<AttentionModule<T>>> attn_;  // per placement
  SetAggCell<T> agg_;
  Linear<T> head_;
  BatchNorm<T> head_norm_;
  Linear<T> classifier_;
  std::vector<Shape> stage_shapes_;  // [c, h, w] per stage boundary
};

template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(T lr, T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Fixes the parameter order and zeroes the moment state.
  void attach(const ParamMap<T>& params);
  void zero_grad();
  void step();

  void set_lr(T lr) { lr_ = lr; }
  T lr() const { return lr_; }
  int64_t steps() const { return step_count_; }
  void set_steps(int64_t n) { step_count_ = n; }
  // Moment buffers for checkpointing, named "opt.m.<param>" / "opt.v.<param>".
  BufferMap<T> state_buffers();

 private:
  T lr_ = T(1e-3), beta1_ = T(0.9), beta2_ = T(0.999), eps_ = T(1e-8);
  ParamMap<T> params_;
  std::vector<std::vector<T>> m_, v_;
  int64_t step_count_ = 0;
};

template <typename T>
struct StepReport {
  T triplet = T(0);
  T softmax = T(0);
  T total = T(0);
  int64_t step = 0;
};

// One optimization step: forward, triplet + cross-entropy, backward, Adam
// update. A non-finite loss raises a divergence error naming the step.
template <typename T>
StepReport<T> train_step(ReidModel<T>& model, const ClipBatch<T>& batch,
                         Adam<T>& optimizer, T margin,
                         bool squared_distance = false);

// Model + optimizer + bookkeeping round-trip through the checkpoint format.
template <typename T>
void save_state(const std::string& prefix, ReidModel<T>& model,
                Adam<T>* optimizer, int64_t epoch);
template <typename T>
int64_t load_state(const std::string& prefix, ReidModel<T>& model,
                   Adam<T>* optimizer);  // returns the stored epoch

}  // namespace cra
