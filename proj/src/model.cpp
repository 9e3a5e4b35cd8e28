#include "cra/model.hpp"

#include <algorithm>
#include <cmath>

#include "cra/common.hpp"
#include "cra/losses.hpp"
#include "cra/rng.hpp"

namespace cra {

template <typename T>
ReidModel<T>::ReidModel(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  check<ConfigError>(!cfg.stages.empty(), "backbone needs at least one stage");
  check<ConfigError>(cfg.dv > 0, "embedding width must be positive");
  check<ConfigError>(cfg.num_ids >= 1, "classifier needs at least one class");
  check<ConfigError>(cfg.t >= 1, "clips need at least one frame");
  for (int p : cfg.attach)
    check<ConfigError>(p >= 1 && p < (int)cfg.stages.size(),
                       "attention placement ", p,
                       " does not name a non-final backbone stage");

  auto rng = make_rng(seed);
  int c = cfg.in_channels, h = cfg.in_h, w = cfg.in_w;
  stage_shapes_.push_back({c, h, w});
  for (int s = 0; s < (int)cfg.stages.size(); ++s) {
    convs_.emplace_back(c, cfg.stages[s], 3, 2, 1, false, rng);
    norms_.emplace_back(cfg.stages[s]);
    c = cfg.stages[s];
    h = convs_.back().out_extent(h);
    w = convs_.back().out_extent(w);
    check<ConfigError>(h >= 1 && w >= 1, "input ", cfg.in_h, "x", cfg.in_w,
                       " collapses to nothing at stage ", s + 1);
    stage_shapes_.push_back({c, h, w});
  }

  attn_.resize(cfg.stages.size());
  if (cfg.attention.variant != AttentionVariant::None) {
    std::vector<int> attach = cfg.attach;
    std::sort(attach.begin(), attach.end());
    for (int p : attach) {
      const Shape& s = stage_shapes_[p];
      attn_[p] = std::make_unique<AttentionModule<T>>(cfg.attention, s[0],
                                                      s[1], s[2], rng);
    }
  }

  agg_ = SetAggCell<T>(cfg.agg, c, rng);
  head_ = Linear<T>(c, cfg.dv, false, rng, Init::KaimingUniform);
  head_norm_ = BatchNorm<T>(cfg.dv);
  classifier_ = Linear<T>(cfg.dv, cfg.num_ids, false, rng);
}

template <typename T>
AttentionModule<T>* ReidModel<T>::attention_at(int placement) {
  if (placement < 1 || placement >= (int)attn_.size()) return nullptr;
  return attn_[placement].get();
}

template <typename T>
Tensor<T> ReidModel<T>::frame_features(const Tensor<T>& frames,
                                       bool training) {
  check<DimensionError>(frames.shape().size() == 4 &&
                            frames.shape()[1] == cfg_.in_channels &&
                            frames.shape()[2] == cfg_.in_h &&
                            frames.shape()[3] == cfg_.in_w,
                        "frames ", shape_str(frames.shape()),
                        " do not match the configured input ",
                        shape_str({-1, cfg_.in_channels, cfg_.in_h,
                                   cfg_.in_w}));
  const int n = frames.shape()[0];
  Tensor<T> x = frames;
  for (int s = 0; s < (int)convs_.size(); ++s) {
    x = relu(norms_[s].forward(convs_[s].forward(x), training));
    if (s + 1 < (int)attn_.size() && attn_[s + 1]) {
      std::vector<Tensor<T>> gated;
      gated.reserve(n);
      for (int i = 0; i < n; ++i)
        gated.push_back(attn_[s + 1]->forward(select_axis0(x, i), training));
      x = stack_axis0(gated);
    }
  }
  return global_avg_pool(x);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> ReidModel<T>::attention_maps(
    const Tensor<T>& frame, int placement) {
  check<ConfigError>(attention_at(placement) != nullptr,
                     "no attention module at placement ", placement);
  check<DimensionError>(frame.shape().size() == 3, "a frame must be rank 3, "
                        "got ", shape_str(frame.shape()));
  Tensor<T> x = reshape(frame, {1, frame.shape()[0], frame.shape()[1],
                                frame.shape()[2]});
  for (int s = 0; s < placement; ++s)
    x = relu(norms_[s].forward(convs_[s].forward(x), false));
  const Shape& at = stage_shapes_[placement];
  Tensor<T> pre = reshape(x, at);
  Tensor<T> post = attn_[placement]->forward(pre, false);
  return {pre, post};
}

template <typename T>
Tensor<T> ReidModel<T>::embed_batch(const Tensor<T>& clips, bool training) {
  check<DimensionError>(clips.shape().size() == 5, "clip batch must be rank "
                        "5, got ", shape_str(clips.shape()));
  const int b = clips.shape()[0], t = clips.shape()[1];
  check<DimensionError>(t >= 1, "clips need at least one frame");
  Tensor<T> flat = reshape(clips, {b * t, clips.shape()[2], clips.shape()[3],
                                   clips.shape()[4]});
  Tensor<T> feats = frame_features(flat, training);
  std::vector<Tensor<T>> per_clip;
  per_clip.reserve(b);
  for (int i = 0; i < b; ++i)
    per_clip.push_back(slice_rows(feats, i * t, (i + 1) * t));
  Tensor<T> fused = agg_.forward_batch(per_clip, training);
  return relu(head_norm_.forward(head_.forward(fused), training));
}

template <typename T>
Tensor<T> ReidModel<T>::embed_clip(const Tensor<T>& clip, bool training) {
  check<DimensionError>(clip.shape().size() == 4, "a clip must be rank 4, "
                        "got ", shape_str(clip.shape()));
  Tensor<T> feats = frame_features(clip, training);
  Tensor<T> fused = reshape(agg_.forward(feats), {1, stage_shapes_.back()[0]});
  Tensor<T> emb = relu(head_norm_.forward(head_.forward(fused), training));
  return reshape(emb, {cfg_.dv});
}

template <typename T>
Tensor<T> ReidModel<T>::classify(const Tensor<T>& embedding) {
  const Shape& s = embedding.shape();
  check<DimensionError>((s.size() == 1 && s[0] == cfg_.dv) ||
                            (s.size() == 2 && s[1] == cfg_.dv),
                        "embedding ", shape_str(s), " does not match width ",
                        cfg_.dv);
  if (s.size() == 2) return classifier_.forward(embedding);
  return reshape(classifier_.forward(reshape(embedding, {1, cfg_.dv})),
                 {cfg_.num_ids});
}

template <typename T>
void ReidModel<T>::collect(ParamMap<T>& out) {
  for (int s = 0; s < (int)convs_.size(); ++s) {
    const std::string stage = "stage" + std::to_string(s + 1);
    convs_[s].collect(stage + ".conv", out);
    norms_[s].collect(stage + ".norm", out);
  }
  for (int p = 0; p < (int)attn_.size(); ++p)
    if (attn_[p]) attn_[p]->collect("attention.p" + std::to_string(p), out);
  agg_.collect("agg", out);
  head_.collect("head", out);
  head_norm_.collect("head_norm", out);
  classifier_.collect("classifier", out);
}

template <typename T>
void ReidModel<T>::collect_buffers(BufferMap<T>& out) {
  for (int s = 0; s < (int)norms_.size(); ++s)
    norms_[s].collect_buffers("stage" + std::to_string(s + 1) + ".norm", out);
  for (int p = 0; p < (int)attn_.size(); ++p)
    if (attn_[p])
      attn_[p]->collect_buffers("attention.p" + std::to_string(p), out);
  agg_.collect_buffers("agg", out);
  head_norm_.collect_buffers("head_norm", out);
}

template <typename T>
void ReidModel<T>::attach_all(Graph<T>& graph) {
  ParamMap<T> params;
  collect(params);
  for (auto& [name, tensor] : params) graph.attach(*tensor);
}

template <typename T>
std::vector<CostReport> ReidModel<T>::count_cost() const {
  std::vector<CostReport> rows;
  const int64_t t = cfg_.t;
  for (int s = 0; s < (int)convs_.size(); ++s) {
    const Shape& out = stage_shapes_[s + 1];
    rows.push_back({"stage" + std::to_string(s + 1),
                    convs_[s].param_count() + norms_[s].param_count(),
                    convs_[s].flop_count(t, out[1], out[2])});
  }
  for (int p = 0; p < (int)attn_.size(); ++p)
    if (attn_[p])
      rows.push_back({"attention.p" + std::to_string(p),
                      attn_[p]->param_count(), t * attn_[p]->flop_count()});
  rows.push_back({"agg", agg_.param_count(), agg_.flop_count()});
  rows.push_back({"head", head_.param_count() + head_norm_.param_count(),
                  head_.flop_count(1)});
  rows.push_back({"classifier", classifier_.param_count(),
                  classifier_.flop_count(1)});
  return rows;
}

template <typename T>
int64_t ReidModel<T>::param_count() const {
  int64_t total = 0;
  for (const CostReport& row : count_cost()) total += row.params;
  return total;
}

template <typename T>
void Adam<T>::attach(const ParamMap<T>& params) {
  params_ = params;
  m_.assign(params.size(), {});
  v_.assign(params.size(), {});
  for (size_t i = 0; i < params.size(); ++i) {
    m_[i].assign(params[i].second->numel(), T(0));
    v_[i].assign(params[i].second->numel(), T(0));
  }
  step_count_ = 0;
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& [name, tensor] : params_) tensor->zero_grad();
}

template <typename T>
void Adam<T>::step() {
  check<ContractError>(!params_.empty(), "optimizer has no parameters");
  ++step_count_;
  const T bc1 = T(1) - std::pow(beta1_, (T)step_count_);
  const T bc2 = T(1) - std::pow(beta2_, (T)step_count_);
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor<T>& p = *params_[i].second;
    const std::vector<T>& grad = p.impl->grad;
    T* pv = p.vals().data();
    T* m = m_[i].data();
    T* v = v_[i].data();
    const int64_t n = p.numel();
    for (int64_t j = 0; j < n; ++j) {
      const T g = grad.empty() ? T(0) : grad[j];
      m[j] = beta1_ * m[j] + (T(1) - beta1_) * g;
      v[j] = beta2_ * v[j] + (T(1) - beta2_) * g * g;
      pv[j] -= lr_ * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
    }
  }
}

template <typename T>
BufferMap<T> Adam<T>::state_buffers() {
  BufferMap<T> out;
  for (size_t i = 0; i < params_.size(); ++i) {
    out.emplace_back("opt.m." + params_[i].first, &m_[i]);
    out.emplace_back("opt.v." + params_[i].first, &v_[i]);
  }
  return out;
}

template <typename T>
StepReport<T> train_step(ReidModel<T>& model, const ClipBatch<T>& batch,
                         Adam<T>& optimizer, T margin,
                         bool squared_distance) {
  check<DimensionError>(batch.frames.shape().size() == 5 &&
                            (int)batch.identities.size() ==
                                batch.frames.shape()[0],
                        "batch labels do not match its clips");
  Graph<T> graph;
  model.attach_all(graph);
  Tensor<T> emb = model.embed_batch(batch.frames, true);
  Tensor<T> logits = model.classify(emb);
  Tensor<T> tri = triplet_batch_hard(emb, batch.identities, margin,
                                     squared_distance);
  Tensor<T> sof = cross_entropy(logits, batch.identities);
  Tensor<T> total = total_loss(tri, sof);

  StepReport<T> report;
  report.triplet = tri.item();
  report.softmax = sof.item();
  report.total = total.item();
  report.step = optimizer.steps() + 1;
  check<DivergenceError>(std::isfinite((double)report.total),
                         "non-finite loss at step ", report.step);

  optimizer.zero_grad();
  graph.backward(total);
  optimizer.step();
  return report;
}

template <typename T>
void save_state(const std::string& prefix, ReidModel<T>& model,
                Adam<T>* optimizer, int64_t epoch) {
  CheckpointWriter writer(prefix);
  ParamMap<T> params;
  model.collect(params);
  for (auto& [name, tensor] : params)
    writer.add(name, tensor->shape(), tensor->vals().data());
  BufferMap<T> buffers;
  model.collect_buffers(buffers);
  for (auto& [name, buf] : buffers)
    writer.add(name, {(int)buf->size()}, buf->data());
  if (optimizer) {
    for (auto& [name, buf] : optimizer->state_buffers())
      writer.add(name, {(int)buf->size()}, buf->data());
    const double meta[2] = {(double)epoch, (double)optimizer->steps()};
    writer.add("meta", {2}, meta);
  } else {
    const double meta[2] = {(double)epoch, 0.0};
    writer.add("meta", {2}, meta);
  }
  writer.finish();
}

template <typename T>
int64_t load_state(const std::string& prefix, ReidModel<T>& model,
                   Adam<T>* optimizer) {
  CheckpointReader reader(prefix);
  ParamMap<T> params;
  model.collect(params);
  for (auto& [name, tensor] : params)
    reader.read_into(name, tensor->shape(), tensor->vals().data());
  BufferMap<T> buffers;
  model.collect_buffers(buffers);
  for (auto& [name, buf] : buffers)
    reader.read_into(name, {(int)buf->size()}, buf->data());
  double meta[2] = {0, 0};
  reader.read_into("meta", {2}, meta);
  if (optimizer) {
    for (auto& [name, buf] : optimizer->state_buffers())
      reader.read_into(name, {(int)buf->size()}, buf->data());
    optimizer->set_steps((int64_t)meta[1]);
  }
  return (int64_t)meta[0];
}

#define CRA_INSTANTIATE_MODEL(T)                                             \
  template class ReidModel<T>;                                               \
  template class Adam<T>;                                                    \
  template StepReport<T> train_step<T>(ReidModel<T>&, const ClipBatch<T>&,   \
                                       Adam<T>&, T, bool);                   \
  template void save_state<T>(const std::string&, ReidModel<T>&, Adam<T>*,   \
                              int64_t);                                      \
  template int64_t load_state<T>(const std::string&, ReidModel<T>&,          \
                                 Adam<T>*);

CRA_INSTANTIATE_MODEL(float)
CRA_INSTANTIATE_MODEL(double)

}  // namespace cra
