#include "cra/attention.hpp"

#include "cra/rng.hpp"

namespace cra {

template <typename T>
std::pair<Tensor<T>, std::vector<int>> apply_order(
    const Tensor<T>& rows, const OrderConfig& order,
    std::mt19937_64* shuffle_rng) {
  check<DimensionError>(rows.defined() && rows.shape().size() == 2,
                        "apply_order expects [T x L] rows");
  const int n = rows.shape()[0];
  std::vector<int> perm(n);
  switch (order.kind) {
    case OrderKind::Forward:
      for (int i = 0; i < n; ++i) perm[i] = i;
      break;
    case OrderKind::Reverse:
      for (int i = 0; i < n; ++i) perm[i] = n - 1 - i;
      break;
    case OrderKind::RandomShuffle:
      if (shuffle_rng) {
        perm = random_permutation(*shuffle_rng, n);
      } else {
        for (int i = 0; i < n; ++i) perm[i] = i;
      }
      break;
    case OrderKind::FixedPermutation:
      if (!order.fixed_perm.empty()) {
        check<ConfigError>((int)order.fixed_perm.size() == n,
                           "fixed permutation length ",
                           order.fixed_perm.size(),
                           " does not match row count ", n);
        perm = order.fixed_perm;
      } else {
        perm = seeded_permutation(order.seed, n);
      }
      break;
  }
  std::vector<int> inverse(n);
  for (int i = 0; i < n; ++i) inverse[perm[i]] = i;
  return {permute_rows(rows, perm), inverse};
}

template <typename T>
AttentionModule<T>::AttentionModule(const AttentionConfig& cfg, int c, int h,
                                    int w, std::mt19937_64& rng)
    : cfg_(cfg), c_(c), h_(h), w_(w) {
  check<ConfigError>(cfg.variant != AttentionVariant::None,
                     "attention module requires an active variant");
  check<ConfigError>(cfg.d > 0 && c % cfg.d == 0, "channel count ", c,
                     " is not divisible by reduction ratio ", cfg.d);
  check<ConfigError>(h > 0 && w > 0, "empty feature map ", h, "x", w);
  cd_ = c / cfg.d;
  const int hw = h * w;

  phi_ = Conv2d<T>(c, cd_, 1, 1, 0, false, rng, Init::KaimingUniform);
  phi_bn_ = BatchNorm<T>(cd_);
  switch (cfg.variant) {
    case AttentionVariant::CRA:
      if (cfg.cell == CellKind::BiLSTM)
        bilstm_ = BiLstm<T>(hw, hw, rng);
      else
        lstm_ = LstmCell<T>(hw, hw, rng);
      break;
    case AttentionVariant::SRA:
      if (cfg.cell == CellKind::BiLSTM)
        bilstm_ = BiLstm<T>(cd_, cd_, rng);
      else
        lstm_ = LstmCell<T>(cd_, cd_, rng);
      break;
    case AttentionVariant::CA:
      mid_conv_ = Conv2d<T>(cd_, cd_, 3, 1, 1, false, rng,
                            Init::KaimingUniform);
      mid_bn_ = BatchNorm<T>(cd_);
      break;
    case AttentionVariant::None:
      break;
  }
  psi_ = Conv2d<T>(cd_, c, 1, 1, 0, true, rng, Init::XavierUniform);
  if (!cfg.order.fixed_perm.empty())
    check<ConfigError>((int)cfg.order.fixed_perm.size() == rows(),
                       "fixed permutation length ", cfg.order.fixed_perm.size(),
                       " does not match sequence length ", rows());
  shuffle_rng_ = make_rng(cfg.order.seed, 0x5ffu);
}

template <typename T>
int AttentionModule<T>::rows() const {
  return cfg_.variant == AttentionVariant::SRA ? h_ * w_ : cd_;
}

template <typename T>
Tensor<T> AttentionModule<T>::forward(const Tensor<T>& x, bool training,
                                      Tensor<T>* mask_out) {
  return forward_with_order(x, training, cfg_.order, mask_out);
}

template <typename T>
Tensor<T> AttentionModule<T>::forward_with_order(const Tensor<T>& x,
                                                 bool training,
                                                 const OrderConfig& order,
                                                 Tensor<T>* mask_out) {
  check<DimensionError>(x.defined() && x.shape().size() == 3 &&
                            x.shape()[0] == c_ && x.shape()[1] == h_ &&
                            x.shape()[2] == w_,
                        "attention expects [", c_, "x", h_, "x", w_,
                        "], got ", x.defined() ? shape_str(x.shape()) : "?");
  const int hw = h_ * w_;
  Tensor<T> x4 = reshape(x, {1, c_, h_, w_});
  Tensor<T> emb = relu(phi_bn_.forward(phi_.forward(x4), training));

  Tensor<T> hidden4;  // [1 x c/d x h x w], pre-sigmoid embedding
  if (cfg_.variant == AttentionVariant::CA) {
    hidden4 = relu(mid_bn_.forward(mid_conv_.forward(emb), training));
  } else {
    // Channel slice i, flattened row-major, is row i of the sequence.
    Tensor<T> seq = reshape(emb, {cd_, hw});
    if (cfg_.variant == AttentionVariant::SRA) seq = transpose2d(seq);
    std::mt19937_64* stream = training ? &shuffle_rng_ : nullptr;
    auto [ordered, inverse] = apply_order(seq, order, stream);
    Tensor<T> states = cfg_.cell == CellKind::BiLSTM
                           ? bilstm_.forward(ordered)
                           : lstm_forward(lstm_, ordered);
    Tensor<T> restored = permute_rows(states, inverse);
    if (cfg_.variant == AttentionVariant::SRA)
      restored = transpose2d(restored);
    hidden4 = reshape(restored, {1, cd_, h_, w_});
  }

  Tensor<T> mask = sigmoid(psi_.forward(hidden4));
  if (mask_out) *mask_out = reshape(mask, {c_, h_, w_});
  return reshape(mul(mask, x4), {c_, h_, w_});
}

template <typename T>
void AttentionModule<T>::collect(const std::string& prefix, ParamMap<T>& out) {
  phi_.collect(prefix + ".phi", out);
  phi_bn_.collect(prefix + ".phi_bn", out);
  switch (cfg_.variant) {
    case AttentionVariant::CRA:
    case AttentionVariant::SRA:
      if (cfg_.cell == CellKind::BiLSTM)
        bilstm_.collect(prefix + ".cell", out);
      else
        lstm_.collect(prefix + ".cell", out);
      break;
    case AttentionVariant::CA:
      mid_conv_.collect(prefix + ".mid", out);
      mid_bn_.collect(prefix + ".mid_bn", out);
      break;
    case AttentionVariant::None:
      break;
  }
  psi_.collect(prefix + ".psi", out);
}

template <typename T>
void AttentionModule<T>::collect_buffers(const std::string& prefix,
                                         BufferMap<T>& out) {
  phi_bn_.collect_buffers(prefix + ".phi_bn", out);
  if (cfg_.variant == AttentionVariant::CA)
    mid_bn_.collect_buffers(prefix + ".mid_bn", out);
}

template <typename T>
int64_t AttentionModule<T>::param_count() const {
  int64_t total = phi_.param_count() + phi_bn_.param_count() +
                  psi_.param_count();
  switch (cfg_.variant) {
    case AttentionVariant::CRA:
    case AttentionVariant::SRA:
      total += cfg_.cell == CellKind::BiLSTM ? bilstm_.param_count()
                                             : lstm_.param_count();
      break;
    case AttentionVariant::CA:
      total += mid_conv_.param_count() + mid_bn_.param_count();
      break;
    case AttentionVariant::None:
      break;
  }
  return total;
}

template <typename T>
int64_t AttentionModule<T>::flop_count() const {
  int64_t total = phi_.flop_count(1, h_, w_) + psi_.flop_count(1, h_, w_);
  switch (cfg_.variant) {
    case AttentionVariant::CRA:
    case AttentionVariant::SRA: {
      const int64_t steps = rows();
      total += cfg_.cell == CellKind::BiLSTM ? bilstm_.flop_count(steps)
                                             : lstm_.flop_count(steps);
      break;
    }
    case AttentionVariant::CA:
      total += mid_conv_.flop_count(1, h_, w_);
      break;
    case AttentionVariant::None:
      break;
  }
  return total;
}

#define CRA_INSTANTIATE_ATTENTION(T)                            \
  template std::pair<Tensor<T>, std::vector<int>> apply_order<T>( \
      const Tensor<T>&, const OrderConfig&, std::mt19937_64*);  \
  template class AttentionModule<T>;

CRA_INSTANTIATE_ATTENTION(float)
CRA_INSTANTIATE_ATTENTION(double)

}  // namespace cra
