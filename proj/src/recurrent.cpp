#include "cra/recurrent.hpp"

namespace cra {

template <typename T>
LstmCell<T>::LstmCell(int in_, int hid_, std::mt19937_64& rng)
    : in(in_), hid(hid_) {
  check<ConfigError>(in > 0 && hid > 0, "lstm extents must be positive, got ",
                     in, "/", hid);
  w_ih = Tensor<T>({4 * hid, in});
  w_hh = Tensor<T>({4 * hid, hid});
  bias = Tensor<T>({4 * hid});
  init_weight(w_ih, in, 4 * hid, Init::XavierUniform, rng);
  init_weight(w_hh, hid, 4 * hid, Init::XavierUniform, rng);
  // Forget-gate bias starts at 1 so early training does not flush the cell.
  for (int i = hid; i < 2 * hid; ++i) bias.vals()[i] = T(1);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> LstmCell<T>::step(const Tensor<T>& x_row,
                                                  const Tensor<T>& h,
                                                  const Tensor<T>& c) const {
  Tensor<T> gates =
      add(linear_op(x_row, w_ih, bias), linear_op(h, w_hh, Tensor<T>()));
  Tensor<T> i = sigmoid(slice_cols(gates, 0, hid));
  Tensor<T> f = sigmoid(slice_cols(gates, hid, 2 * hid));
  Tensor<T> g = tanh(slice_cols(gates, 2 * hid, 3 * hid));
  Tensor<T> o = sigmoid(slice_cols(gates, 3 * hid, 4 * hid));
  Tensor<T> c_next = add(mul(f, c), mul(i, g));
  Tensor<T> h_next = mul(o, tanh(c_next));
  return {h_next, c_next};
}

template <typename T>
void LstmCell<T>::collect(const std::string& prefix, ParamMap<T>& out) {
  out.emplace_back(prefix + ".w_ih", &w_ih);
  out.emplace_back(prefix + ".w_hh", &w_hh);
  out.emplace_back(prefix + ".bias", &bias);
}

template <typename T>
int64_t LstmCell<T>::param_count() const {
  return lstm_param_count(in, hid, false);
}

template <typename T>
int64_t LstmCell<T>::flop_count(int64_t steps) const {
  // Gate matmuls at 2 flops per MAC plus the gate bias adds.
  return steps * (2ll * 4 * hid * (in + hid) + 4ll * hid);
}

template <typename T>
Tensor<T> lstm_forward(const LstmCell<T>& cell, const Tensor<T>& seq,
                       const Tensor<T>& h0, const Tensor<T>& c0) {
  check<DimensionError>(seq.defined() && seq.shape().size() == 2,
                        "lstm_forward expects [T x in]");
  const int steps = seq.shape()[0];
  check<DimensionError>(steps >= 1, "lstm_forward needs at least one step");
  check<DimensionError>(seq.shape()[1] == cell.in, "sequence width ",
                        seq.shape()[1], " does not match cell input ",
                        cell.in);
  Tensor<T> h = h0.defined() ? reshape(h0, {1, cell.hid})
                             : Tensor<T>({1, cell.hid});
  Tensor<T> c = c0.defined() ? reshape(c0, {1, cell.hid})
                             : Tensor<T>({1, cell.hid});
  std::vector<Tensor<T>> outputs;
  outputs.reserve(steps);
  for (int t = 0; t < steps; ++t) {
    Tensor<T> x_row = reshape(select_axis0(seq, t), {1, cell.in});
    auto [h_next, c_next] = cell.step(x_row, h, c);
    h = h_next;
    c = c_next;
    outputs.push_back(reshape(h, {cell.hid}));
  }
  return stack_axis0(outputs);
}

template <typename T>
BiLstm<T>::BiLstm(int in, int hid, std::mt19937_64& rng)
    : fwd(in, hid, rng), bwd(in, hid, rng) {}

template <typename T>
Tensor<T> BiLstm<T>::forward(const Tensor<T>& seq) const {
  Tensor<T> out_f = lstm_forward(fwd, seq);
  const int steps = seq.shape()[0];
  std::vector<int> rev(steps);
  for (int t = 0; t < steps; ++t) rev[t] = steps - 1 - t;
  Tensor<T> out_b = lstm_forward(bwd, permute_rows(seq, rev));
  return add(out_f, permute_rows(out_b, rev));
}

template <typename T>
void BiLstm<T>::collect(const std::string& prefix, ParamMap<T>& out) {
  fwd.collect(prefix + ".fwd", out);
  bwd.collect(prefix + ".bwd", out);
}

int64_t lstm_param_count(int in, int hid, bool bidirectional) {
  check<ConfigError>(in > 0 && hid > 0, "lstm extents must be positive");
  const int64_t one = 4ll * ((int64_t)in * hid + (int64_t)hid * hid + hid);
  return bidirectional ? 2 * one : one;
}

#define CRA_INSTANTIATE_RECURRENT(T)                                      \
  template struct LstmCell<T>;                                            \
  template struct BiLstm<T>;                                              \
  template Tensor<T> lstm_forward<T>(const LstmCell<T>&, const Tensor<T>&, \
                                     const Tensor<T>&, const Tensor<T>&);

CRA_INSTANTIATE_RECURRENT(float)
CRA_INSTANTIATE_RECURRENT(double)

}  // namespace cra
