#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cra/tensor.hpp"

namespace cra {

// Named views over a module's trainable tensors and its non-trainable
// buffers (batchnorm running statistics). Used by the optimizer, the
// gradient checker and the checkpoint writer.
template <typename T>
using ParamMap = std::vector<std::pair<std::string, Tensor<T>*>>;
template <typename T>
using BufferMap = std::vector<std::pair<std::string, std::vector<T>*>>;

enum class Init { XavierUniform, KaimingUniform };

template <typename T>
void init_weight(Tensor<T>& w, int fan_in, int fan_out, Init init,
                 std::mt19937_64& rng);

// Batch normalization over the channel axis: input [n, c] or [n, c, h, w],
// statistics per channel across every other axis. Train mode uses biased
// batch statistics; running averages advance only on recorded (graph-
// attached) train forwards, so finite-difference probes of a training loss
// do not drift the buffers.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma,
                    const Tensor<T>& beta, std::vector<T>& running_mean,
                    std::vector<T>& running_var, T momentum, T eps,
                    bool training);

template <typename T>
struct Linear {
  Linear() = default;
  Linear(int in, int out, bool with_bias, std::mt19937_64& rng,
         Init init = Init::XavierUniform);

  Tensor<T> forward(const Tensor<T>& x) const { return linear_op(x, w, b); }
  void collect(const std::string& prefix, ParamMap<T>& out);
  int64_t param_count() const;
  int64_t flop_count(int64_t rows) const;

  Tensor<T> w, b;
  int in = 0, out = 0;
};

template <typename T>
struct Conv2d {
  Conv2d() = default;
  Conv2d(int in_c, int out_c, int kernel, int stride, int pad, bool with_bias,
         std::mt19937_64& rng, Init init = Init::KaimingUniform);

  Tensor<T> forward(const Tensor<T>& x) const {
    return conv2d(x, w, b, stride, pad);
  }
  void collect(const std::string& prefix, ParamMap<T>& out);
  int64_t param_count() const;
  int64_t flop_count(int64_t batch, int out_h, int out_w) const;
  int out_extent(int in_extent) const {
    return (in_extent + 2 * pad - kernel) / stride + 1;
  }

  Tensor<T> w, b;
  int in_c = 0, out_c = 0, kernel = 0, stride = 1, pad = 0;
};

template <typename T>
struct BatchNorm {
  BatchNorm() = default;
  explicit BatchNorm(int channels, T eps = T(1e-5), T momentum = T(0.1));

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    return batchnorm(x, gamma, beta, running_mean, running_var, momentum, eps,
                     training);
  }
  void collect(const std::string& prefix, ParamMap<T>& out);
  void collect_buffers(const std::string& prefix, BufferMap<T>& out);
  int64_t param_count() const { return 2 * (int64_t)channels; }

  Tensor<T> gamma, beta;
  std::vector<T> running_mean, running_var;
  T eps = T(1e-5), momentum = T(0.1);
  int channels = 0;
};

}  // namespace cra
