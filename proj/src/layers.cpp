#include "cra/layers.hpp"

#include <cmath>

#include "cra/rng.hpp"

namespace cra {

template <typename T>
void init_weight(Tensor<T>& w, int fan_in, int fan_out, Init init,
                 std::mt19937_64& rng) {
  check<ConfigError>(fan_in > 0 && fan_out > 0, "invalid fan sizes ", fan_in,
                     "/", fan_out);
  const T bound = init == Init::KaimingUniform
                      ? std::sqrt(T(6) / T(fan_in))
                      : std::sqrt(T(6) / T(fan_in + fan_out));
  fill_uniform(rng, w.vals().data(), w.numel(), -bound, bound);
}

template <typename T>
Linear<T>::Linear(int in_, int out_, bool with_bias, std::mt19937_64& rng,
                  Init init)
    : in(in_), out(out_) {
  check<ConfigError>(in > 0 && out > 0, "linear extents must be positive, ",
                     "got ", in, "x", out);
  w = Tensor<T>({out, in});
  init_weight(w, in, out, init, rng);
  if (with_bias) b = Tensor<T>({out});
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, ParamMap<T>& out_map) {
  out_map.emplace_back(prefix + ".w", &w);
  if (b.defined()) out_map.emplace_back(prefix + ".b", &b);
}

template <typename T>
int64_t Linear<T>::param_count() const {
  return (int64_t)out * in + (b.defined() ? out : 0);
}

template <typename T>
int64_t Linear<T>::flop_count(int64_t rows) const {
  return rows * (2ll * out * in + (b.defined() ? out : 0));
}

template <typename T>
Conv2d<T>::Conv2d(int in_c_, int out_c_, int kernel_, int stride_, int pad_,
                  bool with_bias, std::mt19937_64& rng, Init init)
    : in_c(in_c_), out_c(out_c_), kernel(kernel_), stride(stride_), pad(pad_) {
  check<ConfigError>(in_c > 0 && out_c > 0 && kernel > 0 && stride > 0 &&
                         pad >= 0,
                     "invalid conv shape ", in_c, "->", out_c, " k", kernel);
  w = Tensor<T>({out_c, in_c, kernel, kernel});
  init_weight(w, in_c * kernel * kernel, out_c * kernel * kernel, init, rng);
  if (with_bias) b = Tensor<T>({out_c});
}

template <typename T>
void Conv2d<T>::collect(const std::string& prefix, ParamMap<T>& out_map) {
  out_map.emplace_back(prefix + ".w", &w);
  if (b.defined()) out_map.emplace_back(prefix + ".b", &b);
}

template <typename T>
int64_t Conv2d<T>::param_count() const {
  return (int64_t)out_c * in_c * kernel * kernel + (b.defined() ? out_c : 0);
}

template <typename T>
int64_t Conv2d<T>::flop_count(int64_t batch, int out_h, int out_w) const {
  const int64_t per_pixel =
      2ll * in_c * kernel * kernel + (b.defined() ? 1 : 0);
  return batch * out_c * out_h * out_w * per_pixel;
}

template <typename T>
BatchNorm<T>::BatchNorm(int channels_, T eps_, T momentum_)
    : eps(eps_), momentum(momentum_), channels(channels_) {
  check<ConfigError>(channels > 0, "batchnorm needs positive channel count");
  check<ConfigError>(eps > T(0), "batchnorm epsilon must be positive, got ",
                     eps);
  gamma = Tensor<T>({channels}, T(1));
  beta = Tensor<T>({channels});
  running_mean.assign(channels, T(0));
  running_var.assign(channels, T(1));
}

template <typename T>
void BatchNorm<T>::collect(const std::string& prefix, ParamMap<T>& out) {
  out.emplace_back(prefix + ".gamma", &gamma);
  out.emplace_back(prefix + ".beta", &beta);
}

template <typename T>
void BatchNorm<T>::collect_buffers(const std::string& prefix,
                                   BufferMap<T>& out) {
  out.emplace_back(prefix + ".running_mean", &running_mean);
  out.emplace_back(prefix + ".running_var", &running_var);
}

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma,
                    const Tensor<T>& beta, std::vector<T>& running_mean,
                    std::vector<T>& running_var, T momentum, T eps,
                    bool training) {
  check<ConfigError>(eps > T(0), "batchnorm epsilon must be positive, got ",
                     eps);
  const Shape& xs = x.shape();
  check<DimensionError>(xs.size() == 2 || xs.size() == 4,
                        "batchnorm expects [n,c] or [n,c,h,w], got ",
                        shape_str(xs));
  const int n = xs[0], c = xs[1];
  const int64_t spatial = x.numel() / ((int64_t)n * c);
  check<DimensionError>(gamma.numel() == c && beta.numel() == c &&
                            (int)running_mean.size() == c &&
                            (int)running_var.size() == c,
                        "batchnorm parameter width does not match ", c,
                        " channels");
  Graph<T>* g = Graph<T>::owner({&x, &gamma, &beta});
  Tensor<T> y = detail::make_out(x.shape(), g);

  const T* xv = x.vals().data();
  const T* gv = gamma.vals().data();
  const T* bv = beta.vals().data();
  T* yv = y.vals().data();
  const int64_t m = (int64_t)n * spatial;

  std::vector<T> mean(c), inv_std(c);
  std::vector<T> xhat(g ? x.numel() : 0);

  auto for_channel = [&](int ch, auto&& fn) {
    for (int b = 0; b < n; ++b) {
      const int64_t base = ((int64_t)b * c + ch) * spatial;
      for (int64_t s = 0; s < spatial; ++s) fn(base + s);
    }
  };

  for (int ch = 0; ch < c; ++ch) {
    T mu, var;
    if (training) {
      T acc = T(0);
      for_channel(ch, [&](int64_t i) { acc += xv[i]; });
      mu = acc / T(m);
      T vacc = T(0);
      for_channel(ch, [&](int64_t i) {
        const T d = xv[i] - mu;
        vacc += d * d;
      });
      var = vacc / T(m);
      if (g) {
        running_mean[ch] = (T(1) - momentum) * running_mean[ch] + momentum * mu;
        running_var[ch] = (T(1) - momentum) * running_var[ch] + momentum * var;
      }
    } else {
      mu = running_mean[ch];
      var = running_var[ch];
    }
    const T s = T(1) / std::sqrt(var + eps);
    mean[ch] = mu;
    inv_std[ch] = s;
    for_channel(ch, [&](int64_t i) {
      const T xh = (xv[i] - mu) * s;
      if (!xhat.empty()) xhat[i] = xh;
      yv[i] = gv[ch] * xh + bv[ch];
    });
  }

  if (g) {
    auto xi = x.impl, gi = gamma.impl, bi = beta.impl, yi = y.impl;
    g->record(yi, {xi, gi, bi},
              [xi, gi, bi, yi, xhat = std::move(xhat), inv_std, n, c, spatial,
               m, training] {
      const T* gy = yi->grad.data();
      auto for_channel2 = [&](int ch, auto&& fn) {
        for (int b = 0; b < n; ++b) {
          const int64_t base = ((int64_t)b * c + ch) * spatial;
          for (int64_t s = 0; s < spatial; ++s) fn(base + s);
        }
      };
      const bool want_x = Graph<T>::wants_grad(xi);
      const bool want_g = Graph<T>::wants_grad(gi);
      const bool want_b = Graph<T>::wants_grad(bi);
      T* dx = want_x ? xi->ensure_grad().data() : nullptr;
      T* dg = want_g ? gi->ensure_grad().data() : nullptr;
      T* db = want_b ? bi->ensure_grad().data() : nullptr;
      for (int ch = 0; ch < c; ++ch) {
        T sum_gy = T(0), sum_gy_xhat = T(0);
        for_channel2(ch, [&](int64_t i) {
          sum_gy += gy[i];
          sum_gy_xhat += gy[i] * xhat[i];
        });
        if (dg) dg[ch] += sum_gy_xhat;
        if (db) db[ch] += sum_gy;
        if (!dx) continue;
        const T gscale = gi->value[ch] * inv_std[ch];
        if (training) {
          const T mean_gy = sum_gy / T(m);
          const T mean_gy_xhat = sum_gy_xhat / T(m);
          for_channel2(ch, [&](int64_t i) {
            dx[i] += gscale * (gy[i] - mean_gy - xhat[i] * mean_gy_xhat);
          });
        } else {
          for_channel2(ch, [&](int64_t i) { dx[i] += gscale * gy[i]; });
        }
      }
    });
  }
  return y;
}

#define CRA_INSTANTIATE_LAYERS(T)                                          \
  template void init_weight<T>(Tensor<T>&, int, int, Init,                 \
                               std::mt19937_64&);                          \
  template struct Linear<T>;                                               \
  template struct Conv2d<T>;                                               \
  template struct BatchNorm<T>;                                            \
  template Tensor<T> batchnorm<T>(const Tensor<T>&, const Tensor<T>&,      \
                                  const Tensor<T>&, std::vector<T>&,       \
                                  std::vector<T>&, T, T, bool);

CRA_INSTANTIATE_LAYERS(float)
CRA_INSTANTIATE_LAYERS(double)

}  // namespace cra
