#include "cra/kernels.hpp"

#include "cra/threads.hpp"

namespace cra::kernels {

namespace serial {

template <typename T>
void matmul_nn(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + (int64_t)i * k;
    T* crow = c + (int64_t)i * n;
    for (int p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + (int64_t)p * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void matmul_nt(const T* g, const T* b, T* c, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const T* grow = g + (int64_t)i * n;
    T* crow = c + (int64_t)i * k;
    for (int l = 0; l < k; ++l) {
      const T* brow = b + (int64_t)l * n;
      T acc = T(0);
      for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
      crow[l] += acc;
    }
  }
}

template <typename T>
void matmul_tn(const T* a, const T* g, T* c, int m, int k, int n) {
  for (int l = 0; l < k; ++l) {
    T* crow = c + (int64_t)l * n;
    for (int i = 0; i < m; ++i) {
      const T av = a[(int64_t)i * k + l];
      const T* grow = g + (int64_t)i * n;
      for (int j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* y, int batch,
                    int ic, int h, int wd, int oc, int kh, int kw, int stride,
                    int pad, int oh, int ow) {
  for (int b = 0; b < batch; ++b) {
    for (int o = 0; o < oc; ++o) {
      T* yplane = y + ((int64_t)b * oc + o) * oh * ow;
      const T* wbase = w + (int64_t)o * ic * kh * kw;
      for (int r = 0; r < oh; ++r) {
        for (int s = 0; s < ow; ++s) {
          T acc = bias ? bias[o] : T(0);
          for (int ci = 0; ci < ic; ++ci) {
            const T* xplane = x + ((int64_t)b * ic + ci) * h * wd;
            const T* wplane = wbase + (int64_t)ci * kh * kw;
            for (int u = 0; u < kh; ++u) {
              const int ih = r * stride - pad + u;
              if (ih < 0 || ih >= h) continue;
              for (int v = 0; v < kw; ++v) {
                const int iw = s * stride - pad + v;
                if (iw < 0 || iw >= wd) continue;
                acc += xplane[ih * wd + iw] * wplane[u * kw + v];
              }
            }
          }
          yplane[r * ow + s] += acc;
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const T* dy, const T* w, T* dx, int batch, int ic,
                           int h, int wd, int oc, int kh, int kw, int stride,
                           int pad, int oh, int ow) {
  for (int b = 0; b < batch; ++b) {
    for (int ci = 0; ci < ic; ++ci) {
      T* dxplane = dx + ((int64_t)b * ic + ci) * h * wd;
      for (int ih = 0; ih < h; ++ih) {
        for (int iw = 0; iw < wd; ++iw) {
          T acc = T(0);
          for (int o = 0; o < oc; ++o) {
            const T* dyplane = dy + ((int64_t)b * oc + o) * oh * ow;
            const T* wplane = w + ((int64_t)o * ic + ci) * kh * kw;
            for (int u = 0; u < kh; ++u) {
              const int num = ih + pad - u;
              if (num < 0 || num % stride != 0) continue;
              const int r = num / stride;
              if (r >= oh) continue;
              for (int v = 0; v < kw; ++v) {
                const int nums = iw + pad - v;
                if (nums < 0 || nums % stride != 0) continue;
                const int s = nums / stride;
                if (s >= ow) continue;
                acc += dyplane[r * ow + s] * wplane[u * kw + v];
              }
            }
          }
          dxplane[ih * wd + iw] += acc;
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_weight(const T* x, const T* dy, T* dw, T* dbias,
                            int batch, int ic, int h, int wd, int oc, int kh,
                            int kw, int stride, int pad, int oh, int ow) {
  for (int o = 0; o < oc; ++o) {
    T bacc = T(0);
    for (int ci = 0; ci < ic; ++ci) {
      T* wplane = dw + ((int64_t)o * ic + ci) * kh * kw;
      for (int u = 0; u < kh; ++u) {
        for (int v = 0; v < kw; ++v) {
          T acc = T(0);
          for (int b = 0; b < batch; ++b) {
            const T* xplane = x + ((int64_t)b * ic + ci) * h * wd;
            const T* dyplane = dy + ((int64_t)b * oc + o) * oh * ow;
            for (int r = 0; r < oh; ++r) {
              const int ih = r * stride - pad + u;
              if (ih < 0 || ih >= h) continue;
              for (int s = 0; s < ow; ++s) {
                const int iw = s * stride - pad + v;
                if (iw < 0 || iw >= wd) continue;
                acc += xplane[ih * wd + iw] * dyplane[r * ow + s];
              }
            }
          }
          wplane[u * kw + v] += acc;
        }
      }
    }
    if (dbias) {
      for (int b = 0; b < batch; ++b) {
        const T* dyplane = dy + ((int64_t)b * oc + o) * oh * ow;
        for (int i = 0; i < oh * ow; ++i) bacc += dyplane[i];
      }
      dbias[o] += bacc;
    }
  }
}

}  // namespace serial

namespace {
constexpr int64_t kParallelCutoff = 1 << 14;  // flop-ish units
}

template <typename T>
void matmul_nn(const T* a, const T* b, T* c, int m, int k, int n) {
  const int nt = thread_count();
  if (nt <= 1 || (int64_t)m * k * n < kParallelCutoff || m < 2) {
    serial::matmul_nn(a, b, c, m, k, n);
    return;
  }
#pragma omp parallel for num_threads(nt) schedule(static)
  for (int i = 0; i < m; ++i) {
    serial::matmul_nn(a + (int64_t)i * k, b, c + (int64_t)i * n, 1, k, n);
  }
}

template <typename T>
void matmul_nt(const T* g, const T* b, T* c, int m, int n, int k) {
  const int nt = thread_count();
  if (nt <= 1 || (int64_t)m * k * n < kParallelCutoff || m < 2) {
    serial::matmul_nt(g, b, c, m, n, k);
    return;
  }
#pragma omp parallel for num_threads(nt) schedule(static)
  for (int i = 0; i < m; ++i) {
    serial::matmul_nt(g + (int64_t)i * n, b, c + (int64_t)i * k, 1, n, k);
  }
}

template <typename T>
void matmul_tn(const T* a, const T* g, T* c, int m, int k, int n) {
  const int nt = thread_count();
  if (nt <= 1 || (int64_t)m * k * n < kParallelCutoff || k < 2) {
    serial::matmul_tn(a, g, c, m, k, n);
    return;
  }
#pragma omp parallel for num_threads(nt) schedule(static)
  for (int l = 0; l < k; ++l) {
    T* crow = c + (int64_t)l * n;
    for (int i = 0; i < m; ++i) {
      const T av = a[(int64_t)i * k + l];
      const T* grow = g + (int64_t)i * n;
      for (int j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* y, int batch,
                    int ic, int h, int wd, int oc, int kh, int kw, int stride,
                    int pad, int oh, int ow) {
  const int nt = thread_count();
  const int64_t work = (int64_t)batch * oc * oh * ow * ic * kh * kw;
  if (nt <= 1 || work < kParallelCutoff || batch * oc < 2) {
    serial::conv2d_forward(x, w, bias, y, batch, ic, h, wd, oc, kh, kw, stride,
                           pad, oh, ow);
    return;
  }
#pragma omp parallel for num_threads(nt) schedule(static)
  for (int bo = 0; bo < batch * oc; ++bo) {
    const int b = bo / oc, o = bo % oc;
    serial::conv2d_forward(x + (int64_t)b * ic * h * wd,
                           w + (int64_t)o * ic * kh * kw,
                           bias ? bias + o : nullptr,
                           y + ((int64_t)b * oc + o) * oh * ow, 1, ic, h, wd,
                           1, kh, kw, stride, pad, oh, ow);
  }
}

template <typename T>
void conv2d_backward_input(const T* dy, const T* w, T* dx, int batch, int ic,
                           int h, int wd, int oc, int kh, int kw, int stride,
                           int pad, int oh, int ow) {
  const int nt = thread_count();
  const int64_t work = (int64_t)batch * ic * h * wd * oc * kh * kw;
  if (nt <= 1 || work < kParallelCutoff || batch * ic < 2) {
    serial::conv2d_backward_input(dy, w, dx, batch, ic, h, wd, oc, kh, kw,
                                  stride, pad, oh, ow);
    return;
  }
#pragma omp parallel for num_threads(nt) schedule(static)
  for (int bc = 0; bc < batch * ic; ++bc) {
    const int b = bc / ic, ci = bc % ic;
    T* dxplane = dx + ((int64_t)b * ic + ci) * h * wd;
    for (int ih = 0; ih < h; ++ih) {
      for (int iw = 0; iw < wd; ++iw) {
        T acc = T(0);
        for (int o = 0; o < oc; ++o) {
          const T* dyplane = dy + ((int64_t)b * oc + o) * oh * ow;
          const T* wplane = w + ((int64_t)o * ic + ci) * kh * kw;
          for (int u = 0; u < kh; ++u) {
            const int num = ih + pad - u;
            if (num < 0 || num % stride != 0) continue;
            const int r = num / stride;
            if (r >= oh) continue;
            for (int v = 0; v < kw; ++v) {
              const int nums = iw + pad - v;
              if (nums < 0 || nums % stride != 0) continue;
              const int s = nums / stride;
              if (s >= ow) continue;
              acc += dyplane[r * ow + s] * wplane[u * kw + v];
            }
          }
        }
        dxplane[ih * wd + iw] += acc;
      }
    }
  }
}

template <typename T>
void conv2d_backward_weight(const T* x, const T* dy, T* dw, T* dbias,
                            int batch, int ic, int h, int wd, int oc, int kh,
                            int kw, int stride, int pad, int oh, int ow) {
  const int nt = thread_count();
  const int64_t work = (int64_t)batch * oc * oh * ow * ic * kh * kw;
  if (nt <= 1 || work < kParallelCutoff || oc < 2) {
    serial::conv2d_backward_weight(x, dy, dw, dbias, batch, ic, h, wd, oc, kh,
                                   kw, stride, pad, oh, ow);
    return;
  }
  // Each thread owns one output-channel slice of dw and dbias.
#pragma omp parallel for num_threads(nt) schedule(static)
  for (int o = 0; o < oc; ++o) {
    for (int ci = 0; ci < ic; ++ci) {
      T* wplane = dw + ((int64_t)o * ic + ci) * kh * kw;
      for (int u = 0; u < kh; ++u) {
        for (int v = 0; v < kw; ++v) {
          T acc = T(0);
          for (int b = 0; b < batch; ++b) {
            const T* xplane = x + ((int64_t)b * ic + ci) * h * wd;
            const T* dyplane = dy + ((int64_t)b * oc + o) * oh * ow;
            for (int r = 0; r < oh; ++r) {
              const int ih = r * stride - pad + u;
              if (ih < 0 || ih >= h) continue;
              for (int s = 0; s < ow; ++s) {
                const int iw = s * stride - pad + v;
                if (iw < 0 || iw >= wd) continue;
                acc += xplane[ih * wd + iw] * dyplane[r * ow + s];
              }
            }
          }
          wplane[u * kw + v] += acc;
        }
      }
    }
    if (dbias) {
      T bacc = T(0);
      for (int b = 0; b < batch; ++b) {
        const T* dyplane = dy + ((int64_t)b * oc + o) * oh * ow;
        for (int i = 0; i < oh * ow; ++i) bacc += dyplane[i];
      }
      dbias[o] += bacc;
    }
  }
}

#define CRA_INSTANTIATE_KERNELS(T)                                            \
  template void serial::matmul_nn<T>(const T*, const T*, T*, int, int, int); \
  template void serial::matmul_nt<T>(const T*, const T*, T*, int, int, int); \
  template void serial::matmul_tn<T>(const T*, const T*, T*, int, int, int); \
  template void serial::conv2d_forward<T>(const T*, const T*, const T*, T*,  \
                                          int, int, int, int, int, int, int, \
                                          int, int, int, int);               \
  template void serial::conv2d_backward_input<T>(                            \
      const T*, const T*, T*, int, int, int, int, int, int, int, int, int,   \
      int, int);                                                              \
  template void serial::conv2d_backward_weight<T>(                           \
      const T*, const T*, T*, T*, int, int, int, int, int, int, int, int,    \
      int, int, int);                                                         \
  template void matmul_nn<T>(const T*, const T*, T*, int, int, int);         \
  template void matmul_nt<T>(const T*, const T*, T*, int, int, int);         \
  template void matmul_tn<T>(const T*, const T*, T*, int, int, int);         \
  template void conv2d_forward<T>(const T*, const T*, const T*, T*, int,     \
                                  int, int, int, int, int, int, int, int,    \
                                  int, int);                                  \
  template void conv2d_backward_input<T>(const T*, const T*, T*, int, int,   \
                                         int, int, int, int, int, int, int,  \
                                         int, int);                           \
  template void conv2d_backward_weight<T>(const T*, const T*, T*, T*, int,   \
                                          int, int, int, int, int, int, int, \
                                          int, int, int);

CRA_INSTANTIATE_KERNELS(float)
CRA_INSTANTIATE_KERNELS(double)

}  // namespace cra::kernels
