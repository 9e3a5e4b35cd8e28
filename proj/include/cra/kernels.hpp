#pragma once

#include <cstdint>

namespace cra::kernels {

// Dense inner loops shared by the tensor ops. Every kernel accumulates into
// its destination (callers zero fresh buffers), and the parallel versions
// split work by destination element only, so serial and parallel runs are
// bitwise identical for any thread count.

namespace serial {

// c[m x n] += a[m x k] * b[k x n]
template <typename T>
void matmul_nn(const T* a, const T* b, T* c, int m, int k, int n);

// c[m x k] += g[m x n] * b[k x n]^T
template <typename T>
void matmul_nt(const T* g, const T* b, T* c, int m, int n, int k);

// c[k x n] += a[m x k]^T * g[m x n]
template <typename T>
void matmul_tn(const T* a, const T* g, T* c, int m, int k, int n);

// y[b x oc x oh x ow] += cross-correlation of x[b x ic x h x w] with
// w[oc x ic x kh x kw]; bias (length oc) may be null.
template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* y, int batch,
                    int ic, int h, int wd, int oc, int kh, int kw, int stride,
                    int pad, int oh, int ow);

// dx += correlation transpose of dy with w (gather form).
template <typename T>
void conv2d_backward_input(const T* dy, const T* w, T* dx, int batch, int ic,
                           int h, int wd, int oc, int kh, int kw, int stride,
                           int pad, int oh, int ow);

// dw += x (*) dy; dbias (may be null) += per-channel sums of dy.
template <typename T>
void conv2d_backward_weight(const T* x, const T* dy, T* dw, T* dbias,
                            int batch, int ic, int h, int wd, int oc, int kh,
                            int kw, int stride, int pad, int oh, int ow);

}  // namespace serial

// Parallel entry points; dispatch to the serial loops when the work is small
// or the thread budget is 1 (see cra::thread_count()).
template <typename T>
void matmul_nn(const T* a, const T* b, T* c, int m, int k, int n);
template <typename T>
void matmul_nt(const T* g, const T* b, T* c, int m, int n, int k);
template <typename T>
void matmul_tn(const T* a, const T* g, T* c, int m, int k, int n);
template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* y, int batch,
                    int ic, int h, int wd, int oc, int kh, int kw, int stride,
                    int pad, int oh, int ow);
template <typename T>
void conv2d_backward_input(const T* dy, const T* w, T* dx, int batch, int ic,
                           int h, int wd, int oc, int kh, int kw, int stride,
                           int pad, int oh, int ow);
template <typename T>
void conv2d_backward_weight(const T* x, const T* dy, T* dw, T* dbias,
                            int batch, int ic, int h, int wd, int oc, int kh,
                            int kw, int stride, int pad, int oh, int ow);

}  // namespace cra::kernels
