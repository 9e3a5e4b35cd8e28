#include <doctest.h>

#include <vector>

#include "cra/kernels.hpp"
#include "cra/rng.hpp"
#include "cra/threads.hpp"

namespace {

using cra::make_rng;
namespace k = cra::kernels;

std::vector<double> random_vec(uint64_t seed, int64_t n) {
  std::vector<double> v(n);
  auto rng = make_rng(seed);
  cra::fill_uniform(rng, v.data(), n, -1.0, 1.0);
  return v;
}

// Index-by-index reference for the three matmul layouts.
std::vector<double> naive_nn(const std::vector<double>& a,
                             const std::vector<double>& b, int m, int kk,
                             int n) {
  std::vector<double> c(m * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (int p = 0; p < kk; ++p) c[i * n + j] += a[i * kk + p] * b[p * n + j];
  return c;
}

struct ThreadGuard {
  explicit ThreadGuard(int n) { cra::set_thread_count(n); }
  ~ThreadGuard() { cra::set_thread_count(1); }
};

}  // namespace

TEST_CASE("matmul_nn matches a hand example") {
  // [1 2 3; 4 5 6] * [7 8; 9 10; 11 12] = [58 64; 139 154]
  std::vector<double> a = {1, 2, 3, 4, 5, 6};
  std::vector<double> b = {7, 8, 9, 10, 11, 12};
  std::vector<double> c(4, 0.0);
  k::serial::matmul_nn(a.data(), b.data(), c.data(), 2, 3, 2);
  CHECK(c == std::vector<double>{58, 64, 139, 154});
}

TEST_CASE("matmul kernels accumulate into the destination") {
  std::vector<double> a = {1, 2, 3, 4};
  std::vector<double> b = {1, 0, 0, 1};
  std::vector<double> c(4, 0.0);
  k::serial::matmul_nn(a.data(), b.data(), c.data(), 2, 2, 2);
  k::serial::matmul_nn(a.data(), b.data(), c.data(), 2, 2, 2);
  CHECK(c == std::vector<double>{2, 4, 6, 8});
}

TEST_CASE("matmul_nt and matmul_tn agree with explicit transposes") {
  const int m = 5, n = 4, kk = 3;
  auto g = random_vec(1, m * n);
  auto b = random_vec(2, kk * n);
  auto a = random_vec(3, m * kk);

  std::vector<double> bt(n * kk);
  for (int i = 0; i < kk; ++i)
    for (int j = 0; j < n; ++j) bt[j * kk + i] = b[i * n + j];
  std::vector<double> at(kk * m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < kk; ++j) at[j * m + i] = a[i * kk + j];

  std::vector<double> c1(m * kk, 0.0);
  k::serial::matmul_nt(g.data(), b.data(), c1.data(), m, n, kk);
  auto c1_ref = naive_nn(g, bt, m, n, kk);
  for (int i = 0; i < m * kk; ++i) CHECK(c1[i] == doctest::Approx(c1_ref[i]));

  std::vector<double> c2(kk * n, 0.0);
  k::serial::matmul_tn(a.data(), g.data(), c2.data(), m, kk, n);
  auto c2_ref = naive_nn(at, g, kk, m, n);
  for (int i = 0; i < kk * n; ++i) CHECK(c2[i] == doctest::Approx(c2_ref[i]));
}

TEST_CASE("conv2d_forward with a centered identity kernel copies the input") {
  const int h = 5, w = 4;
  auto x = random_vec(7, h * w);
  std::vector<double> weight(9, 0.0);
  weight[4] = 1.0;  // center of the 3x3 window
  std::vector<double> y(h * w, 0.0);
  k::serial::conv2d_forward<double>(x.data(), weight.data(), nullptr, y.data(), 1, 1,
                            h, w, 1, 3, 3, 1, 1, h, w);
  for (int i = 0; i < h * w; ++i) CHECK(y[i] == doctest::Approx(x[i]));
}

TEST_CASE("conv2d_forward matches a hand-computed strided example") {
  // 1x1x3x3 input, 2x2 kernel of ones, stride 2, no padding: single output
  // equal to the top-left 2x2 window sum.
  std::vector<double> x = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<double> w(4, 1.0);
  std::vector<double> bias = {0.5};
  std::vector<double> y(1, 0.0);
  k::serial::conv2d_forward(x.data(), w.data(), bias.data(), y.data(), 1, 1,
                            3, 3, 1, 2, 2, 2, 0, 1, 1);
  CHECK(y[0] == doctest::Approx(1 + 2 + 4 + 5 + 0.5));
}

TEST_CASE("conv2d backward kernels are adjoint to the forward") {
  // <conv(x), dy> must equal <x, conv_backward_input(dy)> and likewise for
  // the weight gradient; this pins the gather indexing.
  const int batch = 2, ic = 3, h = 6, w = 5, oc = 4, kh = 3, kw = 3;
  for (int stride : {1, 2}) {
    const int pad = 1;
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (w + 2 * pad - kw) / stride + 1;
    auto x = random_vec(11, batch * ic * h * w);
    auto wt = random_vec(12, oc * ic * kh * kw);
    auto dy = random_vec(13, batch * oc * oh * ow);

    std::vector<double> y(batch * oc * oh * ow, 0.0);
    k::serial::conv2d_forward<double>(x.data(), wt.data(), nullptr, y.data(), batch,
                              ic, h, w, oc, kh, kw, stride, pad, oh, ow);
    std::vector<double> dx(x.size(), 0.0);
    k::serial::conv2d_backward_input(dy.data(), wt.data(), dx.data(), batch,
                                     ic, h, w, oc, kh, kw, stride, pad, oh,
                                     ow);
    std::vector<double> dw(wt.size(), 0.0);
    k::serial::conv2d_backward_weight<double>(x.data(), dy.data(), dw.data(), nullptr,
                                      batch, ic, h, w, oc, kh, kw, stride,
                                      pad, oh, ow);

    double y_dot_dy = 0.0, x_dot_dx = 0.0, w_dot_dw = 0.0;
    for (size_t i = 0; i < y.size(); ++i) y_dot_dy += y[i] * dy[i];
    for (size_t i = 0; i < x.size(); ++i) x_dot_dx += x[i] * dx[i];
    for (size_t i = 0; i < wt.size(); ++i) w_dot_dw += wt[i] * dw[i];
    CHECK(x_dot_dx == doctest::Approx(y_dot_dy));
    CHECK(w_dot_dw == doctest::Approx(y_dot_dy));
  }
}

TEST_CASE("parallel kernels are bitwise identical to the serial reference") {
  ThreadGuard guard(4);
  const int m = 37, kk = 29, n = 23;
  auto a = random_vec(21, m * kk);
  auto b = random_vec(22, kk * n);
  auto g = random_vec(23, m * n);

  std::vector<double> s1(m * n, 0.0), p1(m * n, 0.0);
  k::serial::matmul_nn(a.data(), b.data(), s1.data(), m, kk, n);
  k::matmul_nn(a.data(), b.data(), p1.data(), m, kk, n);
  CHECK(s1 == p1);

  std::vector<double> s2(m * kk, 0.0), p2(m * kk, 0.0);
  k::serial::matmul_nt(g.data(), b.data(), s2.data(), m, n, kk);
  k::matmul_nt(g.data(), b.data(), p2.data(), m, n, kk);
  CHECK(s2 == p2);

  std::vector<double> s3(kk * n, 0.0), p3(kk * n, 0.0);
  k::serial::matmul_tn(a.data(), g.data(), s3.data(), m, kk, n);
  k::matmul_tn(a.data(), g.data(), p3.data(), m, kk, n);
  CHECK(s3 == p3);
}

TEST_CASE("parallel conv kernels are bitwise identical to serial") {
  ThreadGuard guard(3);
  const int batch = 3, ic = 4, h = 9, w = 7, oc = 5, kh = 3, kw = 3;
  for (int stride : {1, 2}) {
    const int pad = 1;
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (w + 2 * pad - kw) / stride + 1;
    auto x = random_vec(31, batch * ic * h * w);
    auto wt = random_vec(32, oc * ic * kh * kw);
    auto bias = random_vec(33, oc);
    auto dy = random_vec(34, batch * oc * oh * ow);

    std::vector<double> ys(batch * oc * oh * ow, 0.0), yp = ys;
    k::serial::conv2d_forward(x.data(), wt.data(), bias.data(), ys.data(),
                              batch, ic, h, w, oc, kh, kw, stride, pad, oh,
                              ow);
    k::conv2d_forward(x.data(), wt.data(), bias.data(), yp.data(), batch, ic,
                      h, w, oc, kh, kw, stride, pad, oh, ow);
    CHECK(ys == yp);

    std::vector<double> dxs(x.size(), 0.0), dxp = dxs;
    k::serial::conv2d_backward_input(dy.data(), wt.data(), dxs.data(), batch,
                                     ic, h, w, oc, kh, kw, stride, pad, oh,
                                     ow);
    k::conv2d_backward_input(dy.data(), wt.data(), dxp.data(), batch, ic, h,
                             w, oc, kh, kw, stride, pad, oh, ow);
    CHECK(dxs == dxp);

    std::vector<double> dws(wt.size(), 0.0), dwp = dws;
    std::vector<double> dbs(oc, 0.0), dbp(oc, 0.0);
    k::serial::conv2d_backward_weight(x.data(), dy.data(), dws.data(),
                                      dbs.data(), batch, ic, h, w, oc, kh, kw,
                                      stride, pad, oh, ow);
    k::conv2d_backward_weight(x.data(), dy.data(), dwp.data(), dbp.data(),
                              batch, ic, h, w, oc, kh, kw, stride, pad, oh,
                              ow);
    CHECK(dws == dwp);
    CHECK(dbs == dbp);
  }
}
