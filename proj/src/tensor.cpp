#include "cra/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "cra/kernels.hpp"

namespace cra {

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) {
  const int64_t n = numel_of(shape);
  check<DimensionError>(n >= 0, "invalid shape ", shape_str(shape));
  impl = std::make_shared<TensorImpl<T>>();
  impl->shape = std::move(shape);
  impl->value.assign((size_t)n, fill);
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values) {
  const int64_t n = numel_of(shape);
  check<DimensionError>((int64_t)values.size() == n, "value count ",
                        values.size(), " does not match shape ",
                        shape_str(shape));
  Tensor t;
  t.impl = std::make_shared<TensorImpl<T>>();
  t.impl->shape = std::move(shape);
  t.impl->value = std::move(values);
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T v) {
  return from({1}, {v});
}

template <typename T>
T Tensor<T>::item() const {
  check<ContractError>(defined() && numel() == 1,
                       "item() requires a one-element tensor");
  return impl->value[0];
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (!impl) return;
  auto& g = impl->ensure_grad();
  std::fill(g.begin(), g.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor t;
  if (!impl) return t;
  t.impl = std::make_shared<TensorImpl<T>>();
  t.impl->shape = impl->shape;
  t.impl->value = impl->value;
  return t;
}

template <typename T>
Graph<T>::~Graph() {
  clear();
}

template <typename T>
void Graph<T>::attach(Tensor<T>& t) {
  check<ContractError>(t.defined(), "cannot attach an undefined tensor");
  check<ContractError>(t.impl->graph == nullptr || t.impl->graph == this,
                       "tensor is already attached to another graph");
  t.impl->graph = this;
  t.impl->requires_grad = true;
  attached_.push_back(t.impl);
}

template <typename T>
void Graph<T>::record(ImplPtr out, std::vector<ImplPtr> ins,
                      std::function<void()> fn) {
  tape_.push_back(Entry{std::move(out), std::move(ins), std::move(fn)});
}

template <typename T>
Graph<T>* Graph<T>::owner(std::initializer_list<const Tensor<T>*> ts) {
  Graph* g = nullptr;
  for (const Tensor<T>* t : ts) {
    if (!t || !t->defined() || t->impl->graph == nullptr) continue;
    if (g == nullptr) {
      g = t->impl->graph;
    } else {
      check<ContractError>(g == t->impl->graph,
                           "inputs belong to different graphs");
    }
  }
  return g;
}

template <typename T>
void Graph<T>::backward(const Tensor<T>& loss) {
  check<ContractError>(loss.defined() && loss.numel() == 1,
                       "backward requires a scalar loss, got shape ",
                       loss.defined() ? shape_str(loss.shape()) : "<none>");
  check<ContractError>(loss.impl->graph == this,
                       "loss tensor does not belong to this graph");
  for (auto& e : tape_) {
    auto& g = e.out->ensure_grad();
    std::fill(g.begin(), g.end(), T(0));
  }
  loss.impl->ensure_grad()[0] += T(1);
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) it->fn();
}

template <typename T>
void Graph<T>::clear() {
  auto release = [this](const ImplPtr& p) {
    if (p && p->graph == this) {
      p->graph = nullptr;
      p->graph_output = false;
    }
  };
  for (auto& e : tape_) {
    release(e.out);
    for (auto& in : e.ins) release(in);
  }
  for (auto& p : attached_) release(p);
  tape_.clear();
  attached_.clear();
}

namespace {

using detail::make_out;

// Broadcast support is deliberately narrow: b must either match a exactly or
// be a trailing suffix of a's shape (so flat index i of a maps to i % b.numel).
template <typename T>
void check_suffix(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  check<DimensionError>(bs.size() <= as.size(),
                        "cannot broadcast ", shape_str(bs), " against ",
                        shape_str(as));
  for (size_t i = 0; i < bs.size(); ++i) {
    check<DimensionError>(bs[bs.size() - 1 - i] == as[as.size() - 1 - i],
                          "shape ", shape_str(bs),
                          " is not a suffix of ", shape_str(as));
  }
}

template <typename T, typename FwdFn, typename BwdA, typename BwdB>
Tensor<T> broadcast_binary(const Tensor<T>& a, const Tensor<T>& b, FwdFn fwd,
                           BwdA bwd_a, BwdB bwd_b) {
  check_suffix(a, b);
  Graph<T>* g = Graph<T>::owner({&a, &b});
  Tensor<T> y = make_out(a.shape(), g);
  const size_t an = a.vals().size();
  const size_t bn = b.vals().size();
  const T* av = a.vals().data();
  const T* bv = b.vals().data();
  T* yv = y.vals().data();
  for (size_t i = 0; i < an; ++i) yv[i] = fwd(av[i], bv[i % bn]);
  if (g) {
    auto ai = a.impl, bi = b.impl, yi = y.impl;
    g->record(yi, {ai, bi}, [ai, bi, yi, bwd_a, bwd_b, an, bn] {
      const T* gy = yi->grad.data();
      const T* av2 = ai->value.data();
      const T* bv2 = bi->value.data();
      if (Graph<T>::wants_grad(ai)) {
        T* da = ai->ensure_grad().data();
        for (size_t i = 0; i < an; ++i)
          da[i] += bwd_a(gy[i], av2[i], bv2[i % bn]);
      }
      if (Graph<T>::wants_grad(bi)) {
        T* db = bi->ensure_grad().data();
        for (size_t i = 0; i < an; ++i)
          db[i % bn] += bwd_b(gy[i], av2[i], bv2[i % bn]);
      }
    });
  }
  return y;
}

template <typename T, typename FwdFn, typename BwdFn>
Tensor<T> unary_op(const Tensor<T>& a, FwdFn fwd, BwdFn bwd) {
  Graph<T>* g = Graph<T>::owner({&a});
  Tensor<T> y = make_out(a.shape(), g);
  const size_t n = a.vals().size();
  const T* av = a.vals().data();
  T* yv = y.vals().data();
  for (size_t i = 0; i < n; ++i) yv[i] = fwd(av[i]);
  if (g) {
    auto ai = a.impl, yi = y.impl;
    g->record(yi, {ai}, [ai, yi, bwd, n] {
      if (!Graph<T>::wants_grad(ai)) return;
      T* da = ai->ensure_grad().data();
      const T* gy = yi->grad.data();
      const T* av2 = ai->value.data();
      const T* yv2 = yi->value.data();
      for (size_t i = 0; i < n; ++i) da[i] += bwd(gy[i], av2[i], yv2[i]);
    });
  }
  return y;
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) {
    const T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return broadcast_binary(
      a, b, [](T x, T y) { return x + y; },
      [](T g, T, T) { return g; }, [](T g, T, T) { return g; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return broadcast_binary(
      a, b, [](T x, T y) { return x - y; },
      [](T g, T, T) { return g; }, [](T g, T, T) { return -g; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return broadcast_binary(
      a, b, [](T x, T y) { return x * y; },
      [](T g, T, T y) { return g * y; }, [](T g, T x, T) { return g * x; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return unary_op(
      a, [s](T x) { return x + s; }, [](T g, T, T) { return g; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return unary_op(
      a, [s](T x) { return x * s; }, [s](T g, T, T) { return g * s; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary_op(
      a, [](T x) { return stable_sigmoid(x); },
      [](T g, T, T y) { return g * y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  return unary_op(
      a, [](T x) { return std::tanh(x); },
      [](T g, T, T y) { return g * (T(1) - y * y); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary_op(
      a, [](T x) { return x > T(0) ? x : T(0); },
      [](T g, T x, T) { return x > T(0) ? g : T(0); });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
  return unary_op(
      a, [](T x) { return std::sqrt(x); },
      [](T g, T x, T) {
        return g * T(0.5) / std::max(std::sqrt(x), T(1e-12));
      });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  check<DimensionError>(numel_of(shape) == a.numel(), "cannot reshape ",
                        shape_str(a.shape()), " to ", shape_str(shape));
  Graph<T>* g = Graph<T>::owner({&a});
  Tensor<T> y = make_out(std::move(shape), g);
  y.vals() = a.vals();
  if (g) {
    auto ai = a.impl, yi = y.impl;
    g->record(yi, {ai}, [ai, yi] {
      if (!Graph<T>::wants_grad(ai)) return;
      T* da = ai->ensure_grad().data();
      const T* gy = yi->grad.data();
      for (size_t i = 0; i < yi->grad.size(); ++i) da[i] += gy[i];
    });
  }
  return y;
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
  check<DimensionError>(a.shape().size() == 2, "transpose2d needs a matrix, ",
                        "got ", shape_str(a.shape()));
  const int m = a.shape()[0], n = a.shape()[1];
  Graph<T>* g = Graph<T>::owner({&a});
  Tensor<T> y = make_out<T>({n, m}, g);
  const T* av = a.vals().data();
  T* yv = y.vals().data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) yv[(int64_t)j * m + i] = av[(int64_t)i * n + j];
  if (g) {
    auto ai = a.impl, yi = y.impl;
    g->record(yi, {ai}, [ai, yi, m, n] {
      if (!Graph<T>::wants_grad(ai)) return;
      T* da = ai->ensure_grad().data();
      const T* gy = yi->grad.data();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          da[(int64_t)i * n + j] += gy[(int64_t)j * m + i];
    });
  }
  return y;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  Graph<T>* g = Graph<T>::owner({&a});
  Tensor<T> y = make_out<T>({1}, g);
  T acc = T(0);
  for (T v : a.vals()) acc += v;
  y.vals()[0] = acc;
  if (g) {
    auto ai = a.impl, yi = y.impl;
    g->record(yi, {ai}, [ai, yi] {
      if (!Graph<T>::wants_grad(ai)) return;
      T* da = ai->ensure_grad().data();
      const T gy = yi->grad[0];
      for (size_t i = 0; i < ai->value.size(); ++i) da[i] += gy;
    });
  }
  return y;
}

template <typename T>
Tensor<T> mean_rows(const Tensor<T>& a) {
  check<DimensionError>(a.shape().size() == 2, "mean_rows needs a matrix, ",
                        "got ", shape_str(a.shape()));
  const int m = a.shape()[0], n = a.shape()[1];
  Graph<T>* g = Graph<T>::owner({&a});
  Tensor<T> y = make_out<T>({n}, g);
  const T* av = a.vals().data();
  T* yv = y.vals().data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) yv[j] += av[(int64_t)i * n + j];
  for (int j = 0; j < n; ++j) yv[j] /= T(m);
  if (g) {
    auto ai = a.impl, yi = y.impl;
    g->record(yi, {ai}, [ai, yi, m, n] {
      if (!Graph<T>::wants_grad(ai)) return;
      T* da = ai->ensure_grad().data();
      const T* gy = yi->grad.data();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) da[(int64_t)i * n + j] += gy[j] / T(m);
    });
  }
  return y;
}

template <typename T>
Tensor<T> max_rows(const Tensor<T>& a) {
  check<DimensionError>(a.shape().size() == 2, "max_rows needs a matrix, ",
                        "got ", shape_str(a.shape()));
  const int m = a.shape()[0], n = a.shape()[1];
  check<DimensionError>(m > 0, "max_rows needs at least one row");
  Graph<T>* g = Graph<T>::owner({&a});
  Tensor<T> y = make_out<T>({n}, g);
  const T* av = a.vals().data();
  T* yv = y.vals().data();
  std::vector<int> arg(n, 0);
  for (int j = 0; j < n; ++j) yv[j] = av[j];
  for (int i = 1; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      const T v = av[(int64_t)i * n + j];
      if (v > yv[j]) {
        yv[j] = v;
        arg[j] = i;
      }
    }
  }
  if (g) {
    auto ai = a.impl, yi = y.impl;
    g->record(yi, {ai}, [ai, yi, arg, n] {
      if (!Graph<T>::wants_grad(ai)) return;
      T* da = ai->ensure_grad().data();
      const T* gy = yi->grad.data();
      for (int j = 0; j < n; ++j) da[(int64_t)arg[j] * n + j] += gy[j];
    });
  }
  return y;
}

template <typename T>
Tensor<T> select_axis0(const Tensor<T>& a, int index) {
  const Shape& as = a.shape();
  check<DimensionError>(!as.empty(), "select_axis0 needs a non-scalar input");
  check<DimensionError>(index >= 0 && index < as[0], "index ", index,
                        " out of range for axis of size ", as[0]);
  Shape out_shape(as.begin() + 1, as.end());
  if (out_shape.empty()) out_shape = {1};
  const int64_t stride = numel_of(out_shape);
  Graph<T>* g = Graph<T>::owner({&a});
  Tensor<T> y = make_out(std::move(out_shape), g);
  const T* av = a.vals().data() + (int64_t)index * stride;
  std::copy(av, av + stride, y.vals().data());
  if (g) {
    auto ai = a.impl, yi = y.impl;
    g->record(yi, {ai}, [ai, yi, index, stride] {
      if (!Graph<T>::wants_grad(ai)) return;
      T* da = ai->ensure_grad().data() + (int64_t)index * stride;
      const T* gy = yi->grad.data();
      for (int64_t i = 0; i < stride; ++i) da[i] += gy[i];
    });
  }
  return y;
}

template <typename T>
Tensor<T> stack_axis0(const std::vector<Tensor<T>>& parts) {
  check<DimensionError>(!parts.empty(), "stack_axis0 needs at least one part");
  const Shape& base = parts[0].shape();
  for (const auto& p : parts)
    check<DimensionError>(p.shape() == base, "stack_axis0 shape mismatch: ",
                          shape_str(p.shape()), " vs ", shape_str(base));
  Shape out_shape;
  out_shape.push_back((int)parts.size());
  out_shape.insert(out_shape.end(), base.begin(), base.end());
  Graph<T>* g = nullptr;
  for (const auto& p : parts) {
    Graph<T>* pg = Graph<T>::owner({&p});
    if (pg) {
      check<ContractError>(g == nullptr || g == pg,
                           "inputs belong to different graphs");
      g = pg;
    }
  }
  Tensor<T> y = make_out(std::move(out_shape), g);
  const int64_t stride = numel_of(base);
  for (size_t i = 0; i < parts.size(); ++i) {
    std::copy(parts[i].vals().begin(), parts[i].vals().end(),
              y.vals().data() + (int64_t)i * stride);
  }
  if (g) {
    std::vector<typename Graph<T>::ImplPtr> ins;
    for (const auto& p : parts) ins.push_back(p.impl);
    auto yi = y.impl;
    g->record(yi, ins, [ins, yi, stride] {
      const T* gy = yi->grad.data();
      for (size_t i = 0; i < ins.size(); ++i) {
        if (!Graph<T>::wants_grad(ins[i])) continue;
        T* da = ins[i]->ensure_grad().data();
        const T* src = gy + (int64_t)i * stride;
        for (int64_t j = 0; j < stride; ++j) da[j] += src[j];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> permute_rows(const Tensor<T>& a, const std::vector<int>& perm) {
  check<DimensionError>(a.shape().size() == 2, "permute_rows needs a matrix, ",
                        "got ", shape_str(a.shape()));
  const int m = a.shape()[0], n = a.shape()[1];
  check<DimensionError>((int)perm.size() == m, "permutation size ",
                        perm.size(), " does not match row count ", m);
  std::vector<char> seen(m, 0);
  for (int p : perm) {
    check<DimensionError>(p >= 0 && p < m && !seen[p],
                          "invalid row permutation");
    seen[p] = 1;
  }
  Graph<T>* g = Graph<T>::owner({&a});
  Tensor<T> y = make_out<T>({m, n}, g);
  const T* av = a.vals().data();
  T* yv = y.vals().data();
  for (int i = 0; i < m; ++i)
    std::copy(av + (int64_t)perm[i] * n, av + (int64_t)(perm[i] + 1) * n,
              yv + (int64_t)i * n);
  if (g) {
    auto ai = a.impl, yi = y.impl;
    g->record(yi, {ai}, [ai, yi, perm, n] {
      if (!Graph<T>::wants_grad(ai)) return;
      T* da = ai->ensure_grad().data();
      const T* gy = yi->grad.data();
      for (size_t i = 0; i < perm.size(); ++i) {
        T* dst = da + (int64_t)perm[i] * n;
        const T* src = gy + (int64_t)i * n;
        for (int j = 0; j < n; ++j) dst[j] += src[j];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, int c0, int c1) {
  check<DimensionError>(a.shape().size() == 2, "slice_cols needs a matrix, ",
                        "got ", shape_str(a.shape()));
  const int m = a.shape()[0], n = a.shape()[1];
  check<DimensionError>(0 <= c0 && c0 < c1 && c1 <= n, "column slice [", c0,
                        ", ", c1, ") out of range for width ", n);
  const int w = c1 - c0;
  Graph<T>* g = Graph<T>::owner({&a});
  Tensor<T> y = make_out<T>({m, w}, g);
  const T* av = a.vals().data();
  T* yv = y.vals().data();
  for (int i = 0; i < m; ++i)
    std::copy(av + (int64_t)i * n + c0, av + (int64_t)i * n + c1,
              yv + (int64_t)i * w);
  if (g) {
    auto ai = a.impl, yi = y.impl;
    g->record(yi, {ai}, [ai, yi, c0, w, m, n] {
      if (!Graph<T>::wants_grad(ai)) return;
      T* da = ai->ensure_grad().data();
      const T* gy = yi->grad.data();
      for (int i = 0; i < m; ++i) {
        T* dst = da + (int64_t)i * n + c0;
        const T* src = gy + (int64_t)i * w;
        for (int j = 0; j < w; ++j) dst[j] += src[j];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, int r0, int r1) {
  check<DimensionError>(a.shape().size() >= 1, "slice_rows needs a tensor");
  const int m = a.shape()[0];
  check<DimensionError>(0 <= r0 && r0 < r1 && r1 <= m, "row slice [", r0, ", ",
                        r1, ") out of range for ", m, " rows");
  Shape out_shape = a.shape();
  out_shape[0] = r1 - r0;
  const int64_t stride = a.numel() / m;
  Graph<T>* g = Graph<T>::owner({&a});
  Tensor<T> y = make_out<T>(out_shape, g);
  std::copy(a.vals().data() + r0 * stride, a.vals().data() + r1 * stride,
            y.vals().data());
  if (g) {
    auto ai = a.impl, yi = y.impl;
    g->record(yi, {ai}, [ai, yi, r0, stride] {
      if (!Graph<T>::wants_grad(ai)) return;
      T* da = ai->ensure_grad().data() + r0 * stride;
      const T* gy = yi->grad.data();
      for (int64_t k = 0; k < (int64_t)yi->value.size(); ++k) da[k] += gy[k];
    });
  }
  return y;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  check<DimensionError>(a.shape().size() == 2 && b.shape().size() == 2,
                        "matmul needs matrices, got ", shape_str(a.shape()),
                        " and ", shape_str(b.shape()));
  const int m = a.shape()[0], k = a.shape()[1];
  check<DimensionError>(b.shape()[0] == k, "matmul inner dims differ: ",
                        shape_str(a.shape()), " vs ", shape_str(b.shape()));
  const int n = b.shape()[1];
  Graph<T>* g = Graph<T>::owner({&a, &b});
  Tensor<T> y = make_out<T>({m, n}, g);
  kernels::matmul_nn(a.vals().data(), b.vals().data(), y.vals().data(), m, k,
                     n);
  if (g) {
    auto ai = a.impl, bi = b.impl, yi = y.impl;
    g->record(yi, {ai, bi}, [ai, bi, yi, m, k, n] {
      const T* gy = yi->grad.data();
      if (Graph<T>::wants_grad(ai)) {
        kernels::matmul_nt(gy, bi->value.data(), ai->ensure_grad().data(), m,
                           n, k);
      }
      if (Graph<T>::wants_grad(bi)) {
        kernels::matmul_tn(ai->value.data(), gy, bi->ensure_grad().data(), m,
                           k, n);
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> linear_op(const Tensor<T>& x, const Tensor<T>& w,
                    const Tensor<T>& b) {
  check<DimensionError>(x.shape().size() == 2 && w.shape().size() == 2,
                        "linear_op needs matrices, got ",
                        shape_str(x.shape()), " and ", shape_str(w.shape()));
  const int n = x.shape()[0], in = x.shape()[1];
  const int out = w.shape()[0];
  check<DimensionError>(w.shape()[1] == in, "weight shape ",
                        shape_str(w.shape()), " does not accept input width ",
                        in);
  if (b.defined())
    check<DimensionError>(b.numel() == out, "bias size ", b.numel(),
                          " does not match output width ", out);
  Graph<T>* g = Graph<T>::owner({&x, &w, b.defined() ? &b : nullptr});
  Tensor<T> y = make_out<T>({n, out}, g);
  kernels::matmul_nt(x.vals().data(), w.vals().data(), y.vals().data(), n, in,
                     out);
  if (b.defined()) {
    T* yv = y.vals().data();
    const T* bv = b.vals().data();
    for (int i = 0; i < n; ++i)
      for (int o = 0; o < out; ++o) yv[(int64_t)i * out + o] += bv[o];
  }
  if (g) {
    auto xi = x.impl, wi = w.impl, yi = y.impl;
    auto bi = b.defined() ? b.impl : nullptr;
    std::vector<typename Graph<T>::ImplPtr> ins = {xi, wi};
    if (bi) ins.push_back(bi);
    g->record(yi, ins, [xi, wi, bi, yi, n, in, out] {
      const T* gy = yi->grad.data();
      if (Graph<T>::wants_grad(xi)) {
        kernels::matmul_nn(gy, wi->value.data(), xi->ensure_grad().data(), n,
                           out, in);
      }
      if (Graph<T>::wants_grad(wi)) {
        kernels::matmul_tn(gy, xi->value.data(), wi->ensure_grad().data(), n,
                           out, in);
      }
      if (bi && Graph<T>::wants_grad(bi)) {
        T* db = bi->ensure_grad().data();
        for (int i = 0; i < n; ++i)
          for (int o = 0; o < out; ++o) db[o] += gy[(int64_t)i * out + o];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 int stride, int pad) {
  check<DimensionError>(x.shape().size() == 4 && w.shape().size() == 4,
                        "conv2d needs 4-d input and weight, got ",
                        shape_str(x.shape()), " and ", shape_str(w.shape()));
  check<ConfigError>(stride >= 1 && pad >= 0, "conv2d stride/pad invalid: ",
                     stride, "/", pad);
  const int batch = x.shape()[0], ic = x.shape()[1], h = x.shape()[2],
            wd = x.shape()[3];
  const int oc = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  check<DimensionError>(w.shape()[1] == ic, "conv2d weight expects ",
                        w.shape()[1], " input channels, got ", ic);
  if (b.defined())
    check<DimensionError>(b.numel() == oc, "conv2d bias size ", b.numel(),
                          " does not match ", oc, " output channels");
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (wd + 2 * pad - kw) / stride + 1;
  check<DimensionError>(oh > 0 && ow > 0, "conv2d output would be empty for ",
                        shape_str(x.shape()));
  Graph<T>* g = Graph<T>::owner({&x, &w, b.defined() ? &b : nullptr});
  Tensor<T> y = make_out<T>({batch, oc, oh, ow}, g);
  kernels::conv2d_forward(x.vals().data(), w.vals().data(),
                          b.defined() ? b.vals().data() : nullptr,
                          y.vals().data(), batch, ic, h, wd, oc, kh, kw,
                          stride, pad, oh, ow);
  if (g) {
    auto xi = x.impl, wi = w.impl, yi = y.impl;
    auto bi = b.defined() ? b.impl : nullptr;
    std::vector<typename Graph<T>::ImplPtr> ins = {xi, wi};
    if (bi) ins.push_back(bi);
    g->record(yi, ins,
              [xi, wi, bi, yi, batch, ic, h, wd, oc, kh, kw, stride, pad, oh,
               ow] {
                const T* gy = yi->grad.data();
                if (Graph<T>::wants_grad(xi)) {
                  kernels::conv2d_backward_input(
                      gy, wi->value.data(), xi->ensure_grad().data(), batch,
                      ic, h, wd, oc, kh, kw, stride, pad, oh, ow);
                }
                const bool want_w = Graph<T>::wants_grad(wi);
                const bool want_b = bi && Graph<T>::wants_grad(bi);
                if (want_w || want_b) {
                  kernels::conv2d_backward_weight(
                      xi->value.data(), gy,
                      want_w ? wi->ensure_grad().data() : nullptr,
                      want_b ? bi->ensure_grad().data() : nullptr, batch, ic,
                      h, wd, oc, kh, kw, stride, pad, oh, ow);
                }
              });
  }
  return y;
}

namespace {

// Pooling windows must tile the input exactly.
template <typename T>
void check_pool(const Tensor<T>& x, int kernel, int stride, const char* name) {
  check<DimensionError>(x.shape().size() == 4, name, " needs 4-d input, got ",
                        shape_str(x.shape()));
  check<DimensionError>(kernel >= 1 && stride >= 1, name,
                        " window is empty: kernel ", kernel, ", stride ",
                        stride);
  const int h = x.shape()[2], wd = x.shape()[3];
  check<DimensionError>(h >= kernel && wd >= kernel &&
                            (h - kernel) % stride == 0 &&
                            (wd - kernel) % stride == 0,
                        name, " window ", kernel, "/", stride,
                        " does not tile input ", shape_str(x.shape()));
}

}  // namespace

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, int kernel, int stride) {
  check_pool(x, kernel, stride, "maxpool2d");
  const int batch = x.shape()[0], c = x.shape()[1], h = x.shape()[2],
            wd = x.shape()[3];
  const int oh = (h - kernel) / stride + 1;
  const int ow = (wd - kernel) / stride + 1;
  Graph<T>* g = Graph<T>::owner({&x});
  Tensor<T> y = make_out<T>({batch, c, oh, ow}, g);
  const T* xv = x.vals().data();
  T* yv = y.vals().data();
  std::vector<int64_t> arg((size_t)batch * c * oh * ow);
  int64_t oi = 0;
  for (int b = 0; b < batch; ++b) {
    for (int ci = 0; ci < c; ++ci) {
      const T* plane = xv + ((int64_t)b * c + ci) * h * wd;
      const int64_t base = ((int64_t)b * c + ci) * h * wd;
      for (int r = 0; r < oh; ++r) {
        for (int s = 0; s < ow; ++s, ++oi) {
          T best = plane[(r * stride) * wd + s * stride];
          int64_t besti = base + (r * stride) * wd + s * stride;
          for (int u = 0; u < kernel; ++u) {
            for (int v = 0; v < kernel; ++v) {
              const int ih = r * stride + u, iw = s * stride + v;
              const T val = plane[ih * wd + iw];
              if (val > best) {
                best = val;
                besti = base + ih * wd + iw;
              }
            }
          }
          yv[oi] = best;
          arg[oi] = besti;
        }
      }
    }
  }
  if (g) {
    auto xi = x.impl, yi = y.impl;
    g->record(yi, {xi}, [xi, yi, arg] {
      if (!Graph<T>::wants_grad(xi)) return;
      T* dx = xi->ensure_grad().data();
      const T* gy = yi->grad.data();
      for (size_t i = 0; i < arg.size(); ++i) dx[arg[i]] += gy[i];
    });
  }
  return y;
}

template <typename T>
Tensor<T> avgpool2d(const Tensor<T>& x, int kernel, int stride) {
  check_pool(x, kernel, stride, "avgpool2d");
  const int batch = x.shape()[0], c = x.shape()[1], h = x.shape()[2],
            wd = x.shape()[3];
  const int oh = (h - kernel) / stride + 1;
  const int ow = (wd - kernel) / stride + 1;
  const T inv = T(1) / T(kernel * kernel);
  Graph<T>* g = Graph<T>::owner({&x});
  Tensor<T> y = make_out<T>({batch, c, oh, ow}, g);
  const T* xv = x.vals().data();
  T* yv = y.vals().data();
  int64_t oi = 0;
  for (int64_t bc = 0; bc < (int64_t)batch * c; ++bc) {
    const T* plane = xv + bc * h * wd;
    for (int r = 0; r < oh; ++r) {
      for (int s = 0; s < ow; ++s, ++oi) {
        T acc = T(0);
        for (int u = 0; u < kernel; ++u)
          for (int v = 0; v < kernel; ++v)
            acc += plane[(r * stride + u) * wd + s * stride + v];
        yv[oi] = acc * inv;
      }
    }
  }
  if (g) {
    auto xi = x.impl, yi = y.impl;
    g->record(yi, {xi}, [xi, yi, batch, c, h, wd, oh, ow, kernel, stride,
                        inv] {
      if (!Graph<T>::wants_grad(xi)) return;
      T* dx = xi->ensure_grad().data();
      const T* gy = yi->grad.data();
      int64_t oi2 = 0;
      for (int64_t bc = 0; bc < (int64_t)batch * c; ++bc) {
        T* plane = dx + bc * h * wd;
        for (int r = 0; r < oh; ++r) {
          for (int s = 0; s < ow; ++s, ++oi2) {
            const T gval = gy[oi2] * inv;
            for (int u = 0; u < kernel; ++u)
              for (int v = 0; v < kernel; ++v)
                plane[(r * stride + u) * wd + s * stride + v] += gval;
          }
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  check<DimensionError>(x.shape().size() == 4,
                        "global_avg_pool needs 4-d input, got ",
                        shape_str(x.shape()));
  const int batch = x.shape()[0], c = x.shape()[1], h = x.shape()[2],
            wd = x.shape()[3];
  const int hw = h * wd;
  Graph<T>* g = Graph<T>::owner({&x});
  Tensor<T> y = make_out<T>({batch, c}, g);
  const T* xv = x.vals().data();
  T* yv = y.vals().data();
  for (int64_t bc = 0; bc < (int64_t)batch * c; ++bc) {
    T acc = T(0);
    const T* plane = xv + bc * hw;
    for (int i = 0; i < hw; ++i) acc += plane[i];
    yv[bc] = acc / T(hw);
  }
  if (g) {
    auto xi = x.impl, yi = y.impl;
    g->record(yi, {xi}, [xi, yi, batch, c, hw] {
      if (!Graph<T>::wants_grad(xi)) return;
      T* dx = xi->ensure_grad().data();
      const T* gy = yi->grad.data();
      for (int64_t bc = 0; bc < (int64_t)batch * c; ++bc) {
        const T gval = gy[bc] / T(hw);
        T* plane = dx + bc * hw;
        for (int i = 0; i < hw; ++i) plane[i] += gval;
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits,
                        const std::vector<int>& labels) {
  check<DimensionError>(logits.shape().size() == 2,
                        "cross_entropy needs a logit matrix, got ",
                        shape_str(logits.shape()));
  const int n = logits.shape()[0], k = logits.shape()[1];
  check<DimensionError>((int)labels.size() == n, "label count ",
                        labels.size(), " does not match batch size ", n);
  for (int lab : labels)
    check<ContractError>(lab >= 0 && lab < k, "label ", lab,
                         " out of range for ", k, " classes");
  Graph<T>* g = Graph<T>::owner({&logits});
  Tensor<T> y = make_out<T>({1}, g);
  const T* lv = logits.vals().data();
  std::vector<T> prob((size_t)n * k);
  T loss = T(0);
  for (int i = 0; i < n; ++i) {
    const T* row = lv + (int64_t)i * k;
    T m = row[0];
    for (int j = 1; j < k; ++j) m = std::max(m, row[j]);
    T denom = T(0);
    for (int j = 0; j < k; ++j) denom += std::exp(row[j] - m);
    const T lse = m + std::log(denom);
    loss += lse - row[labels[i]];
    for (int j = 0; j < k; ++j)
      prob[(int64_t)i * k + j] = std::exp(row[j] - m) / denom;
  }
  y.vals()[0] = loss / T(n);
  if (g) {
    auto li = logits.impl, yi = y.impl;
    g->record(yi, {li}, [li, yi, prob, labels, n, k] {
      if (!Graph<T>::wants_grad(li)) return;
      T* dl = li->ensure_grad().data();
      const T gy = yi->grad[0];
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < k; ++j) {
          T delta = prob[(int64_t)i * k + j];
          if (j == labels[i]) delta -= T(1);
          dl[(int64_t)i * k + j] += gy * delta / T(n);
        }
      }
    });
  }
  return y;
}

#define CRA_INSTANTIATE_TENSOR(T)                                             \
  template class Tensor<T>;                                                   \
  template class Graph<T>;                                                    \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                      \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                           \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                            \
  template Tensor<T> tanh<T>(const Tensor<T>&);                               \
  template Tensor<T> relu<T>(const Tensor<T>&);                               \
  template Tensor<T> sqrt<T>(const Tensor<T>&);                               \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                     \
  template Tensor<T> transpose2d<T>(const Tensor<T>&);                        \
  template Tensor<T> sum<T>(const Tensor<T>&);                                \
  template Tensor<T> mean_rows<T>(const Tensor<T>&);                          \
  template Tensor<T> max_rows<T>(const Tensor<T>&);                           \
  template Tensor<T> select_axis0<T>(const Tensor<T>&, int);                  \
  template Tensor<T> stack_axis0<T>(const std::vector<Tensor<T>>&);           \
  template Tensor<T> permute_rows<T>(const Tensor<T>&,                        \
                                     const std::vector<int>&);                \
  template Tensor<T> slice_cols<T>(const Tensor<T>&, int, int);               \
  template Tensor<T> slice_rows<T>(const Tensor<T>&, int, int);               \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> linear_op<T>(const Tensor<T>&, const Tensor<T>&,         \
                                  const Tensor<T>&);                          \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&,            \
                               const Tensor<T>&, int, int);                   \
  template Tensor<T> maxpool2d<T>(const Tensor<T>&, int, int);                \
  template Tensor<T> avgpool2d<T>(const Tensor<T>&, int, int);                \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                    \
  template Tensor<T> cross_entropy<T>(const Tensor<T>&,                       \
                                      const std::vector<int>&);

CRA_INSTANTIATE_TENSOR(float)
CRA_INSTANTIATE_TENSOR(double)

}  // namespace cra
