#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "cra/common.hpp"

namespace cra {

template <typename T>
class Graph;

// Dense row-major tensor storage. Gradient buffers are allocated on first
// use so value-only tensors stay cheap.
template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  bool graph_output = false;
  Graph<T>* graph = nullptr;

  std::vector<T>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

// Shared-ownership handle. Copies alias the same storage; ops that need
// independent storage (reshape, clone) copy explicitly.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));

  static Tensor from(Shape shape, std::vector<T> values);
  static Tensor scalar(T v);

  bool defined() const { return impl != nullptr; }
  const Shape& shape() const { return impl->shape; }
  int64_t numel() const { return impl ? (int64_t)impl->value.size() : 0; }

  std::vector<T>& vals() { return impl->value; }
  const std::vector<T>& vals() const { return impl->value; }
  std::vector<T>& grads() { return impl->ensure_grad(); }

  T item() const;
  void zero_grad();
  Tensor clone() const;

  std::shared_ptr<TensorImpl<T>> impl;
};

// Reverse-mode tape. Ops record a backward closure whenever any input is
// attached; backward() zeroes interior gradients, seeds the scalar loss and
// replays the tape in reverse. Leaf gradients accumulate across calls until
// zero_grad() is used.
template <typename T>
class Graph {
 public:
  using ImplPtr = std::shared_ptr<TensorImpl<T>>;

  Graph() = default;
  ~Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  void attach(Tensor<T>& t);
  void backward(const Tensor<T>& loss);
  void clear();
  size_t size() const { return tape_.size(); }

  void record(ImplPtr out, std::vector<ImplPtr> ins, std::function<void()> fn);
  static Graph* owner(std::initializer_list<const Tensor<T>*> ts);
  static bool wants_grad(const ImplPtr& p) {
    return p->requires_grad || p->graph_output;
  }

 private:
  struct Entry {
    ImplPtr out;
    std::vector<ImplPtr> ins;
    std::function<void()> fn;
  };
  std::vector<Entry> tape_;
  std::vector<ImplPtr> attached_;
};

namespace detail {
// Allocates an op result, marking it as an interior graph node when the op
// is being recorded.
template <typename T>
Tensor<T> make_out(Shape shape, Graph<T>* g) {
  Tensor<T> t(std::move(shape));
  if (g) {
    t.impl->graph = g;
    t.impl->graph_output = true;
  }
  return t;
}
}  // namespace detail

// Elementwise and shape ops.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T s);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> tanh(const Tensor<T>& a);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> sqrt(const Tensor<T>& a);
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> transpose2d(const Tensor<T>& a);

// Reductions and indexing.
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean_rows(const Tensor<T>& a);
template <typename T> Tensor<T> max_rows(const Tensor<T>& a);
template <typename T> Tensor<T> select_axis0(const Tensor<T>& a, int index);
template <typename T> Tensor<T> stack_axis0(const std::vector<Tensor<T>>& parts);
template <typename T>
Tensor<T> permute_rows(const Tensor<T>& a, const std::vector<int>& perm);
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, int c0, int c1);
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, int r0, int r1);

// Dense / conv primitives. `linear_op` computes x * w^T + b with w stored
// [out, in]; pass a default-constructed bias to skip it.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> linear_op(const Tensor<T>& x, const Tensor<T>& w,
                    const Tensor<T>& b);
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 int stride, int pad);
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, int kernel, int stride);
template <typename T>
Tensor<T> avgpool2d(const Tensor<T>& x, int kernel, int stride);
template <typename T> Tensor<T> global_avg_pool(const Tensor<T>& x);

// Fused softmax + negative log likelihood, averaged over rows.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels);

}  // namespace cra
