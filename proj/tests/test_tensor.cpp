#include <doctest.h>

#include <cmath>
#include <vector>

#include "cra/gradcheck.hpp"
#include "cra/rng.hpp"
#include "cra/tensor.hpp"

namespace {

using cra::Graph;
using cra::GradCheckReport;
using cra::ParamRef;
using cra::Shape;
using Td = cra::Tensor<double>;

Td random_tensor(uint64_t seed, Shape shape, double lo = -1.0,
                 double hi = 1.0) {
  Td t(shape);
  auto rng = cra::make_rng(seed);
  cra::fill_uniform(rng, t.vals().data(), t.numel(), lo, hi);
  return t;
}

void expect_grads_match(const std::function<Td()>& loss_fn,
                        std::vector<ParamRef> params) {
  GradCheckReport report = cra::grad_check(loss_fn, params);
  CAPTURE(report.worst_param);
  CAPTURE(report.worst_index);
  CHECK(report.max_rel_err < 1e-4);
}

}  // namespace

TEST_CASE("sigmoid is numerically stable at large magnitudes") {
  Td x = Td::from({3}, {50.0, -50.0, 0.0});
  Td y = cra::sigmoid(x);
  CHECK(std::abs(y.vals()[0] - 1.0) < 1e-9);
  CHECK(y.vals()[1] > 0.0);
  CHECK(y.vals()[1] < 1e-20);
  CHECK(y.vals()[2] == doctest::Approx(0.5));
}

TEST_CASE("sigmoid is symmetric about zero") {
  Td x = random_tensor(4, {32}, -8.0, 8.0);
  Td y_pos = cra::sigmoid(x);
  Td y_neg = cra::sigmoid(cra::scale(x, -1.0));
  for (int i = 0; i < 32; ++i)
    CHECK(y_pos.vals()[i] == doctest::Approx(1.0 - y_neg.vals()[i])
                                 .epsilon(1e-12));
}

TEST_CASE("matmul and elementwise product gradients are tight") {
  Td a = random_tensor(40, {4, 5});
  Td b = random_tensor(41, {5, 3});
  auto mm = cra::grad_check(
      [&] { return cra::sum(cra::matmul(a, b)); }, {{"a", &a}, {"b", &b}});
  CHECK(mm.max_rel_err < 1e-6);

  Td u = random_tensor(42, {6, 4});
  Td v = random_tensor(43, {6, 4});
  auto ew = cra::grad_check([&] { return cra::sum(cra::mul(u, v)); },
                            {{"u", &u}, {"v", &v}});
  CHECK(ew.max_rel_err < 1e-6);
}

TEST_CASE("the gradient of a plain sum is all ones") {
  Td x = random_tensor(44, {3, 4});
  Graph<double> g;
  g.attach(x);
  g.backward(cra::sum(x));
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(x.grads()[i] == 1.0);
}

TEST_CASE("closed-form gradient of sum(x*x) is 2x") {
  Td x = random_tensor(5, {4, 3});
  Graph<double> g;
  g.attach(x);
  Td loss = cra::sum(cra::mul(x, x));
  g.backward(loss);
  for (int64_t i = 0; i < x.numel(); ++i)
    CHECK(x.grads()[i] == doctest::Approx(2.0 * x.vals()[i]));
}

TEST_CASE("backward requires a scalar loss from the same graph") {
  Td x = random_tensor(6, {2, 2});
  Graph<double> g;
  g.attach(x);
  Td y = cra::mul(x, x);
  CHECK_THROWS_AS(g.backward(y), cra::ContractError);
  Graph<double> other;
  Td z = cra::sum(y);
  CHECK_THROWS_AS(other.backward(z), cra::ContractError);
}

TEST_CASE("mixing tensors from two live graphs is rejected") {
  Td a = random_tensor(7, {2});
  Td b = random_tensor(8, {2});
  Graph<double> g1, g2;
  g1.attach(a);
  g2.attach(b);
  CHECK_THROWS_AS(cra::add(a, b), cra::ContractError);
}

TEST_CASE("leaf gradients accumulate across backward calls") {
  Td x = random_tensor(9, {3});
  Graph<double> g;
  g.attach(x);
  Td loss = cra::sum(cra::mul(x, x));
  g.backward(loss);
  std::vector<double> once = x.grads();
  g.backward(loss);
  for (size_t i = 0; i < once.size(); ++i)
    CHECK(x.grads()[i] == doctest::Approx(2.0 * once[i]));
  x.zero_grad();
  g.backward(loss);
  for (size_t i = 0; i < once.size(); ++i)
    CHECK(x.grads()[i] == doctest::Approx(once[i]));
}

TEST_CASE("detached tensors receive no gradient") {
  Td x = random_tensor(10, {4});
  Td c = random_tensor(11, {4});
  Graph<double> g;
  g.attach(x);
  Td loss = cra::sum(cra::mul(x, c));
  g.backward(loss);
  CHECK(c.impl->grad.empty());
  for (int i = 0; i < 4; ++i)
    CHECK(x.grads()[i] == doctest::Approx(c.vals()[i]));
}

TEST_CASE("graph teardown releases attached tensors for reuse") {
  Td x = random_tensor(12, {2});
  {
    Graph<double> g;
    g.attach(x);
    Td loss = cra::sum(x);
    g.backward(loss);
  }
  CHECK(x.impl->graph == nullptr);
  Graph<double> g2;
  g2.attach(x);
  Td loss = cra::sum(cra::scale(x, 3.0));
  g2.backward(loss);
}

TEST_CASE("reshape copies storage") {
  Td x = Td::from({2, 2}, {1, 2, 3, 4});
  Td y = cra::reshape(x, {4});
  x.vals()[0] = 99;
  CHECK(y.vals()[0] == 1);
  CHECK_THROWS_AS(cra::reshape(x, {3}), cra::DimensionError);
}

TEST_CASE("broadcast add follows suffix rules") {
  Td a = Td::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Td b = Td::from({3}, {10, 20, 30});
  Td y = cra::add(a, b);
  CHECK(y.vals() == std::vector<double>{11, 22, 33, 14, 25, 36});
  Td bad = Td::from({2}, {1, 2});
  CHECK_THROWS_AS(cra::add(a, bad), cra::DimensionError);
}

TEST_CASE("broadcast backward sums over leading dims") {
  Td a = random_tensor(13, {4, 3});
  Td b = random_tensor(14, {3});
  Graph<double> g;
  g.attach(b);
  Td loss = cra::sum(cra::mul(a, b));
  g.backward(loss);
  for (int j = 0; j < 3; ++j) {
    double want = 0.0;
    for (int i = 0; i < 4; ++i) want += a.vals()[i * 3 + j];
    CHECK(b.grads()[j] == doctest::Approx(want));
  }
}

TEST_CASE("max_rows breaks ties toward the lowest row index") {
  Td a = Td::from({3, 2}, {5, 1, 5, 2, 3, 2});
  Graph<double> g;
  g.attach(a);
  Td loss = cra::sum(cra::max_rows(a));
  g.backward(loss);
  CHECK(a.grads() == std::vector<double>{1, 0, 0, 1, 0, 0});
}

TEST_CASE("cross entropy of uniform logits is log(k)") {
  Td logits(Shape{2, 5}, 0.7);
  Td loss = cra::cross_entropy(logits, {0, 3});
  CHECK(loss.item() == doctest::Approx(std::log(5.0)));
}

TEST_CASE("cross entropy decreases when the true logit grows") {
  Td a = Td::from({1, 3}, {0.0, 0.0, 0.0});
  Td b = Td::from({1, 3}, {2.0, 0.0, 0.0});
  CHECK(cra::cross_entropy(b, {0}).item() <
        cra::cross_entropy(a, {0}).item());
  CHECK_THROWS_AS(cra::cross_entropy(a, {3}), cra::ContractError);
  CHECK_THROWS_AS(cra::cross_entropy(a, {0, 1}), cra::DimensionError);
}

TEST_CASE("gradients: elementwise chain") {
  Td x = random_tensor(20, {3, 4}, 0.2, 1.5);
  Td w = random_tensor(21, {3, 4});
  expect_grads_match(
      [&] {
        Td h = cra::mul(cra::sigmoid(x), cra::tanh(w));
        h = cra::add_scalar(cra::scale(h, 1.7), 0.3);
        h = cra::sub(h, cra::relu(w));
        return cra::sum(cra::mul(h, cra::sqrt(x)));
      },
      {{"x", &x}, {"w", &w}});
}

TEST_CASE("gradients: matmul, transpose and reductions") {
  Td a = random_tensor(22, {3, 4});
  Td b = random_tensor(23, {4, 2});
  expect_grads_match(
      [&] {
        Td y = cra::matmul(a, b);
        Td z = cra::matmul(cra::transpose2d(y), a);
        Td m = cra::add(cra::mean_rows(z), cra::max_rows(z));
        return cra::sum(cra::mul(m, m));
      },
      {{"a", &a}, {"b", &b}});
}

TEST_CASE("gradients: linear layer with bias") {
  Td x = random_tensor(24, {5, 3});
  Td w = random_tensor(25, {4, 3});
  Td bias = random_tensor(26, {4});
  expect_grads_match(
      [&] { return cra::sum(cra::tanh(cra::linear_op(x, w, bias))); },
      {{"x", &x}, {"w", &w}, {"bias", &bias}});
}

TEST_CASE("gradients: row selection, stacking, slicing, permutation") {
  Td a = random_tensor(27, {4, 6});
  std::vector<int> perm = {2, 0, 3, 1};
  expect_grads_match(
      [&] {
        Td p = cra::permute_rows(a, perm);
        Td s = cra::slice_cols(p, 1, 4);
        std::vector<Td> rows;
        for (int i = 0; i < 4; ++i)
          rows.push_back(cra::select_axis0(s, 3 - i));
        Td restacked = cra::stack_axis0(rows);
        return cra::sum(cra::mul(restacked, restacked));
      },
      {{"a", &a}});
}

TEST_CASE("gradients: conv, pooling and cross entropy") {
  Td x = random_tensor(28, {2, 3, 6, 5});
  Td w = random_tensor(29, {4, 3, 3, 3}, -0.5, 0.5);
  Td bias = random_tensor(30, {4});
  Td cls = random_tensor(31, {4, 4});
  std::vector<int> labels = {1, 3};
  expect_grads_match(
      [&] {
        Td y = cra::conv2d(x, w, bias, 2, 1);
        Td pooled = cra::global_avg_pool(cra::relu(y));
        Td logits = cra::matmul(pooled, cra::transpose2d(cls));
        return cra::cross_entropy(logits, labels);
      },
      {{"x", &x}, {"w", &w}, {"bias", &bias}, {"cls", &cls}});
}

TEST_CASE("gradients: maxpool routes to the window maximum") {
  Td x = random_tensor(32, {1, 2, 4, 4});
  expect_grads_match(
      [&] {
        Td y = cra::maxpool2d(x, 2, 2);
        return cra::sum(cra::mul(y, y));
      },
      {{"x", &x}});
}

TEST_CASE("conv2d validates shapes") {
  Td x = random_tensor(33, {1, 3, 4, 4});
  Td w = random_tensor(34, {2, 4, 3, 3});
  CHECK_THROWS_AS(cra::conv2d(x, w, Td(), 1, 1), cra::DimensionError);
  Td w2 = random_tensor(35, {2, 3, 3, 3});
  CHECK_THROWS_AS(cra::conv2d(x, w2, Td(), 0, 1), cra::ConfigError);
}
