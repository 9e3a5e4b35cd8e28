#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "cra/gradcheck.hpp"
#include "cra/recurrent.hpp"
#include "cra/rng.hpp"
#include "cra/tensor.hpp"

namespace {

using cra::Graph;
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

double sig(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

TEST_CASE("lstm with all-zero weights emits all-zero hidden states") {
  auto rng = cra::make_rng(30);
  cra::LstmCell<double> cell(4, 3, rng);
  cell.w_ih.vals().assign(cell.w_ih.numel(), 0.0);
  cell.w_hh.vals().assign(cell.w_hh.numel(), 0.0);
  cell.bias.vals().assign(cell.bias.numel(), 0.0);
  Td seq = random_tensor(31, {6, 4});
  Td out = cra::lstm_forward(cell, seq);
  REQUIRE(out.shape() == Shape{6, 3});
  for (int64_t i = 0; i < out.numel(); ++i) CHECK(out.vals()[i] == 0.0);
}

TEST_CASE("single-step lstm matches the closed-form gate equations") {
  auto rng = cra::make_rng(32);
  cra::LstmCell<double> cell(1, 1, rng);
  cell.w_ih.vals() = {0.7, -0.2, 0.5, 0.9};  // packed (i, f, g, o)
  cell.w_hh.vals() = {0.3, 0.1, -0.4, 0.2};  // unused when h0 = 0
  cell.bias.vals() = {0.1, 0.2, -0.1, 0.05};
  const double x0 = 0.6;
  Td seq = Td::from({1, 1}, {x0});
  Td out = cra::lstm_forward(cell, seq);

  double i = sig(0.7 * x0 + 0.1);
  double f = sig(-0.2 * x0 + 0.2);
  double g = std::tanh(0.5 * x0 - 0.1);
  double o = sig(0.9 * x0 + 0.05);
  double c1 = f * 0.0 + i * g;
  CHECK(out.vals()[0] == doctest::Approx(o * std::tanh(c1)).epsilon(1e-12));
}

TEST_CASE("lstm rejects an empty sequence") {
  auto rng = cra::make_rng(33);
  cra::LstmCell<double> cell(2, 2, rng);
  Td seq({0, 2});
  CHECK_THROWS_AS(cra::lstm_forward(cell, seq), cra::DimensionError);
}

TEST_CASE("lstm hidden states stay strictly inside the unit box") {
  auto rng = cra::make_rng(34);
  cra::LstmCell<double> cell(5, 4, rng);
  Td seq = random_tensor(35, {40, 5}, -3.0, 3.0);
  Td out = cra::lstm_forward(cell, seq);
  for (int64_t i = 0; i < out.numel(); ++i) {
    CHECK(out.vals()[i] < 1.0);
    CHECK(out.vals()[i] > -1.0);
  }
}

TEST_CASE("forget gate bias starts open") {
  auto rng = cra::make_rng(36);
  cra::LstmCell<double> cell(3, 4, rng);
  for (int k = 0; k < 16; ++k)
    CHECK(cell.bias.vals()[k] == (k >= 4 && k < 8 ? 1.0 : 0.0));
}

TEST_CASE("lstm parameter counts") {
  CHECK(cra::lstm_param_count(1, 1, false) == 12);
  CHECK(cra::lstm_param_count(8, 16, false) == 4 * (8 * 16 + 16 * 16 + 16));
  for (int h : {1, 16, 128, 512})
    CHECK(cra::lstm_param_count(h, h, true) ==
          2 * cra::lstm_param_count(h, h, false));
  auto rng = cra::make_rng(37);
  cra::LstmCell<double> cell(8, 16, rng);
  CHECK(cell.param_count() == cra::lstm_param_count(8, 16, false));
  cra::BiLstm<double> bi(8, 16, rng);
  CHECK(bi.param_count() == cra::lstm_param_count(8, 16, true));
}

TEST_CASE("lstm forward is bitwise deterministic for a fixed seed") {
  Td seq = random_tensor(38, {7, 3});
  std::vector<double> first;
  for (int run = 0; run < 2; ++run) {
    auto rng = cra::make_rng(39);
    cra::LstmCell<double> cell(3, 5, rng);
    Td out = cra::lstm_forward(cell, seq);
    if (run == 0)
      first = out.vals();
    else
      CHECK(out.vals() == first);
  }
}

TEST_CASE("bidirectional lstm sums the two directional passes") {
  auto rng = cra::make_rng(40);
  cra::BiLstm<double> bi(3, 4, rng);
  Td seq = random_tensor(41, {6, 3});
  Td fused = bi.forward(seq);
  REQUIRE(fused.shape() == Shape{6, 4});

  std::vector<int> rev = {5, 4, 3, 2, 1, 0};
  Td fwd = cra::lstm_forward(bi.fwd, seq);
  Td bwd = cra::permute_rows(
      cra::lstm_forward(bi.bwd, cra::permute_rows(seq, rev)), rev);
  for (int64_t i = 0; i < fused.numel(); ++i)
    CHECK(fused.vals()[i] == fwd.vals()[i] + bwd.vals()[i]);
}

TEST_CASE("gradients flow through a five-step lstm") {
  auto rng = cra::make_rng(42);
  cra::LstmCell<double> cell(3, 2, rng);
  Td seq = random_tensor(43, {5, 3});
  auto report = cra::grad_check(
      [&] {
        Td out = cra::lstm_forward(cell, seq);
        return cra::sum(cra::mul(out, out));
      },
      {{"seq", &seq},
       {"w_ih", &cell.w_ih},
       {"w_hh", &cell.w_hh},
       {"bias", &cell.bias}});
  CAPTURE(report.worst_param);
  CAPTURE(report.worst_index);
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("gradients flow through the bidirectional fusion") {
  auto rng = cra::make_rng(44);
  cra::BiLstm<double> bi(2, 3, rng);
  Td seq = random_tensor(45, {4, 2});
  cra::ParamMap<double> params;
  bi.collect("bi", params);
  std::vector<ParamRef> refs;
  for (auto& [name, t] : params) refs.push_back({name, t});
  refs.push_back({"seq", &seq});
  auto report = cra::grad_check(
      [&] { return cra::sum(cra::mul(bi.forward(seq), bi.forward(seq))); },
      refs);
  CAPTURE(report.worst_param);
  CHECK(report.max_rel_err < 1e-4);
}
