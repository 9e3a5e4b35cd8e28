#include <doctest.h>

#include <cmath>
#include <map>
#include <vector>

#include "cra/gradcheck.hpp"
#include "cra/losses.hpp"
#include "cra/rng.hpp"
#include "cra/tensor.hpp"

namespace {

using cra::ParamRef;
using Td = cra::Tensor<double>;

Td random_embeddings(uint64_t seed, int n, int d, double lo = -1.0,
                     double hi = 1.0) {
  Td e({n, d});
  auto rng = cra::make_rng(seed);
  cra::fill_uniform(rng, e.vals().data(), e.numel(), lo, hi);
  return e;
}

// Exhaustive mining oracle, sharing nothing with the library loop except
// the accumulation-order conventions it promises: distances accumulate
// over the embedding axis in ascending order, ties resolve to the lowest
// row index, hinges sum in anchor order and the total is multiplied by the
// reciprocal of the anchor count.
double brute_force_triplet(const Td& e, const std::vector<int>& labels,
                           double margin, bool squared) {
  const int n = e.shape()[0], d = e.shape()[1];
  auto dist = [&](int i, int j) {
    double acc = 0;
    for (int k = 0; k < d; ++k) {
      const double diff = e.vals()[i * d + k] - e.vals()[j * d + k];
      acc += diff * diff;
    }
    return squared ? acc : std::sqrt(acc);
  };
  double total = 0;
  for (int i = 0; i < n; ++i) {
    double best_pos = -1, best_neg = -1;
    bool have_pos = false, have_neg = false;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dij = dist(i, j);
      if (labels[j] == labels[i]) {
        if (!have_pos || dij > best_pos) best_pos = dij, have_pos = true;
      } else {
        if (!have_neg || dij < best_neg) best_neg = dij, have_neg = true;
      }
    }
    const double hinge = best_pos - best_neg + margin;
    total += hinge > 0 ? hinge : 0;
  }
  return total * (1.0 / n);
}

std::vector<int> pk_labels(int p, int k) {
  std::vector<int> labels;
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < k; ++j) labels.push_back(i);
  return labels;
}

}  // namespace

TEST_CASE("batch-hard triplet equals exhaustive mining on random batches") {
  const std::vector<int> labels = pk_labels(4, 4);
  for (int trial = 0; trial < 100; ++trial) {
    Td e = random_embeddings(100 + trial, 16, 8);
    const bool squared = trial % 2 == 1;
    const double got =
        cra::triplet_batch_hard(e, labels, 0.3, squared).item();
    const double want = brute_force_triplet(e, labels, 0.3, squared);
    CHECK(got == want);
  }
}

TEST_CASE("identical embeddings cost exactly the margin") {
  Td e({6, 4}, 0.75);
  const double loss =
      cra::triplet_batch_hard(e, {0, 0, 0, 1, 1, 1}, 0.3).item();
  CHECK(loss == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("well-separated identity clusters cost nothing") {
  Td e = Td::from({4, 2}, {0, 0, 0.01, 0, 10, 10, 10.01, 10});
  CHECK(cra::triplet_batch_hard(e, {0, 0, 1, 1}, 0.3).item() == 0.0);
}

TEST_CASE("triplet is invariant to a common translation of all embeddings") {
  const std::vector<int> labels = pk_labels(3, 3);
  Td e = random_embeddings(7, 9, 5);
  Td moved = e.clone();
  for (double& v : moved.vals()) v += 2.5;
  const double a = cra::triplet_batch_hard(e, labels, 0.3).item();
  const double b = cra::triplet_batch_hard(moved, labels, 0.3).item();
  CHECK(a == doctest::Approx(b).epsilon(1e-9));
}

TEST_CASE("triplet rejects batches that cannot be mined") {
  Td e = random_embeddings(8, 4, 3);
  CHECK_THROWS_AS(cra::triplet_batch_hard(e, {0, 0, 0, 0}, 0.3),
                  cra::SamplingError);
  CHECK_THROWS_AS(cra::triplet_batch_hard(e, {0, 0, 0, 1}, 0.3),
                  cra::SamplingError);
  CHECK_THROWS_AS(cra::triplet_batch_hard(e, {0, 0, 1, 1}, -0.1),
                  cra::ConfigError);
  CHECK_THROWS_AS(cra::triplet_batch_hard(e, {0, 0, 1}, 0.3),
                  cra::DimensionError);
  CHECK_THROWS_AS(cra::triplet_batch_hard(Td({4}), {0, 0, 1, 1}, 0.3),
                  cra::DimensionError);
}

TEST_CASE("triplet gradients agree with finite differences") {
  Td e = random_embeddings(9, 8, 4);
  const std::vector<int> labels = pk_labels(2, 4);
  for (bool squared : {false, true}) {
    auto report = cra::grad_check(
        [&] { return cra::triplet_batch_hard(e, labels, 0.3, squared); },
        {{"e", &e}});
    CHECK(report.max_rel_err < 1e-4);
  }
}

TEST_CASE("cross entropy on uniform logits is the log class count") {
  for (int k : {2, 5, 10}) {
    Td logits({4, k}, 1.7);
    const double loss = cra::cross_entropy(logits, {0, 1, 0, k - 1}).item();
    CHECK(std::abs(loss - std::log((double)k)) < 1e-9);
  }
}

TEST_CASE("the training objective is the plain sum of its two losses") {
  Td tri = Td::scalar(0.125);
  Td ce = Td::scalar(2.5);
  CHECK(cra::total_loss(tri, ce).item() == 2.625);
}

TEST_CASE("pk sampling returns K clips for each of P distinct identities") {
  const std::vector<int> ids = {0, 0, 0, 0, 1, 1, 1, 1, 2, 2,
                                2, 2, 3, 3, 3, 3, 4, 4, 4, 4};
  auto rng = cra::make_rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> batch = cra::sample_pk(ids, 4, 4, rng);
    REQUIRE(batch.size() == 16);
    std::map<int, int> per_id;
    for (int idx : batch) {
      REQUIRE(idx >= 0);
      REQUIRE(idx < (int)ids.size());
      ++per_id[ids[idx]];
    }
    CHECK(per_id.size() == 4);
    for (auto& [id, count] : per_id) CHECK(count == 4);
  }
}

TEST_CASE("pk sampling draws with replacement only when clips are scarce") {
  const std::vector<int> ids = {0, 0, 0, 1, 1, 1};
  auto rng = cra::make_rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> batch = cra::sample_pk(ids, 2, 3, rng);
    std::sort(batch.begin(), batch.end());
    CHECK(batch == std::vector<int>{0, 1, 2, 3, 4, 5});
  }
  // Identity 1 owns a single clip, so a K=2 draw must repeat it while the
  // two clips of identity 0 stay distinct.
  std::vector<int> batch = cra::sample_pk({0, 0, 1}, 2, 2, rng);
  REQUIRE(batch.size() == 4);
  std::sort(batch.begin(), batch.end());
  CHECK(batch == std::vector<int>{0, 1, 2, 2});
}

TEST_CASE("pk sampling rejects impossible requests") {
  auto rng = cra::make_rng(12);
  CHECK_THROWS_AS(cra::sample_pk({0, 0, 1, 1}, 3, 2, rng), cra::DatasetError);
  CHECK_THROWS_AS(cra::sample_pk({0, 1}, 0, 2, rng), cra::ConfigError);
  CHECK_THROWS_AS(cra::sample_pk({0, 1}, 2, 0, rng), cra::ConfigError);
}

TEST_CASE("pk sampling picks identities uniformly over many draws") {
  std::vector<int> ids;
  for (int id = 0; id < 8; ++id)
    for (int j = 0; j < 3; ++j) ids.push_back(id);
  auto rng = cra::make_rng(13);
  const int draws = 10000;
  std::vector<int> hits(8, 0);
  for (int trial = 0; trial < draws; ++trial) {
    std::vector<int> batch = cra::sample_pk(ids, 2, 1, rng);
    for (int idx : batch) ++hits[ids[idx]];
  }
  // Each draw selects 2 of 8 identities: expected hits per identity with a
  // 3-sigma band under the binomial approximation.
  const double expect = draws * 2.0 / 8.0;
  const double sigma = std::sqrt(draws * (2.0 / 8.0) * (6.0 / 8.0));
  for (int id = 0; id < 8; ++id)
    CHECK(std::abs(hits[id] - expect) < 3.0 * sigma);
}
