#include "cra/losses.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "cra/common.hpp"

namespace cra {

namespace {

template <typename T>
T value_distance(const T* a, const T* b, int d, bool squared) {
  T acc = T(0);
  for (int k = 0; k < d; ++k) {
    const T diff = a[k] - b[k];
    acc += diff * diff;
  }
  return squared ? acc : std::sqrt(acc);
}

// Distance between two embedding rows as a recorded scalar, with the same
// accumulation order as value_distance so mined values match the graph.
template <typename T>
Tensor<T> pair_distance(const Tensor<T>& embeddings, int i, int j,
                        bool squared) {
  Tensor<T> diff = sub(select_axis0(embeddings, i), select_axis0(embeddings, j));
  Tensor<T> d2 = sum(mul(diff, diff));
  return squared ? d2 : sqrt(d2);
}

}  // namespace

template <typename T>
Tensor<T> triplet_batch_hard(const Tensor<T>& embeddings,
                             const std::vector<int>& labels, T margin,
                             bool squared) {
  check<DimensionError>(embeddings.shape().size() == 2,
                        "embeddings must be a matrix, got ",
                        shape_str(embeddings.shape()));
  const int n = embeddings.shape()[0];
  const int d = embeddings.shape()[1];
  check<DimensionError>((int)labels.size() == n, "got ", labels.size(),
                        " labels for ", n, " embeddings");
  check<ConfigError>(margin >= T(0), "triplet margin must be non-negative");

  std::map<int, int> counts;
  for (int id : labels) ++counts[id];
  check<SamplingError>(counts.size() >= 2,
                       "batch holds a single identity; no negative exists");
  for (auto& [id, cnt] : counts)
    check<SamplingError>(cnt >= 2, "identity ", id, " has ", cnt,
                         " sample(s); no positive exists");

  const T* ev = embeddings.vals().data();
  Tensor<T> loss;
  for (int i = 0; i < n; ++i) {
    int pos = -1, neg = -1;
    T pos_d = T(0), neg_d = T(0);
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const T dist = value_distance(ev + (int64_t)i * d, ev + (int64_t)j * d,
                                    d, squared);
      if (labels[j] == labels[i]) {
        if (pos < 0 || dist > pos_d) pos = j, pos_d = dist;
      } else {
        if (neg < 0 || dist < neg_d) neg = j, neg_d = dist;
      }
    }
    Tensor<T> hinge = relu(add_scalar(
        sub(pair_distance(embeddings, i, pos, squared),
            pair_distance(embeddings, i, neg, squared)),
        margin));
    loss = i == 0 ? hinge : add(loss, hinge);
  }
  return scale(loss, T(1) / T(n));
}

std::vector<int> sample_pk(const std::vector<int>& clip_identities, int P,
                           int K, std::mt19937_64& rng) {
  check<ConfigError>(P >= 1 && K >= 1, "P and K must be positive, got P=", P,
                     " K=", K);
  std::map<int, std::vector<int>> by_id;
  for (int i = 0; i < (int)clip_identities.size(); ++i)
    by_id[clip_identities[i]].push_back(i);
  check<DatasetError>((int)by_id.size() >= P, "dataset holds ", by_id.size(),
                      " identities but the sampler needs ", P);

  std::vector<int> ids;
  ids.reserve(by_id.size());
  for (auto& [id, clips] : by_id) ids.push_back(id);
  for (int i = 0; i < P; ++i) {
    std::uniform_int_distribution<int> pick(i, (int)ids.size() - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }

  std::vector<int> batch;
  batch.reserve((size_t)P * K);
  for (int p = 0; p < P; ++p) {
    std::vector<int>& clips = by_id[ids[p]];
    if ((int)clips.size() >= K) {
      for (int k = 0; k < K; ++k) {
        std::uniform_int_distribution<int> pick(k, (int)clips.size() - 1);
        std::swap(clips[k], clips[pick(rng)]);
        batch.push_back(clips[k]);
      }
    } else {
      std::uniform_int_distribution<int> pick(0, (int)clips.size() - 1);
      for (int k = 0; k < K; ++k) batch.push_back(clips[pick(rng)]);
    }
  }
  return batch;
}

#define CRA_INSTANTIATE_LOSSES(T)                                            \
  template Tensor<T> triplet_batch_hard<T>(const Tensor<T>&,                 \
                                           const std::vector<int>&, T, bool);

CRA_INSTANTIATE_LOSSES(float)
CRA_INSTANTIATE_LOSSES(double)

}  // namespace cra
