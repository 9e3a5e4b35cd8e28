#include "cra/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "cra/common.hpp"
#include "cra/threads.hpp"

namespace cra {

template <typename T>
Tensor<T> distance_matrix(const Tensor<T>& q, const Tensor<T>& g) {
  check<DimensionError>(
      q.shape().size() == 2 && g.shape().size() == 2,
      "distance_matrix needs matrices, got ", shape_str(q.shape()), " and ",
      shape_str(g.shape()));
  check<DimensionError>(q.shape()[1] == g.shape()[1], "embedding widths ",
                        q.shape()[1], " and ", g.shape()[1], " differ");
  const int nq = q.shape()[0], ng = g.shape()[0], d = q.shape()[1];
  Tensor<T> out({nq, ng});
  const T* qv = q.vals().data();
  const T* gv = g.vals().data();
  T* ov = out.vals().data();
  const int nt = thread_count();
#pragma omp parallel for num_threads(nt) schedule(static) if (nt > 1)
  for (int i = 0; i < nq; ++i) {
    for (int j = 0; j < ng; ++j) {
      T acc = T(0);
      for (int k = 0; k < d; ++k) {
        const T diff = qv[(int64_t)i * d + k] - gv[(int64_t)j * d + k];
        acc += diff * diff;
      }
      ov[(int64_t)i * ng + j] = std::sqrt(acc);
    }
  }
  return out;
}

namespace {

template <typename T>
void validate_set(const EmbeddingSet<T>& set, const char* which) {
  check<DimensionError>(set.embeddings.shape().size() == 2, which,
                        " embeddings must be a matrix, got ",
                        shape_str(set.embeddings.shape()));
  const size_t n = (size_t)set.embeddings.shape()[0];
  check<DimensionError>(set.identities.size() == n && set.cameras.size() == n,
                        which, " labels do not match its ", n, " rows");
}

}  // namespace

template <typename T>
RetrievalResult<T> evaluate(const EmbeddingGallery<T>& data,
                            Protocol protocol, int max_rank) {
  validate_set(data.query, "query");
  validate_set(data.gallery, "gallery");
  check<ConfigError>(max_rank >= 1, "max_rank must be positive");
  const int nq = data.query.embeddings.shape()[0];
  const int ng = data.gallery.embeddings.shape()[0];
  check<DimensionError>(nq >= 1 && ng >= 1, "empty query or gallery set");

  Tensor<T> dist = distance_matrix(data.query.embeddings,
                                   data.gallery.embeddings);
  const T* dv = dist.vals().data();

  // Protocol filter and match availability, checked up front so failures
  // surface as one well-formed error instead of escaping a parallel loop.
  std::vector<std::vector<int>> valid(nq);
  for (int i = 0; i < nq; ++i) {
    int matches = 0;
    for (int j = 0; j < ng; ++j) {
      if (protocol == Protocol::CrossCamera &&
          data.gallery.identities[j] == data.query.identities[i] &&
          data.gallery.cameras[j] == data.query.cameras[i])
        continue;
      valid[i].push_back(j);
      matches += data.gallery.identities[j] == data.query.identities[i];
    }
    check<ProtocolError>(matches > 0, "query ", i, " (identity ",
                         data.query.identities[i], ", camera ",
                         data.query.cameras[i],
                         ") has no valid gallery match");
  }

  std::vector<T> ap(nq, T(0));
  std::vector<int> first_rank(nq, 0);
  const int nt = thread_count();
#pragma omp parallel for num_threads(nt) schedule(static) if (nt > 1)
  for (int i = 0; i < nq; ++i) {
    std::vector<std::pair<T, int>> order;
    order.reserve(valid[i].size());
    for (int j : valid[i]) order.emplace_back(dv[(int64_t)i * ng + j], j);
    std::sort(order.begin(), order.end());

    int hits = 0;
    T ap_acc = T(0);
    for (size_t pos = 0; pos < order.size(); ++pos) {
      if (data.gallery.identities[order[pos].second] !=
          data.query.identities[i])
        continue;
      ++hits;
      ap_acc += T(hits) / T(pos + 1);
      if (hits == 1) first_rank[i] = (int)pos + 1;
    }
    ap[i] = ap_acc / T(hits);
  }

  RetrievalResult<T> result;
  result.per_query_ap = ap;
  result.cmc.assign(max_rank, T(0));
  for (int i = 0; i < nq; ++i) {
    result.map += ap[i];
    if (first_rank[i] <= max_rank) result.cmc[first_rank[i] - 1] += T(1);
  }
  result.map /= T(nq);
  T running = T(0);
  for (int r = 0; r < max_rank; ++r) {
    running += result.cmc[r];
    result.cmc[r] = running / T(nq);
  }
  return result;
}

namespace {

template <typename T>
T rank_value(const RetrievalResult<T>& result, int rank) {
  check<ConfigError>((int)result.cmc.size() >= rank,
                     "result holds no rank-", rank, " entry");
  return result.cmc[rank - 1];
}

}  // namespace

template <typename T>
std::string report_text(const RetrievalResult<T>& result) {
  char line[128];
  std::string out;
  for (int rank : {1, 5, 10, 20}) {
    std::snprintf(line, sizeof line, "R-%-3d %.4f\n", rank,
                  (double)rank_value(result, rank));
    out += line;
  }
  std::snprintf(line, sizeof line, "mAP   %.4f\n", (double)result.map);
  out += line;
  return out;
}

template <typename T>
std::string report_kv(const RetrievalResult<T>& result) {
  char line[128];
  std::string out;
  for (int rank : {1, 5, 10, 20}) {
    std::snprintf(line, sizeof line, "r%d=%.6f\n", rank,
                  (double)rank_value(result, rank));
    out += line;
  }
  std::snprintf(line, sizeof line, "map=%.6f\n", (double)result.map);
  out += line;
  return out;
}

#define CRA_INSTANTIATE_METRICS(T)                                           \
  template Tensor<T> distance_matrix<T>(const Tensor<T>&, const Tensor<T>&); \
  template RetrievalResult<T> evaluate<T>(const EmbeddingGallery<T>&,        \
                                          Protocol, int);                    \
  template std::string report_text<T>(const RetrievalResult<T>&);            \
  template std::string report_kv<T>(const RetrievalResult<T>&);

CRA_INSTANTIATE_METRICS(float)
CRA_INSTANTIATE_METRICS(double)

}  // namespace cra
