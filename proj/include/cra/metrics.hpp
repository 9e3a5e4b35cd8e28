#pragma once

#include <string>
#include <vector>

#include "cra/tensor.hpp"

namespace cra {

// Parallel arrays describing one labeled embedding set.
template <typename T>
struct EmbeddingSet {
  Tensor<T> embeddings;         // [n x D]
  std::vector<int> identities;  // one per row
  std::vector<int> cameras;     // one per row
};

template <typename T>
struct EmbeddingGallery {
  EmbeddingSet<T> query;
  EmbeddingSet<T> gallery;
};

template <typename T>
struct RetrievalResult {
  std::vector<T> cmc;  // rank accuracies, 1-based ranks, cmc[0] = R-1
  T map = T(0);
  std::vector<T> per_query_ap;
};

// Pairwise Euclidean distances between the rows of q [nq x D] and
// g [ng x D]. Value-level: the result carries no gradient history.
template <typename T>
Tensor<T> distance_matrix(const Tensor<T>& q, const Tensor<T>& g);

// Ranks the gallery per query by ascending distance (ties broken by
// ascending gallery index) and scores the cumulative matching curve plus
// mean average precision. The cross-camera protocol drops gallery entries
// sharing both identity and camera with the query before ranking; a query
// left without a single same-identity gallery entry is a protocol error.
template <typename T>
RetrievalResult<T> evaluate(const EmbeddingGallery<T>& data,
                            Protocol protocol, int max_rank = 20);

template <typename T>
std::string report_text(const RetrievalResult<T>& result);
// Machine-readable "key=value" lines with keys r1, r5, r10, r20, map.
template <typename T>
std::string report_kv(const RetrievalResult<T>& result);

}  // namespace cra
