#pragma once

#include <random>
#include <vector>

#include "cra/tensor.hpp"

namespace cra {

// One P-identities-times-K-clips training batch.
template <typename T>
struct PkBatch {
  Tensor<T> embeddings;     // [(P*K) x D]
  std::vector<int> labels;  // identity per row, exactly K rows per identity
  Tensor<T> logits;         // optional, [(P*K) x num_ids]
};

// Batch-hard triplet loss. For each anchor the farthest same-identity row is
// the positive and the nearest other-identity row the negative (Euclidean,
// or squared Euclidean behind the flag; ties resolved to the lowest row
// index). The per-anchor hinges [d+ - d- + margin]+ are summed in ascending
// anchor order and normalized by multiplying with the reciprocal of the
// anchor count. Gradients flow through the selected pairs only.
template <typename T>
Tensor<T> triplet_batch_hard(const Tensor<T>& embeddings,
                             const std::vector<int>& labels, T margin,
                             bool squared = false);

template <typename T>
Tensor<T> triplet_batch_hard(const PkBatch<T>& batch, T margin,
                             bool squared = false) {
  return triplet_batch_hard(batch.embeddings, batch.labels, margin, squared);
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& triplet, const Tensor<T>& ce) {
  return add(triplet, ce);
}

// Draws P distinct identities, then K clip indices per identity (without
// replacement when the identity has at least K clips, with replacement
// otherwise). Returns P*K indices into clip_identities, K per identity.
std::vector<int> sample_pk(const std::vector<int>& clip_identities, int P,
                           int K, std::mt19937_64& rng);

}  // namespace cra
