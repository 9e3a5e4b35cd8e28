#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace cra {

// splitmix64 finalizer; used to derive independent seeds from a run seed.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t mix64(uint64_t a, uint64_t b) { return mix64(mix64(a) ^ b); }
inline uint64_t mix64(uint64_t a, uint64_t b, uint64_t c) {
  return mix64(mix64(a, b) ^ c);
}

inline std::mt19937_64 make_rng(uint64_t seed) { return std::mt19937_64(mix64(seed)); }
inline std::mt19937_64 make_rng(uint64_t seed, uint64_t stream) {
  return std::mt19937_64(mix64(seed, stream));
}

// Uniform permutation of 0..n-1, fully determined by the seed.
inline std::vector<int> seeded_permutation(uint64_t seed, int n) {
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  std::mt19937_64 rng = make_rng(seed);
  for (int i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<int> dist(0, i);
    std::swap(perm[i], perm[dist(rng)]);
  }
  return perm;
}

inline std::vector<int> random_permutation(std::mt19937_64& rng, int n) {
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  for (int i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<int> dist(0, i);
    std::swap(perm[i], perm[dist(rng)]);
  }
  return perm;
}

template <typename T>
void fill_uniform(std::mt19937_64& rng, T* data, int64_t n, T lo, T hi) {
  std::uniform_real_distribution<T> dist(lo, hi);
  for (int64_t i = 0; i < n; ++i) data[i] = dist(rng);
}

template <typename T>
void fill_normal(std::mt19937_64& rng, T* data, int64_t n, T mean, T stddev) {
  std::normal_distribution<T> dist(mean, stddev);
  for (int64_t i = 0; i < n; ++i) data[i] = dist(rng);
}

}  // namespace cra
