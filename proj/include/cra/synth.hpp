#pragma once

#include <cstdint>
#include <vector>

#include "cra/tensor.hpp"

namespace cra {

struct SynthSpec {
  int num_ids = 20;
  int clips_per_id = 4;
  int frames_per_clip = 4;
  int channels = 3, height = 64, width = 32;
  int cameras = 2;
  double noise_std = 0.05;
  double occlusion_prob = 0.0;
  int jitter_pixels = 1;
  uint64_t seed = 1;
};

template <typename T>
struct ClipRecord {
  Tensor<T> frames;  // [t x C x H x W]
  int identity = 0;
  int camera = 0;
};

template <typename T>
struct SynthDataset {
  SynthSpec spec;
  std::vector<ClipRecord<T>> clips;
  std::vector<Tensor<double>> templates;  // one latent image per identity
};

// Each identity gets a seeded colored-blob template; every frame is that
// template after integer jitter, a per-camera color shift, Gaussian pixel
// noise and an optional rectangular occlusion. Generation happens in double
// precision and is cast to T at the end, so datasets agree across the
// library's scalar types. Cameras rotate over the clips of an identity.
template <typename T>
SynthDataset<T> generate(const SynthSpec& spec);

struct SplitIndices {
  std::vector<int> train, query, gallery;  // clip indices into the dataset
};

// Disjoint 50/50 identity split. Test clips from camera 0 become queries,
// the rest the gallery.
template <typename T>
SplitIndices split(const SynthDataset<T>& dataset, Protocol protocol);

}  // namespace cra
