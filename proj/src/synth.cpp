#include "cra/synth.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "cra/common.hpp"
#include "cra/rng.hpp"

namespace cra {

namespace {

// Stream tags keeping the per-identity, per-camera and per-frame generators
// on disjoint counter ranges of the same master seed.
constexpr uint64_t kTemplateStream = 0x11;
constexpr uint64_t kCameraStream = 0x22;
constexpr uint64_t kFrameStream = 0x33;

void validate(const SynthSpec& s) {
  check<ConfigError>(s.num_ids >= 2, "need at least 2 identities, got ",
                     s.num_ids);
  check<ConfigError>(s.clips_per_id >= 1 && s.frames_per_clip >= 1,
                     "clips and frames per clip must be positive");
  check<ConfigError>(s.channels >= 1 && s.height >= 1 && s.width >= 1,
                     "degenerate image shape ", s.channels, "x", s.height,
                     "x", s.width);
  check<ConfigError>(s.cameras >= 1, "need at least one camera");
  check<ConfigError>(s.noise_std >= 0.0, "noise level must be non-negative");
  check<ConfigError>(s.occlusion_prob >= 0.0 && s.occlusion_prob <= 1.0,
                     "occlusion probability outside [0,1]");
  check<ConfigError>(
      s.jitter_pixels >= 0 && s.jitter_pixels < std::min(s.height, s.width),
      "jitter of ", s.jitter_pixels, " pixels exceeds the image");
}

Tensor<double> make_template(const SynthSpec& s, int id) {
  auto rng = make_rng(s.seed, mix64(kTemplateStream, (uint64_t)id));
  Tensor<double> tmpl({s.channels, s.height, s.width});
  const double sz = (double)std::min(s.height, s.width);
  std::uniform_real_distribution<double> uy(0.0, (double)s.height);
  std::uniform_real_distribution<double> ux(0.0, (double)s.width);
  std::uniform_real_distribution<double> usig(sz / 8.0, sz / 3.0);
  std::uniform_real_distribution<double> uamp(0.4, 1.2);
  for (int ch = 0; ch < s.channels; ++ch) {
    double* plane = tmpl.vals().data() + (int64_t)ch * s.height * s.width;
    for (int blob = 0; blob < 3; ++blob) {
      const double cy = uy(rng), cx = ux(rng);
      const double sig = usig(rng), amp = uamp(rng);
      for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x) {
          const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
          plane[y * s.width + x] += amp * std::exp(-d2 / (2.0 * sig * sig));
        }
    }
  }
  return tmpl;
}

std::vector<double> camera_shift(const SynthSpec& s, int cam) {
  auto rng = make_rng(s.seed, mix64(kCameraStream, (uint64_t)cam));
  std::uniform_real_distribution<double> ushift(-0.35, 0.35);
  std::vector<double> shift(s.channels);
  for (double& v : shift) v = ushift(rng);
  return shift;
}

std::vector<double> make_frame(const SynthSpec& s,
                               const Tensor<double>& tmpl,
                               const std::vector<double>& shift,
                               int clip_index, int frame_index) {
  auto rng = make_rng(s.seed, mix64(kFrameStream, (uint64_t)clip_index,
                                    (uint64_t)frame_index));
  const int h = s.height, w = s.width;
  std::vector<double> frame((size_t)s.channels * h * w, 0.0);

  int dy = 0, dx = 0;
  if (s.jitter_pixels > 0) {
    std::uniform_int_distribution<int> uj(-s.jitter_pixels, s.jitter_pixels);
    dy = uj(rng);
    dx = uj(rng);
  }
  for (int ch = 0; ch < s.channels; ++ch) {
    const double* src = tmpl.vals().data() + (int64_t)ch * h * w;
    double* dst = frame.data() + (int64_t)ch * h * w;
    for (int y = 0; y < h; ++y) {
      const int sy = y - dy;
      if (sy < 0 || sy >= h) continue;
      for (int x = 0; x < w; ++x) {
        const int sx = x - dx;
        if (sx >= 0 && sx < w) dst[y * w + x] = src[sy * w + sx];
      }
    }
    for (int i = 0; i < h * w; ++i) dst[i] += shift[ch];
  }

  std::uniform_real_distribution<double> uocc(0.0, 1.0);
  if (uocc(rng) < s.occlusion_prob) {
    std::uniform_int_distribution<int> uh(h / 4, std::max(h / 4, h / 2));
    std::uniform_int_distribution<int> uw(w / 4, std::max(w / 4, w / 2));
    const int oh = uh(rng), ow = uw(rng);
    std::uniform_int_distribution<int> utop(0, h - oh), uleft(0, w - ow);
    const int top = utop(rng), left = uleft(rng);
    for (int ch = 0; ch < s.channels; ++ch)
      for (int y = top; y < top + oh; ++y)
        for (int x = left; x < left + ow; ++x)
          frame[((int64_t)ch * h + y) * w + x] = 0.0;
  }

  if (s.noise_std > 0.0) {
    std::normal_distribution<double> noise(0.0, s.noise_std);
    for (double& v : frame) v += noise(rng);
  }
  return frame;
}

}  // namespace

template <typename T>
SynthDataset<T> generate(const SynthSpec& spec) {
  validate(spec);
  SynthDataset<T> ds;
  ds.spec = spec;
  ds.templates.reserve(spec.num_ids);
  for (int id = 0; id < spec.num_ids; ++id)
    ds.templates.push_back(make_template(spec, id));

  std::vector<std::vector<double>> shifts;
  shifts.reserve(spec.cameras);
  for (int cam = 0; cam < spec.cameras; ++cam)
    shifts.push_back(camera_shift(spec, cam));

  const int64_t frame_elems =
      (int64_t)spec.channels * spec.height * spec.width;
  int clip_index = 0;
  for (int id = 0; id < spec.num_ids; ++id) {
    for (int j = 0; j < spec.clips_per_id; ++j, ++clip_index) {
      ClipRecord<T> clip;
      clip.identity = id;
      clip.camera = j % spec.cameras;
      clip.frames = Tensor<T>({spec.frames_per_clip, spec.channels,
                               spec.height, spec.width});
      for (int f = 0; f < spec.frames_per_clip; ++f) {
        std::vector<double> frame = make_frame(
            spec, ds.templates[id], shifts[clip.camera], clip_index, f);
        T* dst = clip.frames.vals().data() + (int64_t)f * frame_elems;
        for (int64_t i = 0; i < frame_elems; ++i) dst[i] = (T)frame[i];
      }
      ds.clips.push_back(std::move(clip));
    }
  }
  return ds;
}

template <typename T>
SplitIndices split(const SynthDataset<T>& dataset, Protocol protocol) {
  const int n_ids = dataset.spec.num_ids;
  check<DatasetError>(n_ids >= 2, "cannot split ", n_ids, " identities");
  check<DatasetError>(
      protocol != Protocol::CrossCamera || dataset.spec.cameras >= 2,
      "cross-camera evaluation needs at least 2 cameras, got ",
      dataset.spec.cameras);
  const int first_test_id = n_ids / 2;

  SplitIndices out;
  std::set<int> query_ids, gallery_ids;
  for (int i = 0; i < (int)dataset.clips.size(); ++i) {
    const ClipRecord<T>& clip = dataset.clips[i];
    if (clip.identity < first_test_id) {
      out.train.push_back(i);
    } else if (clip.camera == 0) {
      out.query.push_back(i);
      query_ids.insert(clip.identity);
    } else {
      out.gallery.push_back(i);
      gallery_ids.insert(clip.identity);
    }
  }
  for (int id : query_ids)
    check<DatasetError>(gallery_ids.count(id) > 0, "query identity ", id,
                        " never appears in the gallery; raise clips or "
                        "cameras");
  return out;
}

#define CRA_INSTANTIATE_SYNTH(T)                              \
  template SynthDataset<T> generate<T>(const SynthSpec&);     \
  template SplitIndices split<T>(const SynthDataset<T>&, Protocol);

CRA_INSTANTIATE_SYNTH(float)
CRA_INSTANTIATE_SYNTH(double)

}  // namespace cra
