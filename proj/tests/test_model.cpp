#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "cra/common.hpp"
#include "cra/layers.hpp"
#include "cra/model.hpp"
#include "cra/rng.hpp"
#include "cra/tensor.hpp"

namespace {

namespace fs = std::filesystem;

using cra::AttentionVariant;
using cra::CellKind;
using cra::ClipBatch;
using cra::ConfigError;
using cra::CostReport;
using cra::DimensionError;
using cra::DivergenceError;
using cra::IoError;
using cra::LoadError;
using cra::ModelConfig;
using cra::ReidModel;
using Tf = cra::Tensor<float>;

// Small enough to keep every case under a second, large enough to exercise
// both backbone stages, one attention module and the gated aggregation.
ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.in_channels = 3;
  cfg.in_h = 16;
  cfg.in_w = 8;
  cfg.stages = {4, 8};
  cfg.attach = {1};
  cfg.attention.d = 2;
  cfg.agg.r = 2;
  cfg.dv = 6;
  cfg.num_ids = 4;
  cfg.t = 3;
  return cfg;
}

Tf random_clip(std::mt19937_64& rng, const ModelConfig& cfg, int t) {
  Tf clip({t, cfg.in_channels, cfg.in_h, cfg.in_w});
  cra::fill_uniform(rng, clip.vals().data(), clip.numel(), -1.0f, 1.0f);
  return clip;
}

ClipBatch<float> random_batch(std::mt19937_64& rng, const ModelConfig& cfg,
                              int batch) {
  ClipBatch<float> out;
  out.frames = Tf({batch, cfg.t, cfg.in_channels, cfg.in_h, cfg.in_w});
  cra::fill_uniform(rng, out.frames.vals().data(), out.frames.numel(),
                    -1.0f, 1.0f);
  for (int i = 0; i < batch; ++i) {
    out.identities.push_back(i / 2);
    out.cameras.push_back(i % 2);
  }
  return out;
}

std::vector<float> collect_values(ReidModel<float>& model) {
  cra::ParamMap<float> params;
  model.collect(params);
  std::vector<float> flat;
  for (auto& [name, tensor] : params)
    flat.insert(flat.end(), tensor->vals().begin(), tensor->vals().end());
  return flat;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const char* tag)
      : path(fs::temp_directory_path() / tag) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const char* name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("embeddings have the configured width for any clip length") {
  ModelConfig cfg = tiny_config();
  ReidModel<float> model(cfg, 11);
  auto rng = cra::make_rng(42);

  for (int t : {1, 3, 5}) {
    Tf emb = model.embed_clip(random_clip(rng, cfg, t));
    CHECK(emb.shape() == cra::Shape{cfg.dv});
  }
  Tf batch({2, 4, cfg.in_channels, cfg.in_h, cfg.in_w});
  cra::fill_uniform(rng, batch.vals().data(), batch.numel(), -1.0f, 1.0f);
  CHECK(model.embed_batch(batch, false).shape() == cra::Shape{2, cfg.dv});
}

TEST_CASE("evaluation is deterministic even with a shuffled order") {
  ModelConfig cfg = tiny_config();
  cfg.attention.order.kind = cra::OrderKind::RandomShuffle;
  ReidModel<float> model(cfg, 3);
  auto rng = cra::make_rng(4);
  Tf clip = random_clip(rng, cfg, cfg.t);

  Tf a = model.embed_clip(clip);
  Tf b = model.embed_clip(clip);
  CHECK(a.vals() == b.vals());
}

TEST_CASE("clip embeddings ignore the frame order") {
  ModelConfig cfg = tiny_config();
  ReidModel<float> model(cfg, 7);
  auto rng = cra::make_rng(19);
  const int t = 5;
  Tf clip = random_clip(rng, cfg, t);
  Tf base = model.embed_clip(clip);

  const int64_t frame = clip.numel() / t;
  for (int trial = 0; trial < 10; ++trial) {
    const std::vector<int> perm = cra::random_permutation(rng, t);
    Tf shuffled(clip.shape());
    for (int j = 0; j < t; ++j)
      std::copy_n(clip.vals().data() + (int64_t)perm[j] * frame, frame,
                  shuffled.vals().data() + (int64_t)j * frame);
    Tf emb = model.embed_clip(shuffled);
    for (int i = 0; i < cfg.dv; ++i)
      CHECK(std::abs(emb.vals()[i] - base.vals()[i]) < 1e-6f);
  }
}

TEST_CASE("classify is a bare linear readout") {
  ModelConfig cfg = tiny_config();
  ReidModel<float> model(cfg, 2);
  auto rng = cra::make_rng(8);
  Tf emb = model.embed_clip(random_clip(rng, cfg, cfg.t));

  Tf logits = model.classify(emb);
  CHECK(logits.shape() == cra::Shape{cfg.num_ids});

  cra::ParamMap<float> params;
  model.collect(params);
  for (auto& [name, tensor] : params)
    if (name.rfind("classifier.", 0) == 0)
      std::fill(tensor->vals().begin(), tensor->vals().end(), 0.0f);
  const Tf silenced = model.classify(emb);
  for (float v : silenced.vals()) CHECK(v == 0.0f);

  Tf two({2, cfg.dv});
  cra::fill_uniform(rng, two.vals().data(), two.numel(), -1.0f, 1.0f);
  CHECK(model.classify(two).shape() == cra::Shape{2, cfg.num_ids});
  CHECK_THROWS_AS((void)model.classify(Tf({cfg.dv + 1})), DimensionError);
}

TEST_CASE("disabling attention changes cost but not geometry") {
  ModelConfig with = tiny_config();
  ModelConfig without = tiny_config();
  without.attention.variant = AttentionVariant::None;

  ReidModel<float> a(with, 5);
  ReidModel<float> b(without, 5);
  CHECK(a.stage_shapes() == b.stage_shapes());
  CHECK(a.attention_at(1) != nullptr);
  CHECK(b.attention_at(1) == nullptr);
  CHECK(a.param_count() > b.param_count());
  for (const CostReport& row : b.count_cost())
    CHECK(row.name.rfind("attention.", 0) != 0);

  auto rng = cra::make_rng(6);
  Tf clip = random_clip(rng, with, with.t);
  CHECK(a.embed_clip(clip).shape() == b.embed_clip(clip).shape());
}

TEST_CASE("convolution cost matches a hand count") {
  auto rng = cra::make_rng(1);
  cra::Conv2d<float> conv(2, 3, 3, 1, 1, true, rng);
  // 8x8 output, 3 maps, each pixel 2*2*3*3 multiply-adds plus the bias.
  CHECK(conv.flop_count(1, 8, 8) == 7104);
  CHECK(conv.param_count() == 3 * 2 * 3 * 3 + 3);
}

TEST_CASE("bidirectional cells double the attention cost") {
  ModelConfig uni;  // default desk-scale shape
  ModelConfig bi;
  bi.attention.cell = CellKind::BiLSTM;

  const auto subtotal = [](ReidModel<float>& m) {
    int64_t params = 0, flops = 0;
    for (const CostReport& row : m.count_cost())
      if (row.name.rfind("attention.", 0) == 0) {
        params += row.params;
        flops += row.flops;
      }
    return std::pair<int64_t, int64_t>{params, flops};
  };
  ReidModel<float> mu(uni, 1);
  ReidModel<float> mb(bi, 1);
  const auto [pu, fu] = subtotal(mu);
  const auto [pb, fb] = subtotal(mb);
  const double pr = (double)pb / (double)pu;
  const double fr = (double)fb / (double)fu;
  CHECK(pr > 1.9);
  CHECK(pr < 2.1);
  CHECK(fr > 1.9);
  CHECK(fr < 2.1);

  int64_t total = 0;
  for (const CostReport& row : mu.count_cost()) total += row.params;
  CHECK(total == mu.param_count());
}

TEST_CASE("attention maps expose the mask at work") {
  ModelConfig cfg = tiny_config();
  ReidModel<float> model(cfg, 13);
  auto rng = cra::make_rng(14);
  Tf frame({cfg.in_channels, cfg.in_h, cfg.in_w});
  cra::fill_uniform(rng, frame.vals().data(), frame.numel(), -1.0f, 1.0f);

  const auto [pre, post] = model.attention_maps(frame, 1);
  CHECK(pre.shape() == model.stage_shapes()[1]);
  CHECK(post.shape() == pre.shape());

  bool some_activation = false, strictly_gated = false;
  for (int64_t i = 0; i < pre.numel(); ++i) {
    const float p = pre.vals()[i], q = post.vals()[i];
    CHECK(p >= 0.0f);  // the stage ends in a ReLU
    CHECK(q >= 0.0f);
    CHECK(q <= p);     // the mask only attenuates
    if (p > 0.0f) some_activation = true;
    if (q < p) strictly_gated = true;
  }
  CHECK(some_activation);
  CHECK(strictly_gated);

  CHECK_THROWS_AS((void)model.attention_maps(frame, 2), ConfigError);
  CHECK_THROWS_AS(
      (void)model.attention_maps(cra::reshape(frame, {1, cfg.in_channels,
                                                      cfg.in_h, cfg.in_w}),
                                 1),
      DimensionError);
}

TEST_CASE("training steps are reproducible across identically seeded models") {
  const ModelConfig cfg = tiny_config();
  auto rng = cra::make_rng(23);
  const ClipBatch<float> batch = random_batch(rng, cfg, 4);

  const auto run_once = [&](ReidModel<float>& model) {
    cra::ParamMap<float> params;
    model.collect(params);
    cra::Adam<float> opt(1e-3f);
    opt.attach(params);
    return cra::train_step(model, batch, opt, 0.3f);
  };
  ReidModel<float> a(cfg, 31);
  ReidModel<float> b(cfg, 31);
  const auto ra = run_once(a);
  const auto rb = run_once(b);
  CHECK(ra.total == rb.total);
  CHECK(ra.triplet == rb.triplet);
  CHECK(ra.softmax == rb.softmax);
  CHECK(ra.step == 1);
  CHECK(collect_values(a) == collect_values(b));
}

TEST_CASE("a poisoned parameter fails the step loudly") {
  const ModelConfig cfg = tiny_config();
  ReidModel<float> model(cfg, 31);
  auto rng = cra::make_rng(24);
  ClipBatch<float> batch = random_batch(rng, cfg, 4);

  cra::ParamMap<float> params;
  model.collect(params);
  // Poison the classifier: a NaN in an early conv would be erased by the
  // ReLU comparisons, but the logits feed cross-entropy unguarded.
  REQUIRE(params.back().first == "classifier.w");
  params.back().second->vals()[0] =
      std::numeric_limits<float>::quiet_NaN();
  cra::Adam<float> opt(1e-3f);
  opt.attach(params);
  try {
    (void)cra::train_step(model, batch, opt, 0.3f);
    CHECK(false);
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find("step 1") != std::string::npos);
  }
}

TEST_CASE("adam follows the bias-corrected update rule") {
  cra::Tensor<double> w({3});
  w.vals() = {0.5, -0.25, 2.0};
  cra::Adam<double> opt(0.01);
  opt.attach({{"w", &w}});

  // Hand-maintained moment state, stepped twice with different gradients.
  std::vector<double> grads[2] = {{0.2, -0.1, 0.0}, {-0.4, 0.3, 1.0}};
  std::vector<double> expect = w.vals(), m(3, 0.0), v(3, 0.0);
  for (int step = 1; step <= 2; ++step) {
    w.impl->grad = grads[step - 1];
    opt.step();
    const double bc1 = 1.0 - std::pow(0.9, step);
    const double bc2 = 1.0 - std::pow(0.999, step);
    for (int j = 0; j < 3; ++j) {
      const double g = grads[step - 1][j];
      m[j] = 0.9 * m[j] + 0.1 * g;
      v[j] = 0.999 * v[j] + 0.001 * g * g;
      expect[j] -= 0.01 * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + 1e-8);
    }
    for (int j = 0; j < 3; ++j)
      CHECK(w.vals()[j] == doctest::Approx(expect[j]).epsilon(1e-12));
  }
  CHECK(opt.steps() == 2);
}

TEST_CASE("checkpoints restore a model bitwise") {
  TempDir dir("crakit_ckpt_test");
  const ModelConfig cfg = tiny_config();
  auto rng = cra::make_rng(40);
  const ClipBatch<float> batch = random_batch(rng, cfg, 4);
  const Tf probe = random_clip(rng, cfg, cfg.t);

  ReidModel<float> source(cfg, 50);
  {
    cra::ParamMap<float> params;
    source.collect(params);
    cra::Adam<float> opt(1e-3f);
    opt.attach(params);
    (void)cra::train_step(source, batch, opt, 0.3f);  // move off the init
  }
  cra::save_state<float>(dir.file("ck"), source, nullptr, 3);

  ReidModel<float> restored(cfg, 99);
  CHECK(cra::load_state<float>(dir.file("ck"), restored, nullptr) == 3);
  CHECK(collect_values(source) == collect_values(restored));

  cra::BufferMap<float> ba, bb;
  source.collect_buffers(ba);
  restored.collect_buffers(bb);
  REQUIRE(ba.size() == bb.size());
  for (size_t i = 0; i < ba.size(); ++i) CHECK(*ba[i].second == *bb[i].second);

  CHECK(source.embed_clip(probe).vals() ==
        restored.embed_clip(probe).vals());
}

TEST_CASE("resuming reproduces the interrupted run bitwise") {
  TempDir dir("crakit_resume_test");
  const ModelConfig cfg = tiny_config();
  auto rng = cra::make_rng(41);
  const ClipBatch<float> first = random_batch(rng, cfg, 4);
  const ClipBatch<float> second = random_batch(rng, cfg, 4);

  ReidModel<float> straight(cfg, 60);
  cra::Adam<float> opt_straight(1e-3f);
  {
    cra::ParamMap<float> params;
    straight.collect(params);
    opt_straight.attach(params);
  }
  (void)cra::train_step(straight, first, opt_straight, 0.3f);
  const auto target = cra::train_step(straight, second, opt_straight, 0.3f);

  ReidModel<float> half(cfg, 60);
  cra::Adam<float> opt_half(1e-3f);
  {
    cra::ParamMap<float> params;
    half.collect(params);
    opt_half.attach(params);
  }
  (void)cra::train_step(half, first, opt_half, 0.3f);
  cra::save_state<float>(dir.file("ck"), half, &opt_half, 1);

  ReidModel<float> resumed(cfg, 1234);
  cra::Adam<float> opt_resumed(1e-3f);
  {
    cra::ParamMap<float> params;
    resumed.collect(params);
    opt_resumed.attach(params);
  }
  CHECK(cra::load_state<float>(dir.file("ck"), resumed, &opt_resumed) == 1);
  CHECK(opt_resumed.steps() == 1);
  const auto replay = cra::train_step(resumed, second, opt_resumed, 0.3f);

  CHECK(replay.total == target.total);
  CHECK(replay.step == target.step);
  CHECK(collect_values(resumed) == collect_values(straight));
}

TEST_CASE("checkpoint failures name the offender") {
  TempDir dir("crakit_ckpt_errors");
  const ModelConfig cfg = tiny_config();
  ReidModel<float> model(cfg, 70);

  CHECK_THROWS_AS(
      (void)cra::load_state<float>(dir.file("missing"), model, nullptr), IoError);

  cra::save_state<float>(dir.file("bare"), model, nullptr, 0);
  cra::Adam<float> opt(1e-3f);
  {
    cra::ParamMap<float> params;
    model.collect(params);
    opt.attach(params);
  }
  // Saved without optimizer state, so resuming with one cannot work.
  CHECK_THROWS_AS((void)cra::load_state<float>(dir.file("bare"), model, &opt),
                  LoadError);

  ModelConfig wide = cfg;
  wide.dv = 8;
  ReidModel<float> mismatched(wide, 70);
  try {
    (void)cra::load_state<float>(dir.file("bare"), mismatched, nullptr);
    CHECK(false);
  } catch (const LoadError& e) {
    CHECK(std::string(e.what()).find("head.w") != std::string::npos);
  }
}

TEST_CASE("the checkpoint writer and reader police their format") {
  TempDir dir("crakit_ckpt_format");
  const float data[2] = {1.0f, 2.0f};

  cra::CheckpointWriter dup(dir.file("dup"));
  dup.add("w", {2}, data);
  dup.add("w", {2}, data);  // only caught when the manifest is read back
  dup.finish();
  CHECK_THROWS_AS(cra::CheckpointReader(dir.file("dup")), IoError);

  cra::CheckpointWriter spent(dir.file("spent"));
  spent.add("w", {2}, data);
  spent.finish();
  CHECK_THROWS_AS(spent.add("x", {2}, data), cra::ContractError);
  CHECK_THROWS_AS(spent.finish(), cra::ContractError);

  cra::CheckpointWriter bad(dir.file("bad"));
  CHECK_THROWS_AS(bad.add("two words", {2}, data), cra::ContractError);

  cra::CheckpointReader reader(dir.file("spent"));
  CHECK(reader.contains("w"));
  CHECK(!reader.contains("u"));
  CHECK_THROWS_AS((void)reader.entry("u"), LoadError);
  float out[2] = {0, 0};
  try {
    reader.read_into("w", {3}, out);
    CHECK(false);
  } catch (const LoadError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("'w'") != std::string::npos);
    CHECK(msg.find("3") != std::string::npos);
  }
  reader.read_into("w", {2}, out);
  CHECK(out[0] == 1.0f);
  CHECK(out[1] == 2.0f);
}
