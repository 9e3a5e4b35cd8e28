#include "cra/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cra/config.hpp"
#include "cra/gradsuite.hpp"
#include "cra/metrics.hpp"
#include "cra/model.hpp"
#include "cra/rng.hpp"
#include "cra/synth.hpp"
#include "cra/threads.hpp"
#include "cra/trainer.hpp"

namespace cra {
namespace {

constexpr uint64_t kModelStream = 0x4d;

struct CommonFlags {
  std::string config;
  uint64_t seed = 1;
  std::string out;
  int workers = 0;
};

void add_common(CLI::App* sub, CommonFlags& c) {
  sub->add_option("--config", c.config, "configuration file");
  sub->add_option("--seed", c.seed, "run seed");
  sub->add_option("--out", c.out, "output directory");
  sub->add_option("--workers", c.workers,
                  "worker threads (CRA_KIT_THREADS overrides)");
}

RunConfig resolve_config(const CommonFlags& c, CLI::App& sub) {
  RunConfig cfg;
  if (!c.config.empty()) cfg = parse_config_file(c.config);
  if (sub.count("--seed")) cfg.seed = c.seed;
  if (sub.count("--out")) cfg.out_dir = c.out;
  sync_derived(cfg);
  if (c.workers > 0) set_thread_count(c.workers);
  return cfg;
}

void print_epoch(const EpochRow& row) {
  std::printf("%5d  %8.4f  %8.4f  %7.4f  %7.4f\n", row.epoch, row.triplet,
              row.softmax, row.r1, row.map);
  std::fflush(stdout);
}

int cmd_train(const RunConfig& cfg, const std::string& resume) {
  std::printf("%5s  %8s  %8s  %7s  %7s\n", "epoch", "L_tri", "L_sof", "R-1",
              "mAP");
  TrainOutcome out = run_training<float>(cfg, cfg.out_dir, resume,
                                         &print_epoch);
  std::printf("log %s\ncheckpoint %s\n", out.log_path.c_str(),
              out.last_checkpoint.c_str());
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint) {
  ReidModel<float> model(model_config_for(cfg), mix64(cfg.seed, kModelStream));
  load_state<float>(checkpoint, model, nullptr);
  SynthDataset<float> ds = generate<float>(cfg.data);
  SplitIndices idx = split(ds, Protocol::CrossCamera);
  RetrievalResult<float> res =
      evaluate_split(model, ds, idx, Protocol::CrossCamera);
  const std::string text = report_text(res);
  const std::string kv = report_kv(res);
  std::fputs(text.c_str(), stdout);
  std::fputs(kv.c_str(), stdout);
  std::filesystem::create_directories(cfg.out_dir);
  std::ofstream(cfg.out_dir + "/metrics.txt") << text;
  std::ofstream(cfg.out_dir + "/metrics.kv") << kv;
  return 0;
}

int cmd_gradcheck(const std::string& scope, uint64_t seed) {
  std::vector<std::string> scopes;
  if (scope == "all")
    scopes = {"op", "module", "model"};
  else
    scopes = {scope};
  bool ok = true;
  for (const std::string& s : scopes)
    for (const GradSuiteRow& row : gradcheck_suite(s, seed)) {
      std::printf("%-7s %-24s %9.3e  %s\n", s.c_str(), row.name.c_str(),
                  row.max_rel_err, row.pass ? "ok" : "FAIL");
      ok = ok && row.pass;
    }
  return ok ? 0 : 1;
}

int64_t subtotal_params(const std::vector<CostReport>& rows, bool attention) {
  int64_t n = 0;
  for (const CostReport& r : rows)
    if ((r.name.rfind("attention.", 0) == 0) == attention) n += r.params;
  return n;
}

int64_t attention_flops(const std::vector<CostReport>& rows) {
  int64_t n = 0;
  for (const CostReport& r : rows)
    if (r.name.rfind("attention.", 0) == 0) n += r.flops;
  return n;
}

int cmd_bench(const RunConfig& cfg) {
  ModelConfig mc = model_config_for(cfg);
  check<ConfigError>(!mc.attach.empty(),
                     "bench needs at least one attention placement");
  if (mc.attention.variant == AttentionVariant::None ||
      mc.attention.variant == AttentionVariant::CA) {
    std::printf("cell comparison uses the channel recurrent variant\n");
    mc.attention.variant = AttentionVariant::CRA;
  }
  auto cost_with = [&](CellKind kind) {
    ModelConfig m = mc;
    m.attention.cell = kind;
    ReidModel<float> model(m, mix64(cfg.seed, kModelStream));
    return model.count_cost();
  };
  const std::vector<CostReport> uni = cost_with(CellKind::LSTM);
  const std::vector<CostReport> bi = cost_with(CellKind::BiLSTM);

  std::printf("%-14s %12s %14s %12s %14s\n", "module", "lstm params",
              "lstm flops", "bi params", "bi flops");
  for (size_t i = 0; i < uni.size(); ++i)
    std::printf("%-14s %12lld %14lld %12lld %14lld\n", uni[i].name.c_str(),
                (long long)uni[i].params, (long long)uni[i].flops,
                (long long)bi[i].params, (long long)bi[i].flops);

  const int64_t attn_p_uni = subtotal_params(uni, true);
  const int64_t attn_p_bi = subtotal_params(bi, true);
  const int64_t attn_f_uni = attention_flops(uni);
  const int64_t attn_f_bi = attention_flops(bi);
  const int64_t total_uni = attn_p_uni + subtotal_params(uni, false);
  const double pr = (double)attn_p_bi / (double)attn_p_uni;
  const double fr = (double)attn_f_bi / (double)attn_f_uni;
  std::printf("attention params %lld -> %lld (ratio %.4f)\n",
              (long long)attn_p_uni, (long long)attn_p_bi, pr);
  std::printf("attention flops  %lld -> %lld (ratio %.4f)\n",
              (long long)attn_f_uni, (long long)attn_f_bi, fr);
  std::printf("model params %lld, attention share %.2f%%\n",
              (long long)total_uni, 100.0 * attn_p_uni / total_uni);
  check<ContractError>(pr > 1.9 && pr < 2.1, "cell parameter ratio ", pr,
                       " outside [1.9, 2.1]");
  check<ContractError>(fr > 1.9 && fr < 2.1, "cell flop ratio ", fr,
                       " outside [1.9, 2.1]");
  check<ContractError>(total_uni > attn_p_uni,
                       "attention outweighs the rest of the model");
  return 0;
}

struct Setting {
  std::string label;
  RunConfig cfg;
};

std::string slug(const std::string& label) {
  std::string s;
  for (char ch : label)
    s += std::isalnum((unsigned char)ch) ? ch : '-';
  while (!s.empty() && s.back() == '-') s.pop_back();
  return s;
}

std::vector<Setting> sweep_settings(const std::string& axis,
                                    const RunConfig& base) {
  std::vector<Setting> out;
  auto push = [&](const std::string& label) -> RunConfig& {
    out.push_back({label, base});
    return out.back().cfg;
  };
  if (axis == "order") {
    for (auto [kind, seed, label] :
         {std::tuple{OrderKind::Forward, (uint64_t)0, "forward"},
          std::tuple{OrderKind::Reverse, (uint64_t)0, "reverse"},
          std::tuple{OrderKind::RandomShuffle, (uint64_t)0, "random"},
          std::tuple{OrderKind::FixedPermutation, (uint64_t)1, "fixed(1)"},
          std::tuple{OrderKind::FixedPermutation, (uint64_t)2, "fixed(2)"}}) {
      RunConfig& c = push(label);
      if (c.model.attention.variant != AttentionVariant::SRA)
        c.model.attention.variant = AttentionVariant::CRA;
      c.model.attention.order.kind = kind;
      c.model.attention.order.seed = seed;
    }
  } else if (axis == "variant") {
    for (auto [v, label] : {std::pair{AttentionVariant::None, "none"},
                            std::pair{AttentionVariant::CRA, "cra"},
                            std::pair{AttentionVariant::SRA, "sra"},
                            std::pair{AttentionVariant::CA, "ca"}})
      push(label).model.attention.variant = v;
  } else if (axis == "pooling") {
    for (auto [kind, shared, label] :
         {std::tuple{PoolKind::AvgOnly, false, "avg"},
          std::tuple{PoolKind::MaxOnly, false, "max"},
          std::tuple{PoolKind::Combined, true, "combined(shared)"},
          std::tuple{PoolKind::Combined, false, "combined"}}) {
      RunConfig& c = push(label);
      c.model.agg.pooling = kind;
      c.model.agg.share_weights = shared;
    }
  } else if (axis == "d") {
    for (int d : {2, 4, 8, 16, 32}) {
      bool fits = true;
      for (int p : base.model.attach)
        fits = fits && base.model.stages[p - 1] % d == 0;
      if (fits) push(cat("d=", d)).model.attention.d = d;
    }
  } else if (axis == "r") {
    const int c_last = base.model.stages.back();
    for (int r : {4, 8, 16, 32})
      if (c_last % r == 0) push(cat("r=", r)).model.agg.r = r;
  } else if (axis == "t") {
    for (int t : {1, 2, 4, 8}) {
      RunConfig& c = push(cat("t=", t));
      c.data.frames_per_clip = t;
      sync_derived(c);
    }
  } else if (axis == "placement") {
    const int top = (int)base.model.stages.size() - 1;
    std::vector<std::vector<int>> sets = {{1}, {2}, {3}, {1, 2, 3}};
    for (const std::vector<int>& set : sets) {
      if (set.back() > top) continue;
      std::string label;
      for (int p : set) label += cat(label.empty() ? "P" : "+P", p);
      RunConfig& c = push(label);
      c.model.attach = set;
      if (c.model.attention.variant == AttentionVariant::None)
        c.model.attention.variant = AttentionVariant::CRA;
    }
  } else {
    check<ConfigError>(false, "unknown sweep axis '", axis,
                       "' (order|variant|pooling|d|r|t|placement)");
  }
  return out;
}

int cmd_ablate(const RunConfig& base, const std::string& axis) {
  std::vector<Setting> settings = sweep_settings(axis, base);
  const std::string root = base.out_dir + "/ablate-" + axis;
  std::printf("%-18s %8s %8s\n", "setting", "R-1", "mAP");
  for (Setting& s : settings) {
    TrainOutcome out =
        run_training<float>(s.cfg, root + "/" + slug(s.label), "", nullptr);
    const EpochRow& last = out.rows.back();
    std::printf("%-18s %8.4f %8.4f\n", s.label.c_str(), last.r1, last.map);
    std::fflush(stdout);
  }
  return 0;
}

// Channel-mean of a [c x h x w] map, min-max normalized to one gray byte
// per pixel, as a binary portable graymap.
template <typename T>
void write_pgm(const std::string& path, const Tensor<T>& map) {
  const Shape& s = map.shape();
  const int c = s[0], h = s[1], w = s[2];
  std::vector<double> mean((size_t)h * w, 0.0);
  for (int k = 0; k < c; ++k)
    for (int i = 0; i < h * w; ++i)
      mean[i] += (double)map.vals()[(size_t)k * h * w + i] / c;
  const auto [lo_it, hi_it] = std::minmax_element(mean.begin(), mean.end());
  const double lo = *lo_it, range = *hi_it - *lo_it;
  std::ofstream out(path, std::ios::binary);
  check<IoError>(out.good(), "cannot write ", path);
  out << "P5\n" << w << " " << h << "\n255\n";
  for (double v : mean) {
    const double norm = range > 0 ? (v - lo) / range : 0.0;
    out.put((char)(unsigned char)(norm * 255.0 + 0.5));
  }
}

int cmd_dump_attention(const RunConfig& cfg, const std::string& checkpoint,
                       int clip, int placement) {
  ReidModel<float> model(model_config_for(cfg), mix64(cfg.seed, kModelStream));
  load_state<float>(checkpoint, model, nullptr);
  SynthDataset<float> ds = generate<float>(cfg.data);
  check<InputError>(clip >= 0 && clip < (int)ds.clips.size(), "clip index ",
                    clip, " outside [0, ", ds.clips.size(), ")");
  const ClipRecord<float>& rec = ds.clips[clip];
  const int t = rec.frames.shape()[0];
  std::filesystem::create_directories(cfg.out_dir);
  for (int j = 0; j < t; ++j) {
    Tensor<float> frame = select_axis0(rec.frames, j);
    auto [pre, post] = model.attention_maps(frame, placement);
    write_pgm(cat(cfg.out_dir, "/frame", j, "_pre.pgm"), pre);
    write_pgm(cat(cfg.out_dir, "/frame", j, "_post.pgm"), post);
  }
  std::printf("wrote %d maps to %s\n", 2 * t, cfg.out_dir.c_str());
  return 0;
}

}  // namespace

int run_cli(std::vector<std::string> args) {
  CLI::App app{"channel recurrent attention toolkit"};
  app.require_subcommand(1);

  CommonFlags c;
  CLI::App* train = app.add_subcommand("train", "train on synthetic data");
  add_common(train, c);
  std::string resume;
  train->add_option("--resume", resume, "checkpoint prefix to continue from");

  CLI::App* eval = app.add_subcommand("eval", "score a checkpoint");
  add_common(eval, c);
  std::string checkpoint;
  eval->add_option("--checkpoint", checkpoint, "checkpoint prefix")
      ->required();

  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "finite-difference gradient verification");
  add_common(gradcheck, c);
  std::string scope = "all";
  gradcheck->add_option("--scope", scope, "op|module|model|all")
      ->check(CLI::IsMember({"op", "module", "model", "all"}));

  CLI::App* ablate = app.add_subcommand("ablate", "sweep one design axis");
  add_common(ablate, c);
  std::string axis;
  ablate->add_option("--axis", axis, "order|variant|pooling|d|r|t|placement")
      ->required();

  CLI::App* bench =
      app.add_subcommand("bench", "parameter and flop accounting");
  add_common(bench, c);

  CLI::App* dump =
      app.add_subcommand("dump-attention", "write attention feature maps");
  add_common(dump, c);
  std::string dump_checkpoint;
  int clip = 0, placement = 2;
  dump->add_option("--checkpoint", dump_checkpoint, "checkpoint prefix")
      ->required();
  dump->add_option("--clip", clip, "dataset clip index");
  dump->add_option("--placement", placement, "attention placement");

  try {
    std::reverse(args.begin(), args.end());
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (train->parsed()) return cmd_train(resolve_config(c, *train), resume);
    if (eval->parsed()) return cmd_eval(resolve_config(c, *eval), checkpoint);
    if (gradcheck->parsed()) {
      if (c.workers > 0) set_thread_count(c.workers);
      return cmd_gradcheck(scope, gradcheck->count("--seed") ? c.seed : 1);
    }
    if (ablate->parsed()) return cmd_ablate(resolve_config(c, *ablate), axis);
    if (bench->parsed()) return cmd_bench(resolve_config(c, *bench));
    if (dump->parsed())
      return cmd_dump_attention(resolve_config(c, *dump), dump_checkpoint,
                                clip, placement);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

}  // namespace cra
