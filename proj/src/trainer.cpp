#include "cra/trainer.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cra/losses.hpp"
#include "cra/rng.hpp"
#include "cra/threads.hpp"

namespace cra {

namespace {

constexpr uint64_t kModelStream = 0x4d;

}  // namespace

ModelConfig model_config_for(const RunConfig& cfg) {
  ModelConfig m = cfg.model;
  m.num_ids = cfg.data.num_ids / 2;
  m.t = cfg.data.frames_per_clip;
  return m;
}

template <typename T>
EmbeddingSet<T> embed_clips(ReidModel<T>& model, const SynthDataset<T>& ds,
                            const std::vector<int>& indices) {
  const int n = (int)indices.size();
  check<DimensionError>(n >= 1, "no clips to embed");
  std::vector<Tensor<T>> rows(n);
  const int nt = thread_count();
#pragma omp parallel for num_threads(nt) schedule(static) if (nt > 1)
  for (int i = 0; i < n; ++i)
    rows[i] = model.embed_clip(ds.clips[indices[i]].frames, false);

  EmbeddingSet<T> set;
  set.embeddings = stack_axis0(rows);
  set.identities.reserve(n);
  set.cameras.reserve(n);
  for (int idx : indices) {
    set.identities.push_back(ds.clips[idx].identity);
    set.cameras.push_back(ds.clips[idx].camera);
  }
  return set;
}

template <typename T>
RetrievalResult<T> evaluate_split(ReidModel<T>& model,
                                  const SynthDataset<T>& ds,
                                  const SplitIndices& split,
                                  Protocol protocol) {
  EmbeddingGallery<T> gallery;
  gallery.query = embed_clips(model, ds, split.query);
  gallery.gallery = embed_clips(model, ds, split.gallery);
  return evaluate(gallery, protocol);
}

template <typename T>
TrainOutcome run_training(const RunConfig& cfg, const std::string& out_dir,
                          const std::string& resume_prefix,
                          void (*progress)(const EpochRow&)) {
  check<ConfigError>(cfg.train.epochs >= 1, "nothing to train: epochs = ",
                     cfg.train.epochs);
  std::filesystem::create_directories(out_dir);

  SynthDataset<T> ds = generate<T>(cfg.data);
  SplitIndices split_idx = split(ds, Protocol::CrossCamera);
  check<DatasetError>(!split_idx.train.empty(), "empty training split");

  ReidModel<T> model(model_config_for(cfg), mix64(cfg.seed, kModelStream));
  ParamMap<T> params;
  model.collect(params);
  Adam<T> opt((T)cfg.train.lr);
  opt.attach(params);

  int64_t start_epoch = 0;
  if (!resume_prefix.empty())
    start_epoch = load_state(resume_prefix, model, &opt);
  check<ConfigError>(start_epoch <= cfg.train.epochs, "checkpoint is past ",
                     cfg.train.epochs, " epochs");

  std::vector<int> train_labels;
  train_labels.reserve(split_idx.train.size());
  for (int idx : split_idx.train)
    train_labels.push_back(ds.clips[idx].identity);

  const int batch_clips = cfg.train.p * cfg.train.k;
  const int iters =
      cfg.train.iters_per_epoch > 0
          ? cfg.train.iters_per_epoch
          : (int)((split_idx.train.size() + batch_clips - 1) / batch_clips);

  TrainOutcome outcome;
  outcome.log_path = out_dir + "/train_log.csv";
  std::ofstream log(outcome.log_path, resume_prefix.empty()
                                          ? std::ios::trunc
                                          : std::ios::app);
  check<IoError>(log.good(), "cannot write ", outcome.log_path);

  for (int epoch = (int)start_epoch; epoch < cfg.train.epochs; ++epoch) {
    opt.set_lr((T)schedule_lr(cfg.train.lr, cfg.train.milestones, epoch));
    double tri = 0, sof = 0;
    for (int it = 0; it < iters; ++it) {
      auto rng = make_rng(cfg.seed, mix64(0x5a3b, (uint64_t)opt.steps()));
      std::vector<int> picks =
          sample_pk(train_labels, cfg.train.p, cfg.train.k, rng);

      ClipBatch<T> batch;
      std::vector<Tensor<T>> clips;
      clips.reserve(picks.size());
      for (int pick : picks) {
        const ClipRecord<T>& clip = ds.clips[split_idx.train[pick]];
        clips.push_back(clip.frames);
        batch.identities.push_back(clip.identity);
        batch.cameras.push_back(clip.camera);
      }
      batch.frames = stack_axis0(clips);

      StepReport<T> report = train_step(model, batch, opt,
                                        (T)cfg.train.margin,
                                        cfg.train.squared);
      tri += (double)report.triplet;
      sof += (double)report.softmax;
    }

    RetrievalResult<T> result =
        evaluate_split(model, ds, split_idx, Protocol::CrossCamera);

    EpochRow row;
    row.epoch = epoch + 1;
    row.triplet = tri / iters;
    row.softmax = sof / iters;
    row.r1 = (double)result.cmc[0];
    row.map = (double)result.map;
    outcome.rows.push_back(row);

    char line[160];
    std::snprintf(line, sizeof line, "%d,%.6f,%.6f,%.6f,%.6f\n", row.epoch,
                  row.triplet, row.softmax, row.r1, row.map);
    log << line;
    log.flush();

    outcome.last_checkpoint = out_dir + "/epoch" + std::to_string(row.epoch);
    save_state(outcome.last_checkpoint, model, &opt, row.epoch);
    if (progress) progress(row);
  }
  return outcome;
}

template EmbeddingSet<float> embed_clips<float>(ReidModel<float>&,
                                                const SynthDataset<float>&,
                                                const std::vector<int>&);
template EmbeddingSet<double> embed_clips<double>(ReidModel<double>&,
                                                  const SynthDataset<double>&,
                                                  const std::vector<int>&);
template RetrievalResult<float> evaluate_split<float>(
    ReidModel<float>&, const SynthDataset<float>&, const SplitIndices&,
    Protocol);
template RetrievalResult<double> evaluate_split<double>(
    ReidModel<double>&, const SynthDataset<double>&, const SplitIndices&,
    Protocol);
template TrainOutcome run_training<float>(const RunConfig&,
                                          const std::string&,
                                          const std::string&,
                                          void (*)(const EpochRow&));
template TrainOutcome run_training<double>(const RunConfig&,
                                           const std::string&,
                                           const std::string&,
                                           void (*)(const EpochRow&));

}  // namespace cra
