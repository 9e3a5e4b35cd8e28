#pragma once

#include <string>
#include <vector>

#include "cra/config.hpp"
#include "cra/metrics.hpp"
#include "cra/model.hpp"
#include "cra/synth.hpp"

namespace cra {

// The model implied by a run configuration: classifier width equals the
// number of training identities (the lower half of the identity range).
ModelConfig model_config_for(const RunConfig& cfg);

// Embeds the clips named by `indices` with frozen weights, one row each.
template <typename T>
EmbeddingSet<T> embed_clips(ReidModel<T>& model, const SynthDataset<T>& ds,
                            const std::vector<int>& indices);

template <typename T>
RetrievalResult<T> evaluate_split(ReidModel<T>& model,
                                  const SynthDataset<T>& ds,
                                  const SplitIndices& split,
                                  Protocol protocol);

struct EpochRow {
  int epoch = 0;  // 1-based, as logged
  double triplet = 0, softmax = 0, r1 = 0, map = 0;
};

struct TrainOutcome {
  std::vector<EpochRow> rows;
  std::string last_checkpoint;  // prefix of the final epoch's checkpoint
  std::string log_path;
};

// Trains per the configuration on its synthetic dataset, writing one
// checkpoint per epoch plus a CSV log row (epoch,L_tri,L_sof,r1,map) into
// out_dir. Batch sampling derives its generator from (seed, global step),
// so resuming from a checkpoint continues the exact stream. `progress`
// optionally receives each finished row.
template <typename T>
TrainOutcome run_training(const RunConfig& cfg, const std::string& out_dir,
                          const std::string& resume_prefix = "",
                          void (*progress)(const EpochRow&) = nullptr);

}  // namespace cra
