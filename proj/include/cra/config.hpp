#pragma once

#include <string>
#include <vector>

#include "cra/model.hpp"
#include "cra/synth.hpp"

namespace cra {

// Full run description parsed from an INI-style file with [model],
// [attention], [agg], [data], [train] and [run] sections. Unknown sections
// or keys are rejected. The synthetic data always uses the model's input
// shape and the run seed; those fields cannot drift apart.
struct RunConfig {
  ModelConfig model;  // carries the attention and aggregation configs
  SynthSpec data;

  struct Train {
    int epochs = 40;
    double lr = 3e-4;
    std::vector<int> milestones = {10, 20};  // epochs where lr shrinks by 10x
    double margin = 0.3;
    int p = 4, k = 4;
    bool squared = false;
    int iters_per_epoch = 0;  // 0: one pass over the training clips
  } train;

  uint64_t seed = 1;
  std::string out_dir = "runs/default";
};

RunConfig parse_config_text(const std::string& text);
RunConfig parse_config_file(const std::string& path);

// Re-mirrors the fields the data spec borrows from the model and the run
// seed. Called by the parser; call again after overriding seed or shape.
void sync_derived(RunConfig& cfg);

// Stepped learning rate: base * 0.1 per milestone at or before this epoch.
double schedule_lr(double base, const std::vector<int>& milestones,
                   int epoch);

}  // namespace cra
