#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "guiprobe/grounder.hpp"
#include "guiprobe/synthgui.hpp"

namespace guiprobe {

struct TrainConfig {
  int steps = 24000;        // total sample steps (batch size 1)
  double lr = 1e-3;
  int warmup_steps = 200;   // linear warmup, then cosine decay
  double final_lr_frac = 0.05;
  double clip_norm = 1.0;   // global gradient-norm clip; 0 disables
  int log_every = 200;
  std::uint64_t seed = 0;
  int val_max_samples = 500;
};

struct TrainResult {
  std::vector<std::pair<long, double>> loss_curve;  // (step, mean loss of chunk)
  double final_loss = 0.0;
  double val_sr = -1.0;
};

// Adam on the LM loss of ground-truth coordinate strings over the train
// split. Deterministic for a fixed seed; parameters are snapped through
// float32 after every step so checkpoints round-trip bitwise.
TrainResult train_grounder(Grounder& g, const Corpus& corpus,
                           const TrainConfig& tc);

Grounder train(const Corpus& corpus, const ModelConfig& mc,
               const TrainConfig& tc);

double evaluate_sr(const Grounder& g, const Corpus& corpus,
                   const std::vector<std::string>& ids, int max_samples);

void write_loss_curve(const std::string& path,
                      const std::vector<std::pair<long, double>>& curve);

}  // namespace guiprobe
