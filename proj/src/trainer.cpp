#include "guiprobe/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "guiprobe/errors.hpp"
#include "guiprobe/metrics.hpp"
#include "guiprobe/optim.hpp"
#include "guiprobe/rng.hpp"

namespace guiprobe {

TrainResult train_grounder(Grounder& g, const Corpus& corpus,
                           const TrainConfig& tc) {
  if (corpus.split_train.empty())
    throw DataError("train: corpus has no train split");
  if (tc.steps < 1) throw DataError("train: steps must be >= 1");

  // Pre-resolve train records once; ids are looked up per epoch order.
  std::vector<const CorpusRecord*> train_recs;
  train_recs.reserve(corpus.split_train.size());
  for (const auto& id : corpus.split_train)
    train_recs.push_back(&corpus.record(id));
  const int n_train = static_cast<int>(train_recs.size());

  std::map<std::string, AdamState> states;
  AdamConfig adam;
  TrainResult result;
  double chunk_sum = 0.0;
  int chunk_n = 0;

  std::vector<int> order(n_train);
  int epoch = -1;
  int pos = n_train;  // forces a shuffle on the first step

  constexpr double kPi = 3.14159265358979323846;
  for (long step = 0; step < tc.steps; ++step) {
    if (pos >= n_train) {
      ++epoch;
      pos = 0;
      for (int i = 0; i < n_train; ++i) order[i] = i;
      Rng shuffle_rng(hash_mix(tc.seed, 0x45504F43ULL + epoch));
      for (int i = n_train - 1; i > 0; --i)
        std::swap(order[i], order[shuffle_rng.uniform_int(0, i)]);
    }
    const CorpusRecord& rec = *train_recs[order[pos++]];

    const Image img = quantize8(corpus.load_image(rec));
    const std::vector<int> targets = g.target_ids_for(rec.target_bbox);

    Tape tape;
    Grounder::ParamVals pv;
    const auto image = g.build_image_leaf(tape, img, false);
    const auto loss = g.build_lm_loss(tape, image, img.height, img.width,
                                      rec.instruction_tokens, targets, &pv);
    const double loss_v = tape.value(loss).data[0];
    if (!std::isfinite(loss_v)) {
      char buf[160];
      std::snprintf(buf, sizeof buf,
                    "train: non-finite loss %g at step %ld (sample %s)", loss_v,
                    step, rec.id.c_str());
      throw NumericalError(buf);
    }
    tape.backward(loss);

    // global-norm clip across all parameter gradients
    double scale = 1.0;
    if (tc.clip_norm > 0.0) {
      double sq = 0.0;
      for (const auto& [name, val] : pv) {
        const Tensor& grad = tape.grad(val);
        for (double v : grad.data) sq += v * v;
      }
      if (!std::isfinite(sq)) {
        char buf[160];
        std::snprintf(buf, sizeof buf,
                      "train: non-finite gradient at step %ld (sample %s)", step,
                      rec.id.c_str());
        throw NumericalError(buf);
      }
      const double norm = std::sqrt(sq);
      if (norm > tc.clip_norm) scale = tc.clip_norm / norm;
    }

    // warmup then cosine decay
    double lr = tc.lr;
    if (step < tc.warmup_steps) {
      lr = tc.lr * (step + 1) / tc.warmup_steps;
    } else if (tc.steps > tc.warmup_steps) {
      const double t = static_cast<double>(step - tc.warmup_steps) /
                       (tc.steps - tc.warmup_steps);
      const double lo = tc.lr * tc.final_lr_frac;
      lr = lo + (tc.lr - lo) * 0.5 * (1.0 + std::cos(kPi * t));
    }
    adam.lr = lr;

    for (const auto& [name, val] : pv) {
      Tensor grad = tape.grad(val);
      if (scale != 1.0)
        for (double& v : grad.data) v *= scale;
      Tensor& p = g.params().at(name);
      adam_step(p, grad, states[name], adam);
      snap_to_float32(p);
    }

    chunk_sum += loss_v;
    ++chunk_n;
    if ((step + 1) % tc.log_every == 0 || step + 1 == tc.steps) {
      result.loss_curve.emplace_back(step + 1, chunk_sum / chunk_n);
      chunk_sum = 0.0;
      chunk_n = 0;
    }
  }

  result.final_loss = result.loss_curve.empty() ? 0.0
                                                : result.loss_curve.back().second;
  result.val_sr =
      corpus.split_val.empty()
          ? -1.0
          : evaluate_sr(g, corpus, corpus.split_val, tc.val_max_samples);

  g.meta().steps += tc.steps;
  g.meta().final_loss = result.final_loss;
  g.meta().val_sr = result.val_sr;
  return result;
}

Grounder train(const Corpus& corpus, const ModelConfig& mc,
               const TrainConfig& tc) {
  Grounder g = Grounder::init(mc, Vocabulary::standard(), tc.seed);
  train_grounder(g, corpus, tc);
  return g;
}

double evaluate_sr(const Grounder& g, const Corpus& corpus,
                   const std::vector<std::string>& ids, int max_samples) {
  if (ids.empty()) throw DataError("evaluate_sr: no sample ids");
  long n = 0, hits = 0;
  for (const auto& id : ids) {
    if (max_samples >= 0 && n >= max_samples) break;
    const CorpusRecord& rec = corpus.record(id);
    const Image img = quantize8(corpus.load_image(rec));
    const GroundingPrediction pred = g.generate(img, rec.instruction_tokens);
    ++n;
    if (success_of(pred, rec.target_bbox)) ++hits;
  }
  return static_cast<double>(hits) / n;
}

void write_loss_curve(const std::string& path,
                      const std::vector<std::pair<long, double>>& curve) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("loss curve: cannot write '" + path + "'");
  f << "step,loss\n";
  char buf[64];
  for (const auto& [step, loss] : curve) {
    std::snprintf(buf, sizeof buf, "%ld,%.6f\n", step, loss);
    f << buf;
  }
  f.close();
  if (!f) throw DataError("loss curve: write failure on '" + path + "'");
}

}  // namespace guiprobe
