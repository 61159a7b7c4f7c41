#include "guiprobe/attack.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "guiprobe/errors.hpp"
#include "guiprobe/rng.hpp"
#include "guiprobe/tape.hpp"

namespace guiprobe {

void AttackConfig::validate() const {
  if (!(alpha > 0.0) || !(alpha <= epsilon) || !(epsilon <= 1.0))
    throw DataError("attack config: need 0 < alpha <= epsilon <= 1");
  if (steps < 0) throw DataError("attack config: steps must be >= 0");
  if (init != "auto" && init != "zero" && init != "random_uniform")
    throw DataError("attack config: init must be 'auto', 'zero' or 'random_uniform'");
  if (objective != "untargeted_encoder" && objective != "targeted_lm")
    throw DataError(
        "attack config: objective must be 'untargeted_encoder' or 'targeted_lm'");
}

std::string resolved_init(const AttackConfig& cfg) {
  if (cfg.init != "auto") return cfg.init;
  return cfg.objective == "targeted_lm" ? "zero" : "random_uniform";
}

std::string make_target_tokens(const Box& region, const std::string& mode) {
  if (!region.valid())
    throw DataError("make_target_tokens: degenerate region");
  if (region.x0 < 0.0 || region.y0 < 0.0 || region.x1 > 1.0 || region.y1 > 1.0)
    throw DataError("make_target_tokens: region outside the unit square");
  const auto milli = [](double v) {
    return static_cast<int>(std::min(999L, std::max(0L, std::lround(v * 1000.0))));
  };
  char buf[32];
  if (mode == "point") {
    std::snprintf(buf, sizeof buf, "(%03d,%03d)", milli(region.cx()),
                  milli(region.cy()));
  } else if (mode == "bbox") {
    std::snprintf(buf, sizeof buf, "(%03d,%03d,%03d,%03d)", milli(region.x0),
                  milli(region.y0), milli(region.x1), milli(region.y1));
  } else {
    throw DataError("make_target_tokens: unknown mode '" + mode + "'");
  }
  return buf;
}

void TargetSpec::validate(const std::string& output_mode) const {
  if (!region.valid()) throw DataError("target spec: degenerate region");
  if (region.x0 < 0.0 || region.y0 < 0.0 || region.x1 > 1.0 || region.y1 > 1.0)
    throw DataError("target spec: region outside the unit square");
  if (std::abs(region.area() - 0.0004) > 1e-9)
    throw DataError("target spec: region area must be 0.04% of the canvas");
  if (target_tokens.empty()) throw DataError("target spec: empty target tokens");
  if (!parse_prediction(target_tokens, output_mode).valid)
    throw DataError("target spec: target tokens do not parse as " + output_mode);
}

TargetSpec TargetSpec::top_left(const std::string& output_mode) {
  TargetSpec t;
  t.target_tokens = make_target_tokens(t.region, output_mode);
  return t;
}

std::vector<double> project_linf(std::vector<double> delta, double epsilon) {
  for (double& d : delta) d = std::min(epsilon, std::max(-epsilon, d));
  return delta;
}

namespace {

void check_feasible(const std::vector<double>& x,
                    const std::vector<double>& clean, double eps, int step) {
  for (size_t i = 0; i < x.size(); ++i) {
    const bool ok = std::abs(x[i] - clean[i]) <= eps + 1e-9 && x[i] >= 0.0 &&
                    x[i] <= 1.0;
    if (!ok) {
      char buf[160];
      std::snprintf(buf, sizeof buf,
                    "pgd: infeasible pixel %zu at step %d (x=%.12g clean=%.12g)",
                    i, step, x[i], clean[i]);
      throw NumericalError(buf);
    }
  }
}

double quant8(double v) { return std::round(v * 255.0) / 255.0; }

}  // namespace

AttackTrace pgd_core(const std::vector<double>& clean, const ObjectiveFn& J,
                     const AttackConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const size_t n = clean.size();
  const double eps = cfg.epsilon;

  std::vector<double> x = clean;
  if (resolved_init(cfg) == "random_uniform") {
    Rng rng(seed);
    for (size_t i = 0; i < n; ++i) {
      const double d = rng.uniform(-eps, eps);
      x[i] = std::min(1.0, std::max(0.0, clean[i] + d));
    }
  }
  check_feasible(x, clean, eps, -1);

  AttackTrace trace;
  trace.objective.reserve(cfg.steps + 1);
  std::vector<double> grad(n);

  for (int step = 0; step < cfg.steps; ++step) {
    const double j = J(x, &grad);
    if (!std::isfinite(j))
      throw NumericalError("pgd: non-finite objective at step " +
                           std::to_string(step));
    for (double gv : grad)
      if (!std::isfinite(gv))
        throw NumericalError("pgd: non-finite gradient at step " +
                             std::to_string(step));
    trace.objective.push_back(j);
    for (size_t i = 0; i < n; ++i) {
      const double s = grad[i] > 0.0 ? 1.0 : (grad[i] < 0.0 ? -1.0 : 0.0);
      double v = x[i] + cfg.alpha * s;
      v = std::min(clean[i] + eps, std::max(clean[i] - eps, v));
      x[i] = std::min(1.0, std::max(0.0, v));
    }
    check_feasible(x, clean, eps, step);
  }

  const double j_final = J(x, nullptr);
  if (!std::isfinite(j_final))
    throw NumericalError("pgd: non-finite final objective");
  trace.objective.push_back(j_final);

  trace.best_so_far.reserve(trace.objective.size());
  double best = trace.objective.front();
  for (double v : trace.objective) {
    best = std::max(best, v);
    trace.best_so_far.push_back(best);
  }

  trace.steps_executed = cfg.steps;
  trace.pre_quant_objective = j_final;
  trace.post_quant_objective = j_final;

  trace.delta.resize(n);
  double max_abs = 0.0;
  for (size_t i = 0; i < n; ++i) {
    trace.delta[i] = x[i] - clean[i];
    max_abs = std::max(max_abs, std::abs(trace.delta[i]));
  }

  // A zero perturbation means no attack happened; quantization would only
  // disturb the clean pixels, so it is skipped (steps=0 stays bitwise clean).
  if (cfg.quantize_output && max_abs > 0.0) {
    std::vector<double> xq(n);
    for (size_t i = 0; i < n; ++i) xq[i] = quant8(x[i]);
    const double jq = J(xq, nullptr);
    if (!std::isfinite(jq))
      throw NumericalError("pgd: non-finite post-quantization objective");
    trace.post_quant_objective = jq;
    trace.x_adv = std::move(xq);
  } else {
    trace.x_adv = std::move(x);
  }
  return trace;
}

double untargeted_loss(const Grounder& g, const Image& s,
                       const std::vector<double>& delta,
                       std::vector<double>* grad) {
  if (delta.size() != s.data.size())
    throw DataError("untargeted_loss: delta shape mismatch");
  const Tensor clean_emb = g.encode_image(s);

  Tape tape;
  Tensor adv;
  adv.shape = {s.height, s.width, 3};
  adv.data.resize(delta.size());
  for (size_t i = 0; i < delta.size(); ++i) adv.data[i] = s.data[i] + delta[i];
  adv.requires_grad = grad != nullptr;
  const auto image = grad ? tape.leaf(std::move(adv)) : tape.constant(std::move(adv));
  const auto emb = g.build_encoder(tape, image, s.height, s.width, nullptr);
  const auto diff = tape.sub(emb, tape.constant(clean_emb));
  const auto loss = tape.sum(tape.mul(diff, diff));
  if (grad) {
    tape.backward(loss);
    *grad = tape.grad(image).data;
  }
  return tape.value(loss).data[0];
}

double targeted_loss(const Grounder& g, const Image& s,
                     const std::vector<double>& delta,
                     const std::vector<int>& instruction,
                     const TargetSpec& target, std::vector<double>* grad) {
  if (delta.size() != s.data.size())
    throw DataError("targeted_loss: delta shape mismatch");
  target.validate(g.config().output_mode);
  std::vector<int> ids = g.vocab().tokenize_chars(target.target_tokens);
  ids.push_back(Vocabulary::kEos);

  Tape tape;
  Tensor adv;
  adv.shape = {s.height, s.width, 3};
  adv.data.resize(delta.size());
  for (size_t i = 0; i < delta.size(); ++i) adv.data[i] = s.data[i] + delta[i];
  adv.requires_grad = grad != nullptr;
  const auto image = grad ? tape.leaf(std::move(adv)) : tape.constant(std::move(adv));
  const auto loss =
      g.build_lm_loss(tape, image, s.height, s.width, instruction, ids, nullptr);
  if (grad) {
    tape.backward(loss);
    *grad = tape.grad(image).data;
  }
  return tape.value(loss).data[0];
}

AttackTrace pgd(const Grounder& g, const Image& s,
                const std::vector<int>& instruction, const AttackConfig& cfg,
                const TargetSpec* target, std::uint64_t seed) {
  cfg.validate();
  const bool targeted = cfg.objective == "targeted_lm";
  if (targeted && !target)
    throw DataError("pgd: targeted objective needs a target spec");

  ObjectiveFn J;
  if (targeted) {
    target->validate(g.config().output_mode);
    std::vector<int> ids = g.vocab().tokenize_chars(target->target_tokens);
    ids.push_back(Vocabulary::kEos);
    J = [&g, &s, &instruction, ids](const std::vector<double>& x,
                                    std::vector<double>* grad) {
      Tape tape;
      Tensor adv;
      adv.shape = {s.height, s.width, 3};
      adv.data = x;
      adv.requires_grad = grad != nullptr;
      const auto image =
          grad ? tape.leaf(std::move(adv)) : tape.constant(std::move(adv));
      const auto loss = g.build_lm_loss(tape, image, s.height, s.width,
                                        instruction, ids, nullptr);
      if (grad) {
        tape.backward(loss);
        *grad = tape.grad(image).data;
        for (double& v : *grad) v = -v;  // ascend J = -lm_loss
      }
      return -tape.value(loss).data[0];
    };
  } else {
    // clean-branch embedding frozen once per attack
    auto clean_emb = std::make_shared<Tensor>(g.encode_image(s));
    J = [&g, &s, clean_emb](const std::vector<double>& x,
                            std::vector<double>* grad) {
      Tape tape;
      Tensor adv;
      adv.shape = {s.height, s.width, 3};
      adv.data = x;
      adv.requires_grad = grad != nullptr;
      const auto image =
          grad ? tape.leaf(std::move(adv)) : tape.constant(std::move(adv));
      const auto emb = g.build_encoder(tape, image, s.height, s.width, nullptr);
      const auto diff = tape.sub(emb, tape.constant(*clean_emb));
      const auto loss = tape.sum(tape.mul(diff, diff));
      if (grad) {
        tape.backward(loss);
        *grad = tape.grad(image).data;
      }
      return tape.value(loss).data[0];
    };
  }

  AttackTrace trace = pgd_core(s.data, J, cfg, seed);
  trace.adversarial.height = s.height;
  trace.adversarial.width = s.width;
  trace.adversarial.data = trace.x_adv;
  return trace;
}

}  // namespace guiprobe
