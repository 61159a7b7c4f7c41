#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "guiprobe/grounder.hpp"
#include "guiprobe/image.hpp"

namespace guiprobe {

struct AttackConfig {
  double epsilon = 16.0 / 255.0;
  double alpha = 1.0 / 255.0;
  int steps = 100;
  // "auto" resolves per objective: random_uniform for untargeted (zero-init
  // provably stalls at the stationary point delta=0), zero for targeted.
  std::string init = "auto";  // auto | zero | random_uniform
  std::string objective = "untargeted_encoder";  // untargeted_encoder | targeted_lm
  bool quantize_output = true;

  void validate() const;
};

// The init mode actually used: "auto" mapped to the per-objective default.
std::string resolved_init(const AttackConfig& cfg);

struct TargetSpec {
  Box region{0.0, 0.0, 0.02, 0.02};  // top-left 0.04% of the canvas
  std::string target_tokens;         // coordinate string in the victim's format

  void validate(const std::string& output_mode) const;
  static TargetSpec top_left(const std::string& output_mode);
};

// Coordinate string for a region in the victim's native output format:
// point mode encodes the region center, bbox mode the region corners.
std::string make_target_tokens(const Box& region, const std::string& mode);

struct AttackTrace {
  // J convention: the ascended objective — feature distance for untargeted,
  // negated LM loss for targeted. steps+1 entries including the initial value.
  std::vector<double> objective;
  std::vector<double> best_so_far;  // running max of objective
  std::vector<double> delta;        // final perturbation, pre-quantization
  std::vector<double> x_adv;        // final flat pixels (quantized if configured)
  Image adversarial;                // x_adv as an image (set by pgd())
  int steps_executed = 0;
  double pre_quant_objective = 0.0;
  double post_quant_objective = 0.0;
};

// Elementwise clamp to [-epsilon, +epsilon].
std::vector<double> project_linf(std::vector<double> delta, double epsilon);

// Generic sign-PGD ascent over a flat variable with box feasibility
// [clean - eps, clean + eps] ∩ [0, 1]. J(x, grad) returns the objective and,
// when grad != nullptr, fills d J / d x. Feasibility is asserted per step.
using ObjectiveFn =
    std::function<double(const std::vector<double>& x, std::vector<double>* grad)>;
AttackTrace pgd_core(const std::vector<double>& clean, const ObjectiveFn& J,
                     const AttackConfig& cfg, std::uint64_t seed);

// Eq.-style objectives against a grounder. `delta` is flat (y, x, channel).
double untargeted_loss(const Grounder& g, const Image& s,
                       const std::vector<double>& delta,
                       std::vector<double>* grad = nullptr);
double targeted_loss(const Grounder& g, const Image& s,
                     const std::vector<double>& delta,
                     const std::vector<int>& instruction,
                     const TargetSpec& target,
                     std::vector<double>* grad = nullptr);

// Full attack against a grounder; target required iff objective targeted_lm.
AttackTrace pgd(const Grounder& g, const Image& s,
                const std::vector<int>& instruction, const AttackConfig& cfg,
                const TargetSpec* target, std::uint64_t seed);

}  // namespace guiprobe
