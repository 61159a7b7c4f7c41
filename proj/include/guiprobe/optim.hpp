#pragma once

#include "guiprobe/tensor.hpp"

namespace guiprobe {

struct AdamState {
  Tensor m;  // first moment
  Tensor v;  // second moment
  long step = 0;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update in place. State tensors are allocated on
// first use and must keep the parameter's shape afterwards.
void adam_step(Tensor& param, const Tensor& grad, AdamState& state,
               const AdamConfig& cfg);

// Rounds every entry through a 32-bit float. Parameters are snapped after
// each optimizer step so the float32 checkpoint format round-trips bitwise.
void snap_to_float32(Tensor& t);

}  // namespace guiprobe
