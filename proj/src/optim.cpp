#include "guiprobe/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace guiprobe {

void adam_step(Tensor& param, const Tensor& grad, AdamState& state,
               const AdamConfig& cfg) {
  if (!param.same_shape(grad))
    throw std::invalid_argument("adam_step: param " + param.shape_str() +
                                " vs grad " + grad.shape_str());
  if (state.step == 0 && state.m.numel() == 0) {
    state.m = Tensor::zeros(param.shape);
    state.v = Tensor::zeros(param.shape);
  }
  if (!state.m.same_shape(param) || !state.v.same_shape(param))
    throw std::invalid_argument("adam_step: state shape mismatch for " +
                                param.shape_str());
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < param.data.size(); ++i) {
    const double g = grad.data[i];
    state.m.data[i] = cfg.beta1 * state.m.data[i] + (1.0 - cfg.beta1) * g;
    state.v.data[i] = cfg.beta2 * state.v.data[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = state.m.data[i] / bc1;
    const double vhat = state.v.data[i] / bc2;
    param.data[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

void snap_to_float32(Tensor& t) {
  for (auto& v : t.data) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace guiprobe
