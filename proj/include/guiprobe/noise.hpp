#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "guiprobe/image.hpp"

namespace guiprobe {

// ---- individual transforms ----

Image gaussian_noise(const Image& img, double sigma, std::uint64_t seed);
Image gaussian_blur(const Image& img, int radius, double sigma_b);
// order fixed: brightness scale, saturation toward luma, hue rotation
Image color_jitter(const Image& img, double brightness, double saturation,
                   double hue_shift);
Image contrast(const Image& img, double factor);
Image resize_budget(const Image& img, long long max_pixels);

// ---- declarative spec, serialized into run configurations ----

struct NoiseSpec {
  std::string kind;  // gaussian_noise | gaussian_blur | color_jitter |
                     // contrast | resize_budget
  std::map<std::string, double> params;
  std::uint64_t seed = 0;  // stochastic kinds only; eval reseeds per sample

  void validate() const;
  // stable condition label, e.g. "gaussian_noise(sigma=0.05)"
  std::string label() const;
  bool stochastic() const;
};

Image apply_noise(const Image& img, const NoiseSpec& spec, std::uint64_t seed);

// default severity grid for sweeps (documented in every report)
std::vector<NoiseSpec> default_noise_grid();

}  // namespace guiprobe
