#include "guiprobe/noise.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "guiprobe/errors.hpp"
#include "guiprobe/rng.hpp"

namespace guiprobe {

namespace {

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

// RGB <-> HSV on [0,1] channels; hue in [0,1) fractions of the circle.
void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  v = mx;
  s = mx > 0.0 ? d / mx : 0.0;
  if (d <= 0.0) {
    h = 0.0;
    return;
  }
  if (mx == r) {
    h = (g - b) / d;
  } else if (mx == g) {
    h = 2.0 + (b - r) / d;
  } else {
    h = 4.0 + (r - g) / d;
  }
  h /= 6.0;
  if (h < 0.0) h += 1.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  if (s <= 0.0) {
    r = g = b = v;
    return;
  }
  h = h - std::floor(h);
  const double hh = h * 6.0;
  const int i = std::min(5, static_cast<int>(hh));
  const double f = hh - i;
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

double lerp(double a, double b, double t) { return a + t * (b - a); }

}  // namespace

Image gaussian_noise(const Image& img, double sigma, std::uint64_t seed) {
  if (sigma < 0.0) throw DataError("gaussian_noise: sigma must be >= 0");
  if (sigma == 0.0) return img;
  Image out = img;
  Rng rng(seed);
  for (double& v : out.data) v = clamp01(v + sigma * rng.normal());
  return out;
}

Image gaussian_blur(const Image& img, int radius, double sigma_b) {
  if (radius < 0) throw DataError("gaussian_blur: radius must be >= 0");
  if (radius == 0) return img;
  if (sigma_b <= 0.0) throw DataError("gaussian_blur: sigma_b must be > 0");
  const int k = 2 * radius + 1;
  if (k > std::min(img.height, img.width))
    throw DataError("gaussian_blur: kernel exceeds image size");

  std::vector<double> kernel(k);
  double sum = 0.0;
  for (int i = 0; i < k; ++i) {
    const double d = i - radius;
    kernel[i] = std::exp(-d * d / (2.0 * sigma_b * sigma_b));
    sum += kernel[i];
  }
  for (double& w : kernel) w /= sum;

  const int H = img.height, W = img.width;
  Image tmp(H, W), out(H, W);
  // horizontal pass, clamp-replicated edges
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int xx = std::min(W - 1, std::max(0, x + i));
          acc += kernel[i + radius] * img.at(y, xx, c);
        }
        tmp.at(y, x, c) = acc;
      }
    }
  }
  // vertical pass
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int yy = std::min(H - 1, std::max(0, y + i));
          acc += kernel[i + radius] * tmp.at(yy, x, c);
        }
        out.at(y, x, c) = acc;
      }
    }
  }
  return out;
}

Image color_jitter(const Image& img, double brightness, double saturation,
                   double hue_shift) {
  if (brightness < 0.0) throw DataError("color_jitter: brightness must be >= 0");
  if (saturation < 0.0) throw DataError("color_jitter: saturation must be >= 0");
  if (std::abs(hue_shift) > 0.5)
    throw DataError("color_jitter: |hue_shift| must be <= 0.5");
  Image out(img.height, img.width);
  for (int i = 0; i < img.pixels(); ++i) {
    double r = clamp01(img.data[3 * i] * brightness);
    double g = clamp01(img.data[3 * i + 1] * brightness);
    double b = clamp01(img.data[3 * i + 2] * brightness);
    const double luma = 0.299 * r + 0.587 * g + 0.114 * b;
    r = clamp01(lerp(luma, r, saturation));
    g = clamp01(lerp(luma, g, saturation));
    b = clamp01(lerp(luma, b, saturation));
    if (hue_shift != 0.0) {
      double h, s, v;
      rgb_to_hsv(r, g, b, h, s, v);
      hsv_to_rgb(h + hue_shift, s, v, r, g, b);
      r = clamp01(r);
      g = clamp01(g);
      b = clamp01(b);
    }
    out.data[3 * i] = r;
    out.data[3 * i + 1] = g;
    out.data[3 * i + 2] = b;
  }
  return out;
}

Image contrast(const Image& img, double factor) {
  if (factor < 0.0) throw DataError("contrast: factor must be >= 0");
  double mean = 0.0;
  for (int i = 0; i < img.pixels(); ++i) {
    mean += 0.299 * img.data[3 * i] + 0.587 * img.data[3 * i + 1] +
            0.114 * img.data[3 * i + 2];
  }
  mean /= img.pixels();
  if (factor == 1.0) return img;
  Image out(img.height, img.width);
  for (int i = 0; i < static_cast<int>(img.data.size()); ++i)
    out.data[i] = clamp01(mean + factor * (img.data[i] - mean));
  return out;
}

Image resize_budget(const Image& img, long long max_pixels) {
  if (max_pixels < 64) throw DataError("resize_budget: max_pixels must be >= 64");
  const long long area = static_cast<long long>(img.height) * img.width;
  if (area <= max_pixels) return img;

  const int H = img.height, W = img.width;
  double scale = std::sqrt(static_cast<double>(max_pixels) / area);
  int nh = std::max(1, static_cast<int>(H * scale));
  int nw = std::max(1, static_cast<int>(W * scale));
  // greedily push the scale up while the floored sizes still fit the budget
  for (;;) {
    const double s_next =
        std::min(static_cast<double>(nh + 1) / H, static_cast<double>(nw + 1) / W);
    const int ch = std::max(1, static_cast<int>(H * s_next));
    const int cw = std::max(1, static_cast<int>(W * s_next));
    if (static_cast<long long>(ch) * cw > max_pixels || (ch == nh && cw == nw))
      break;
    nh = ch;
    nw = cw;
  }

  Image out(nh, nw);
  const double sy = static_cast<double>(H) / nh;
  const double sx = static_cast<double>(W) / nw;
  for (int y = 0; y < nh; ++y) {
    const double src_y = std::min(static_cast<double>(H - 1),
                                  std::max(0.0, (y + 0.5) * sy - 0.5));
    const int y0 = static_cast<int>(src_y);
    const int y1 = std::min(H - 1, y0 + 1);
    const double fy = src_y - y0;
    for (int x = 0; x < nw; ++x) {
      const double src_x = std::min(static_cast<double>(W - 1),
                                    std::max(0.0, (x + 0.5) * sx - 0.5));
      const int x0 = static_cast<int>(src_x);
      const int x1 = std::min(W - 1, x0 + 1);
      const double fx = src_x - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = lerp(img.at(y0, x0, c), img.at(y0, x1, c), fx);
        const double bot = lerp(img.at(y1, x0, c), img.at(y1, x1, c), fx);
        out.at(y, x, c) = lerp(top, bot, fy);
      }
    }
  }
  return out;
}

namespace {

double param_of(const NoiseSpec& s, const std::string& key) {
  auto it = s.params.find(key);
  if (it == s.params.end())
    throw DataError("noise spec '" + s.kind + "': missing parameter '" + key + "'");
  return it->second;
}

void require_params(const NoiseSpec& s, const std::vector<std::string>& keys) {
  for (const auto& k : keys) (void)param_of(s, k);
  for (const auto& [k, v] : s.params) {
    (void)v;
    if (std::find(keys.begin(), keys.end(), k) == keys.end())
      throw DataError("noise spec '" + s.kind + "': unknown parameter '" + k + "'");
  }
}

}  // namespace

bool NoiseSpec::stochastic() const {
  return kind == "gaussian_noise" || kind == "color_jitter";
}

void NoiseSpec::validate() const {
  if (kind == "gaussian_noise") {
    require_params(*this, {"sigma"});
    if (param_of(*this, "sigma") < 0.0)
      throw DataError("noise spec: sigma must be >= 0");
  } else if (kind == "gaussian_blur") {
    require_params(*this, {"radius", "sigma_b"});
    const double r = param_of(*this, "radius");
    if (r < 0.0 || r != std::floor(r))
      throw DataError("noise spec: radius must be a non-negative integer");
    if (r > 0.0 && param_of(*this, "sigma_b") <= 0.0)
      throw DataError("noise spec: sigma_b must be > 0");
  } else if (kind == "color_jitter") {
    require_params(*this, {"brightness_lo", "brightness_hi", "saturation_lo",
                           "saturation_hi", "hue_lo", "hue_hi"});
    const double blo = param_of(*this, "brightness_lo");
    const double bhi = param_of(*this, "brightness_hi");
    const double slo = param_of(*this, "saturation_lo");
    const double shi = param_of(*this, "saturation_hi");
    const double hlo = param_of(*this, "hue_lo");
    const double hhi = param_of(*this, "hue_hi");
    if (blo < 0.0 || bhi < blo || slo < 0.0 || shi < slo)
      throw DataError("noise spec: bad factor range");
    if (hlo < -0.5 || hhi > 0.5 || hhi < hlo)
      throw DataError("noise spec: hue range must lie in [-0.5, 0.5]");
  } else if (kind == "contrast") {
    require_params(*this, {"factor"});
    if (param_of(*this, "factor") < 0.0)
      throw DataError("noise spec: factor must be >= 0");
  } else if (kind == "resize_budget") {
    require_params(*this, {"max_pixels"});
    const double b = param_of(*this, "max_pixels");
    if (b < 64.0 || b != std::floor(b))
      throw DataError("noise spec: max_pixels must be an integer >= 64");
  } else {
    throw DataError("noise spec: unknown kind '" + kind + "'");
  }
}

std::string NoiseSpec::label() const {
  std::string out = kind + "(";
  bool first = true;
  for (const auto& [k, v] : params) {
    if (!first) out += ",";
    first = false;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s=%g", k.c_str(), v);
    out += buf;
  }
  out += ")";
  return out;
}

Image apply_noise(const Image& img, const NoiseSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (spec.kind == "gaussian_noise") {
    return gaussian_noise(img, spec.params.at("sigma"), seed);
  }
  if (spec.kind == "gaussian_blur") {
    return gaussian_blur(img, static_cast<int>(spec.params.at("radius")),
                         spec.params.at("sigma_b"));
  }
  if (spec.kind == "color_jitter") {
    Rng rng(seed);
    const double b =
        rng.uniform(spec.params.at("brightness_lo"), spec.params.at("brightness_hi"));
    const double s =
        rng.uniform(spec.params.at("saturation_lo"), spec.params.at("saturation_hi"));
    const double h = rng.uniform(spec.params.at("hue_lo"), spec.params.at("hue_hi"));
    return color_jitter(img, b, s, h);
  }
  if (spec.kind == "contrast") {
    return contrast(img, spec.params.at("factor"));
  }
  return resize_budget(img, static_cast<long long>(spec.params.at("max_pixels")));
}

std::vector<NoiseSpec> default_noise_grid() {
  std::vector<NoiseSpec> grid;
  for (double sigma : {0.02, 0.05, 0.1})
    grid.push_back({"gaussian_noise", {{"sigma", sigma}}, 0});
  for (int radius : {1, 2, 3})
    grid.push_back({"gaussian_blur",
                    {{"radius", static_cast<double>(radius)},
                     {"sigma_b", radius / 2.0}},
                    0});
  grid.push_back({"color_jitter",
                  {{"brightness_lo", 0.7},
                   {"brightness_hi", 1.3},
                   {"saturation_lo", 0.7},
                   {"saturation_hi", 1.3},
                   {"hue_lo", -0.1},
                   {"hue_hi", 0.1}},
                  0});
  for (double f : {0.5, 1.5, 2.0})
    grid.push_back({"contrast", {{"factor", f}}, 0});
  return grid;
}

}  // namespace guiprobe
