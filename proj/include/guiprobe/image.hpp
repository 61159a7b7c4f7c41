#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace guiprobe {

// RGB raster with values in [0, 1], row-major (y, x, channel).
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w * 3, 0.0) {}

  double& at(int y, int x, int c) {
    return data[(static_cast<size_t>(y) * width + x) * 3 + c];
  }
  double at(int y, int x, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * 3 + c];
  }
  std::int64_t pixels() const { return static_cast<std::int64_t>(height) * width; }

  void fill(double r, double g, double b);
  bool same_bytes(const Image& other) const {
    return height == other.height && width == other.width && data == other.data;
  }
};

// Axis-aligned box in normalized coordinates, x across, y down.
struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x0 + x1); }
  double cy() const { return 0.5 * (y0 + y1); }
  bool contains(double x, double y) const {  // boundary inclusive
    return x >= x0 && x <= x1 && y >= y0 && y <= y1;
  }
  bool valid() const { return x0 < x1 && y0 < y1; }
};

// Snap to the 8-bit grid: round(v*255)/255 per channel.
Image quantize8(const Image& img);

void write_png(const Image& img, const std::string& path);
Image read_png(const std::string& path);

}  // namespace guiprobe
