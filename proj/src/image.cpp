#include "guiprobe/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

#include "guiprobe/errors.hpp"

namespace guiprobe {

void Image::fill(double r, double g, double b) {
  for (std::int64_t i = 0; i < pixels(); ++i) {
    data[i * 3 + 0] = r;
    data[i * 3 + 1] = g;
    data[i * 3 + 2] = b;
  }
}

Image quantize8(const Image& img) {
  Image out(img.height, img.width);
  for (size_t i = 0; i < img.data.size(); ++i) {
    double v = img.data[i];
    v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    out.data[i] = std::round(v * 255.0) / 255.0;
  }
  return out;
}

namespace {
struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace

void write_png(const Image& img, const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw DataError("cannot open " + path + " for writing");
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("png_create_info_struct failed");
  }
  std::vector<unsigned char> bytes(static_cast<size_t>(img.pixels()) * 3);
  for (size_t i = 0; i < img.data.size(); ++i) {
    double v = img.data[i];
    v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng failure while writing " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, bytes.data() + static_cast<size_t>(y) * img.width * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw DataError("cannot open " + path);
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng failure while reading " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  // Normalize any valid PNG to 8-bit RGB.
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  if (png_get_rowbytes(png, info) != static_cast<size_t>(w) * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("unexpected row layout in " + path);
  }
  std::vector<unsigned char> bytes(static_cast<size_t>(h) * w * 3);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y)
    rows[y] = bytes.data() + static_cast<size_t>(y) * w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  Image img(h, w);
  for (size_t i = 0; i < img.data.size(); ++i)
    img.data[i] = static_cast<double>(bytes[i]) / 255.0;
  return img;
}

}  // namespace guiprobe
