#include "tgh/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include <png.h>

#include "tgh/error.hpp"

namespace tgh {

Image::Image(int w, int h, const Eigen::Vector3d& fill) : width(w), height(h) {
  if (w < 0 || h < 0) fail(ErrorKind::InvalidParameter, "negative image size");
  data.resize(static_cast<std::size_t>(w) * h * 3);
  for (std::size_t i = 0; i < pixel_count(); ++i)
    for (int c = 0; c < 3; ++c) data[i * 3 + c] = fill[c];
}

Eigen::Vector3d Image::pixel(int x, int y) const {
  const std::size_t i = index(x, y);
  return {data[i], data[i + 1], data[i + 2]};
}

void Image::set_pixel(int x, int y, const Eigen::Vector3d& v) {
  const std::size_t i = index(x, y);
  data[i] = v[0];
  data[i + 1] = v[1];
  data[i + 2] = v[2];
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

void write_png(const std::filesystem::path& path, const Image& image) {
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) fail(ErrorKind::InvalidParameter, "cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) fail(ErrorKind::InvalidParameter, "libpng init failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::InvalidParameter, "libpng write failed: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_sRGB(png, info, PNG_sRGB_INTENT_PERCEPTUAL);
  png_write_info(png, info);
  std::vector<std::uint8_t> row(static_cast<std::size_t>(image.width) * 3);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c) row[x * 3 + c] = to_byte(image.at(x, y, c));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) fail(ErrorKind::Parse, "cannot open image " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) fail(ErrorKind::Parse, "libpng init failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::Parse, "not a readable PNG: " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  // Normalize every input flavor to 8-bit RGB.
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_packing(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  Image image(w, h);
  std::vector<std::uint8_t> row(png_get_rowbytes(png, info));
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) image.at(x, y, c) = row[x * 3 + c] / 255.0;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

}  // namespace tgh
