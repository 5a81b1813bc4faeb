#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include <Eigen/Core>

namespace tgh {

/// Linear RGB image, channel-interleaved, values nominally in [0, 1].
/// Pixel (x, y) has its center at image coordinates (x, y).
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, const Eigen::Vector3d& fill = Eigen::Vector3d::Zero());

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  std::size_t index(int x, int y) const { return (static_cast<std::size_t>(y) * width + x) * 3; }
  double& at(int x, int y, int c) { return data[index(x, y) + c]; }
  double at(int x, int y, int c) const { return data[index(x, y) + c]; }
  Eigen::Vector3d pixel(int x, int y) const;
  void set_pixel(int x, int y, const Eigen::Vector3d& v);

  friend bool operator==(const Image&, const Image&) = default;
};

/// 8-bit RGB PNG, no alpha. Values are clamped to [0, 1] and rounded.
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

}  // namespace tgh
