#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "tgh/camera.hpp"
#include "tgh/gaussian.hpp"
#include "tgh/hierarchy.hpp"
#include "tgh/image.hpp"
#include "tgh/loss.hpp"

namespace tgh {

struct RenderOptions {
  Eigen::Vector3d background = Eigen::Vector3d::Zero();
  double alpha_min = 1.0 / 255.0;  // quad opacity threshold
  double alpha_clamp = 0.99;       // per-fragment opacity cap
  double low_pass = 0.3;           // px^2 added to the screen covariance
  double o_th = 0.05;              // temporal culling threshold
  int tile_size = 16;
  bool parallel = true;  // false selects the serial reference compositor
};

struct Splat2D {
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  Eigen::Matrix2d cov2 = Eigen::Matrix2d::Identity();
  double depth = 0.0;
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
  double alpha = 0.0;
  std::uint32_t key = 0;  // tie-break for sorting, the Gaussian id
};

/// Inclusive pixel rectangle of a splat's quad, already clipped to the image.
struct PixelRect {
  int x0 = 0, y0 = 0, x1 = -1, y1 = -1;
  bool contains(int x, int y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
};

struct Quad {
  double half_x = 0.0;
  double half_y = 0.0;
  PixelRect rect;  // empty when x0 > x1 or y0 > y1
};

struct Framebuffer {
  Image color;
  std::vector<double> transmittance;  // product of (1 - a) over composited fragments
};

/// EWA projection; nullopt when the camera-space depth is outside [near, far].
std::optional<Splat2D> project(const ConditionedGaussian3D& g, const Eigen::Vector3d& color, const Camera& cam,
                               double low_pass = 0.3);

/// Back-to-front: decreasing depth, ties by ascending key.
std::vector<std::uint32_t> depth_sort(std::span<const Splat2D> splats);

/// Bounding box of {d : alpha * exp(-0.5 d^T cov2^-1 d) >= alpha_min}; nullopt if alpha < alpha_min.
/// Pass width/height <= 0 to skip clipping.
std::optional<Quad> expand_quad(const Splat2D& s, double alpha_min, int width = 0, int height = 0);

/// Fragment opacity of splat s at pixel (x, y) given its inverse covariance.
double fragment_alpha(const Splat2D& s, const Eigen::Matrix2d& conic, double x, double y, double alpha_clamp);

/// Composites splats (already back-to-front) over the background.
/// The serial and tiled variants produce bit-identical output.
Framebuffer composite_serial(std::span<const Splat2D> ordered, int width, int height, const RenderOptions& opts);
Framebuffer composite_tiled(std::span<const Splat2D> ordered, int width, int height, const RenderOptions& opts);
Framebuffer composite(std::span<const Splat2D> ordered, int width, int height, const RenderOptions& opts);

/// Conditions at t, culls by temporal factor, projects, sorts, composites.
/// keys[i] is the sort tie-break for gaussians[i].
Framebuffer render_gaussians(std::span<const Gaussian4D> gaussians, std::span<const std::uint32_t> keys, double t,
                             const Camera& cam, const RenderOptions& opts);

Framebuffer render(const Hierarchy& h, double t, const Camera& cam, const RenderOptions& opts);

struct GradientResult {
  double loss = 0.0;
  double mse = 0.0;
  double ssim = 1.0;
  Image rendered;
  std::vector<GaussianGradient> gradients;  // aligned with the input Gaussians
  std::vector<Eigen::Vector2d> screen_gradients;  // dL/d(splat center), pixels
  std::vector<std::uint8_t> visible;       // 1 when the Gaussian produced a quad
};

/// Forward render, image loss, and analytic gradients for every input Gaussian.
GradientResult render_with_gradients(std::span<const Gaussian4D> gaussians, std::span<const std::uint32_t> keys,
                                     double t, const Camera& cam, const Image& target, const LossWeights& weights,
                                     const RenderOptions& opts);

/// Gradients for a given dL/d(image), without computing a loss.
GradientResult backward_from_image_gradient(std::span<const Gaussian4D> gaussians,
                                            std::span<const std::uint32_t> keys, double t, const Camera& cam,
                                            const Image& d_image, const RenderOptions& opts);

struct HierarchyGradients {
  MaterializedSet working_set;
  GradientResult result;
};

HierarchyGradients render_with_gradients(const Hierarchy& h, double t, const Camera& cam, const Image& target,
                                         const LossWeights& weights, const RenderOptions& opts);

}  // namespace tgh
