#include "tgh/renderer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include <omp.h>

#include "tgh/error.hpp"

namespace tgh {

namespace {

// Per-Gaussian forward state kept for the backward pass.
struct Prepared {
  bool visible = false;
  Splat2D splat;
  Quad quad;
  Eigen::Matrix2d conic = Eigen::Matrix2d::Identity();
  Eigen::Vector3d m_cam = Eigen::Vector3d::Zero();
  Eigen::Matrix3d cov_cam = Eigen::Matrix3d::Zero();
  Eigen::Vector3d dir = Eigen::Vector3d::UnitZ();
  double dir_norm = 1.0;
};

struct RasterSplat {
  const Splat2D* splat;
  Eigen::Matrix2d conic;
  PixelRect rect;
};

// Accumulated dL/d(splat quantities) for one splat.
struct SplatGrad {
  double alpha = 0.0;
  double center_x = 0.0, center_y = 0.0;
  double q00 = 0.0, q01 = 0.0, q11 = 0.0;
  double r = 0.0, g = 0.0, b = 0.0;

  SplatGrad& operator+=(const SplatGrad& o) {
    alpha += o.alpha;
    center_x += o.center_x;
    center_y += o.center_y;
    q00 += o.q00;
    q01 += o.q01;
    q11 += o.q11;
    r += o.r;
    g += o.g;
    b += o.b;
    return *this;
  }
};

Eigen::Matrix2d inverse_sym2(const Eigen::Matrix2d& m) {
  const double det = m(0, 0) * m(1, 1) - m(0, 1) * m(0, 1);
  Eigen::Matrix2d inv;
  inv << m(1, 1) / det, -m(0, 1) / det, -m(0, 1) / det, m(0, 0) / det;
  return inv;
}

Eigen::Matrix<double, 2, 3> projection_jacobian(const Camera& cam, const Eigen::Vector3d& m) {
  const double iz = 1.0 / m.z();
  Eigen::Matrix<double, 2, 3> j;
  j << cam.fx * iz, 0.0, -cam.fx * m.x() * iz * iz,
       0.0, cam.fy * iz, -cam.fy * m.y() * iz * iz;
  return j;
}

inline void blend(double* px, double& transmittance, const Eigen::Vector3d& c, double a) {
  const double keep = 1.0 - a;
  px[0] = a * c[0] + keep * px[0];
  px[1] = a * c[1] + keep * px[1];
  px[2] = a * c[2] + keep * px[2];
  transmittance *= keep;
}

std::vector<RasterSplat> raster_setup(std::span<const Splat2D> ordered, int width, int height,
                                      const RenderOptions& opts) {
  std::vector<RasterSplat> out;
  out.reserve(ordered.size());
  for (const Splat2D& s : ordered) {
    const auto quad = expand_quad(s, opts.alpha_min, width, height);
    if (!quad || quad->rect.x0 > quad->rect.x1 || quad->rect.y0 > quad->rect.y1) continue;
    out.push_back({&s, inverse_sym2(s.cov2), quad->rect});
  }
  return out;
}

struct TileGrid {
  int tile_size;
  int tiles_x;
  int tiles_y;
  std::vector<std::vector<std::uint32_t>> lists;  // splat indices per tile, in composite order
};

TileGrid bin_tiles(const std::vector<RasterSplat>& splats, int width, int height, int tile_size) {
  TileGrid grid;
  grid.tile_size = std::max(1, tile_size);
  grid.tiles_x = (width + grid.tile_size - 1) / grid.tile_size;
  grid.tiles_y = (height + grid.tile_size - 1) / grid.tile_size;
  grid.lists.resize(static_cast<std::size_t>(grid.tiles_x) * grid.tiles_y);
  for (std::uint32_t k = 0; k < splats.size(); ++k) {
    const PixelRect& r = splats[k].rect;
    for (int ty = r.y0 / grid.tile_size; ty <= r.y1 / grid.tile_size; ++ty)
      for (int tx = r.x0 / grid.tile_size; tx <= r.x1 / grid.tile_size; ++tx)
        grid.lists[static_cast<std::size_t>(ty) * grid.tiles_x + tx].push_back(k);
  }
  return grid;
}

Framebuffer blank_frame(int width, int height, const RenderOptions& opts) {
  Framebuffer fb;
  fb.color = Image(width, height, opts.background);
  fb.transmittance.assign(static_cast<std::size_t>(width) * height, 1.0);
  return fb;
}

void validate_inputs(std::span<const Gaussian4D> gaussians, std::span<const std::uint32_t> keys, const Camera& cam) {
  cam.validate();
  if (gaussians.size() != keys.size()) fail(ErrorKind::InvalidParameter, "gaussians/keys size mismatch");
  for (const Gaussian4D& g : gaussians) {
    if (!is_finite(g)) fail(ErrorKind::InvalidParameter, "non-finite Gaussian parameters");
    if (!(g.rotor_left.norm() > 0.0) || !(g.rotor_right.norm() > 0.0))
      fail(ErrorKind::InvalidParameter, "zero-norm rotor");
  }
}

std::vector<Prepared> prepare(std::span<const Gaussian4D> gaussians, std::span<const std::uint32_t> keys, double t,
                              const Camera& cam, const RenderOptions& opts) {
  std::vector<Prepared> prep(gaussians.size());
  const Eigen::Vector3d cam_center = cam.center();
  const auto n = static_cast<std::int64_t>(gaussians.size());
#pragma omp parallel for schedule(static) if (opts.parallel)
  for (std::int64_t i = 0; i < n; ++i) {
    const Gaussian4D& g = gaussians[i];
    Prepared& p = prep[i];
    const ConditionedGaussian3D cond = condition_at_time(g, t);
    if (g.opacity <= 0.0 || cond.opacity_t < opts.o_th * g.opacity) continue;
    const Eigen::Vector3d v = cond.mean3 - cam_center;
    p.dir_norm = v.norm();
    if (!(p.dir_norm > 0.0)) continue;
    p.dir = v / p.dir_norm;
    auto splat = project(cond, eval_color(g, p.dir), cam, opts.low_pass);
    if (!splat) continue;
    splat->alpha = cond.opacity_t;
    splat->key = keys[i];
    auto quad = expand_quad(*splat, opts.alpha_min, cam.width, cam.height);
    if (!quad || quad->rect.x0 > quad->rect.x1 || quad->rect.y0 > quad->rect.y1) continue;
    p.visible = true;
    p.splat = *splat;
    p.quad = *quad;
    p.conic = inverse_sym2(splat->cov2);
    p.m_cam = cam.to_camera(cond.mean3);
    p.cov_cam = cam.rotation * cond.cov3 * cam.rotation.transpose();
  }
  return prep;
}

// Visible Gaussians in back-to-front order, as indices into `prep`.
std::vector<std::uint32_t> visible_order(const std::vector<Prepared>& prep) {
  std::vector<std::uint32_t> vis;
  for (std::uint32_t i = 0; i < prep.size(); ++i)
    if (prep[i].visible) vis.push_back(i);
  std::sort(vis.begin(), vis.end(), [&](std::uint32_t a, std::uint32_t b) {
    const Splat2D& sa = prep[a].splat;
    const Splat2D& sb = prep[b].splat;
    if (sa.depth != sb.depth) return sa.depth > sb.depth;
    return sa.key < sb.key;
  });
  return vis;
}

}  // namespace

// ---------------------------------------------------------------------------
// Forward stages

std::optional<Splat2D> project(const ConditionedGaussian3D& g, const Eigen::Vector3d& color, const Camera& cam,
                               double low_pass) {
  const Eigen::Vector3d m = cam.to_camera(g.mean3);
  if (!(m.z() >= cam.near && m.z() <= cam.far)) return std::nullopt;
  const Eigen::Matrix<double, 2, 3> j = projection_jacobian(cam, m);
  const Eigen::Matrix<double, 2, 3> jw = j * cam.rotation;
  Eigen::Matrix2d cov2 = jw * g.cov3 * jw.transpose();
  cov2 = 0.5 * (cov2 + cov2.transpose()).eval();
  cov2(0, 0) += low_pass;
  cov2(1, 1) += low_pass;

  Splat2D s;
  s.center = cam.project(m);
  s.cov2 = cov2;
  s.depth = m.z();
  s.color = color;
  s.alpha = g.opacity_t;
  return s;
}

std::vector<std::uint32_t> depth_sort(std::span<const Splat2D> splats) {
  std::vector<std::uint32_t> order(splats.size());
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    if (splats[a].depth != splats[b].depth) return splats[a].depth > splats[b].depth;
    return splats[a].key < splats[b].key;
  });
  return order;
}

std::optional<Quad> expand_quad(const Splat2D& s, double alpha_min, int width, int height) {
  if (!(s.alpha >= alpha_min) || !(alpha_min > 0.0)) return std::nullopt;
  // 0.5 d^T cov^-1 d <= ln(alpha / alpha_min) bounds an ellipse whose exact
  // axis-aligned half extents are k * sqrt(cov_ii).
  const double k2 = 2.0 * std::log(s.alpha / alpha_min);
  Quad q;
  q.half_x = std::sqrt(k2 * s.cov2(0, 0));
  q.half_y = std::sqrt(k2 * s.cov2(1, 1));
  const double fx0 = std::ceil(s.center.x() - q.half_x), fx1 = std::floor(s.center.x() + q.half_x);
  const double fy0 = std::ceil(s.center.y() - q.half_y), fy1 = std::floor(s.center.y() + q.half_y);
  if (width > 0 && height > 0) {
    auto clip = [](double v, int hi) { return static_cast<int>(std::clamp(v, -1.0, static_cast<double>(hi))); };
    q.rect = {clip(std::max(fx0, 0.0), width), clip(std::max(fy0, 0.0), height),
              clip(std::min(fx1, width - 1.0), width), clip(std::min(fy1, height - 1.0), height)};
  } else {
    q.rect = {static_cast<int>(fx0), static_cast<int>(fy0), static_cast<int>(fx1), static_cast<int>(fy1)};
  }
  return q;
}

double fragment_alpha(const Splat2D& s, const Eigen::Matrix2d& conic, double x, double y, double alpha_clamp) {
  const double dx = x - s.center.x();
  const double dy = y - s.center.y();
  const double power = -0.5 * (conic(0, 0) * dx * dx + conic(1, 1) * dy * dy) - conic(0, 1) * dx * dy;
  return std::min(alpha_clamp, s.alpha * std::exp(power));
}

Framebuffer composite_serial(std::span<const Splat2D> ordered, int width, int height, const RenderOptions& opts) {
  Framebuffer fb = blank_frame(width, height, opts);
  for (const RasterSplat& rs : raster_setup(ordered, width, height, opts)) {
    for (int y = rs.rect.y0; y <= rs.rect.y1; ++y)
      for (int x = rs.rect.x0; x <= rs.rect.x1; ++x) {
        const double a = fragment_alpha(*rs.splat, rs.conic, x, y, opts.alpha_clamp);
        blend(&fb.color.data[fb.color.index(x, y)], fb.transmittance[static_cast<std::size_t>(y) * width + x],
              rs.splat->color, a);
      }
  }
  return fb;
}

Framebuffer composite_tiled(std::span<const Splat2D> ordered, int width, int height, const RenderOptions& opts) {
  Framebuffer fb = blank_frame(width, height, opts);
  const std::vector<RasterSplat> splats = raster_setup(ordered, width, height, opts);
  const TileGrid grid = bin_tiles(splats, width, height, opts.tile_size);
  const auto tile_count = static_cast<std::int64_t>(grid.lists.size());
#pragma omp parallel for schedule(dynamic) if (opts.parallel)
  for (std::int64_t tile = 0; tile < tile_count; ++tile) {
    const int tx = static_cast<int>(tile % grid.tiles_x), ty = static_cast<int>(tile / grid.tiles_x);
    const int x_end = std::min(width, (tx + 1) * grid.tile_size);
    const int y_end = std::min(height, (ty + 1) * grid.tile_size);
    const auto& list = grid.lists[tile];
    for (int y = ty * grid.tile_size; y < y_end; ++y)
      for (int x = tx * grid.tile_size; x < x_end; ++x) {
        double* px = &fb.color.data[fb.color.index(x, y)];
        double& trans = fb.transmittance[static_cast<std::size_t>(y) * width + x];
        for (std::uint32_t k : list) {
          const RasterSplat& rs = splats[k];
          if (!rs.rect.contains(x, y)) continue;
          blend(px, trans, rs.splat->color, fragment_alpha(*rs.splat, rs.conic, x, y, opts.alpha_clamp));
        }
      }
  }
  return fb;
}

Framebuffer composite(std::span<const Splat2D> ordered, int width, int height, const RenderOptions& opts) {
  return opts.parallel ? composite_tiled(ordered, width, height, opts)
                       : composite_serial(ordered, width, height, opts);
}

Framebuffer render_gaussians(std::span<const Gaussian4D> gaussians, std::span<const std::uint32_t> keys, double t,
                             const Camera& cam, const RenderOptions& opts) {
  validate_inputs(gaussians, keys, cam);
  const std::vector<Prepared> prep = prepare(gaussians, keys, t, cam, opts);
  std::vector<Splat2D> ordered;
  for (std::uint32_t i : visible_order(prep)) ordered.push_back(prep[i].splat);
  return composite(ordered, cam.width, cam.height, opts);
}

Framebuffer render(const Hierarchy& h, double t, const Camera& cam, const RenderOptions& opts) {
  const MaterializedSet set = h.materialize(h.query(t));
  std::vector<std::uint32_t> keys(set.ids.size());
  for (std::size_t i = 0; i < keys.size(); ++i) keys[i] = index_of(set.ids[i]);
  return render_gaussians(set.gaussians, keys, t, cam, opts);
}

// ---------------------------------------------------------------------------
// Backward

GradientResult backward_from_image_gradient(std::span<const Gaussian4D> gaussians,
                                            std::span<const std::uint32_t> keys, double t, const Camera& cam,
                                            const Image& d_image, const RenderOptions& opts) {
  validate_inputs(gaussians, keys, cam);
  if (d_image.width != cam.width || d_image.height != cam.height)
    fail(ErrorKind::InvalidParameter, "image gradient size does not match the camera");
  const int width = cam.width, height = cam.height;

  const std::vector<Prepared> prep = prepare(gaussians, keys, t, cam, opts);
  const std::vector<std::uint32_t> order = visible_order(prep);
  std::vector<Splat2D> ordered;
  ordered.reserve(order.size());
  for (std::uint32_t i : order) ordered.push_back(prep[i].splat);

  // Every visible splat has a non-empty clipped rect, so raster index k maps to order[k].
  const std::vector<RasterSplat> splats = raster_setup(ordered, width, height, opts);
  const TileGrid grid = bin_tiles(splats, width, height, opts.tile_size);

  GradientResult result;
  result.rendered = Image(width, height);
  std::vector<std::vector<SplatGrad>> tile_grads(grid.lists.size());

  const auto tile_count = static_cast<std::int64_t>(grid.lists.size());
#pragma omp parallel if (opts.parallel)
  {
    struct Fragment {
      std::uint32_t slot;  // position in the tile list
      double a;
      bool clamped;
      Eigen::Vector3d before;  // pixel color before this fragment was blended
    };
    std::vector<Fragment> frags;
#pragma omp for schedule(dynamic)
    for (std::int64_t tile = 0; tile < tile_count; ++tile) {
      const int tx = static_cast<int>(tile % grid.tiles_x), ty = static_cast<int>(tile / grid.tiles_x);
      const int x_end = std::min(width, (tx + 1) * grid.tile_size);
      const int y_end = std::min(height, (ty + 1) * grid.tile_size);
      const auto& list = grid.lists[tile];
      auto& acc = tile_grads[tile];
      acc.assign(list.size(), SplatGrad{});
      for (int y = ty * grid.tile_size; y < y_end; ++y)
        for (int x = tx * grid.tile_size; x < x_end; ++x) {
          frags.clear();
          double px[3] = {opts.background[0], opts.background[1], opts.background[2]};
          double trans = 1.0;
          for (std::uint32_t slot = 0; slot < list.size(); ++slot) {
            const RasterSplat& rs = splats[list[slot]];
            if (!rs.rect.contains(x, y)) continue;
            const double a = fragment_alpha(*rs.splat, rs.conic, x, y, opts.alpha_clamp);
            const double unclamped = fragment_alpha(*rs.splat, rs.conic, x, y, 2.0);
            frags.push_back({slot, a, unclamped > opts.alpha_clamp, Eigen::Vector3d(px[0], px[1], px[2])});
            blend(px, trans, rs.splat->color, a);
          }
          for (int c = 0; c < 3; ++c) result.rendered.at(x, y, c) = px[c];

          const Eigen::Vector3d g_pix = d_image.pixel(x, y);
          double front = 1.0;  // transmittance of everything in front of the current fragment
          for (auto it = frags.rbegin(); it != frags.rend(); ++it) {
            const RasterSplat& rs = splats[list[it->slot]];
            const Splat2D& s = *rs.splat;
            SplatGrad& sg = acc[it->slot];
            const double ga = front * g_pix.dot(s.color - it->before);
            sg.r += front * it->a * g_pix[0];
            sg.g += front * it->a * g_pix[1];
            sg.b += front * it->a * g_pix[2];
            if (!it->clamped) {
              const double dx = x - s.center.x(), dy = y - s.center.y();
              const double gauss = it->a / s.alpha;
              sg.alpha += ga * gauss;
              const double g_power = ga * it->a;
              // power = -0.5 d^T Q d with d = p - center.
              sg.center_x += g_power * (rs.conic(0, 0) * dx + rs.conic(0, 1) * dy);
              sg.center_y += g_power * (rs.conic(0, 1) * dx + rs.conic(1, 1) * dy);
              sg.q00 += -0.5 * g_power * dx * dx;
              sg.q01 += -0.5 * g_power * dx * dy;
              sg.q11 += -0.5 * g_power * dy * dy;
            }
            front *= 1.0 - it->a;
          }
        }
    }
  }

  // Fixed-order merge of per-tile partial sums.
  std::vector<SplatGrad> splat_grads(splats.size());
  for (std::size_t tile = 0; tile < grid.lists.size(); ++tile)
    for (std::size_t slot = 0; slot < grid.lists[tile].size(); ++slot)
      splat_grads[grid.lists[tile][slot]] += tile_grads[tile][slot];

  result.gradients.assign(gaussians.size(), GaussianGradient{});
  result.screen_gradients.assign(gaussians.size(), Eigen::Vector2d::Zero());
  result.visible.assign(gaussians.size(), 0);
  const Eigen::Matrix3d& w = cam.rotation;

  const auto n_vis = static_cast<std::int64_t>(order.size());
#pragma omp parallel for schedule(static) if (opts.parallel)
  for (std::int64_t k = 0; k < n_vis; ++k) {
    const std::uint32_t i = order[k];
    const Prepared& p = prep[i];
    const SplatGrad& sg = splat_grads[k];
    const Gaussian4D& g = gaussians[i];
    GaussianGradient& out = result.gradients[i];
    result.visible[i] = 1;
    result.screen_gradients[i] = {sg.center_x, sg.center_y};

    Eigen::Matrix2d g_q;
    g_q << sg.q00, sg.q01, sg.q01, sg.q11;
    const Eigen::Matrix2d g_cov2 = -p.conic * g_q * p.conic;

    const Eigen::Vector3d& m = p.m_cam;
    const Eigen::Matrix<double, 2, 3> j = projection_jacobian(cam, m);
    const Eigen::Matrix3d g_cov_cam = j.transpose() * g_cov2 * j;
    const Eigen::Matrix<double, 2, 3> g_j = 2.0 * g_cov2 * j * p.cov_cam;

    const double iz = 1.0 / m.z(), iz2 = iz * iz, iz3 = iz2 * iz;
    Eigen::Vector3d g_m;
    g_m.x() = g_j(0, 2) * (-cam.fx * iz2) + sg.center_x * cam.fx * iz;
    g_m.y() = g_j(1, 2) * (-cam.fy * iz2) + sg.center_y * cam.fy * iz;
    g_m.z() = g_j(0, 0) * (-cam.fx * iz2) + g_j(0, 2) * (2.0 * cam.fx * m.x() * iz3) +
              g_j(1, 1) * (-cam.fy * iz2) + g_j(1, 2) * (2.0 * cam.fy * m.y() * iz3) -
              sg.center_x * cam.fx * m.x() * iz2 - sg.center_y * cam.fy * m.y() * iz2;

    Eigen::Vector3d g_mean3 = w.transpose() * g_m;
    const Eigen::Matrix3d g_cov3 = w.transpose() * g_cov_cam * w;

    const Eigen::Vector3d g_dir = color_backward(g, p.dir, Eigen::Vector3d(sg.r, sg.g, sg.b), out);
    g_mean3 += (g_dir - p.dir * p.dir.dot(g_dir)) / p.dir_norm;

    condition_backward(g, t, g_mean3, g_cov3, sg.alpha, out);
  }
  return result;
}

GradientResult render_with_gradients(std::span<const Gaussian4D> gaussians, std::span<const std::uint32_t> keys,
                                     double t, const Camera& cam, const Image& target, const LossWeights& weights,
                                     const RenderOptions& opts) {
  if (target.width != cam.width || target.height != cam.height)
    fail(ErrorKind::InvalidParameter, "target image size does not match the camera");
  const Framebuffer fb = render_gaussians(gaussians, keys, t, cam, opts);
  LossValue loss = image_loss(fb.color, target, weights);
  GradientResult result = backward_from_image_gradient(gaussians, keys, t, cam, loss.gradient, opts);
  result.loss = loss.total;
  result.mse = loss.mse;
  result.ssim = loss.ssim;
  return result;
}

HierarchyGradients render_with_gradients(const Hierarchy& h, double t, const Camera& cam, const Image& target,
                                         const LossWeights& weights, const RenderOptions& opts) {
  HierarchyGradients out;
  out.working_set = h.materialize(h.query(t));
  std::vector<std::uint32_t> keys(out.working_set.ids.size());
  for (std::size_t i = 0; i < keys.size(); ++i) keys[i] = index_of(out.working_set.ids[i]);
  out.result = render_with_gradients(out.working_set.gaussians, keys, t, cam, target, weights, opts);
  return out;
}

}  // namespace tgh
