#include "tgh/loss.hpp"

#include <array>
#include <cmath>
#include <limits>

#include "tgh/error.hpp"

namespace tgh {

namespace {

constexpr int kRadius = 5;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, 2 * kRadius + 1> window_1d() {
  std::array<double, 2 * kRadius + 1> w{};
  double sum = 0.0;
  for (int i = -kRadius; i <= kRadius; ++i) sum += w[i + kRadius] = std::exp(-(i * i) / (2.0 * kSigma * kSigma));
  for (double& v : w) v /= sum;
  return w;
}

// Single-channel plane, row-major.
using Plane = std::vector<double>;

// Separable zero-padded "same" filtering. The kernel is symmetric, so this is self-adjoint.
Plane blur(const Plane& in, int w, int h) {
  static const auto k = window_1d();
  Plane tmp(in.size(), 0.0), out(in.size(), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -kRadius; i <= kRadius; ++i) {
        const int xx = x + i;
        if (xx >= 0 && xx < w) s += k[i + kRadius] * in[y * w + xx];
      }
      tmp[y * w + x] = s;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -kRadius; i <= kRadius; ++i) {
        const int yy = y + i;
        if (yy >= 0 && yy < h) s += k[i + kRadius] * tmp[yy * w + x];
      }
      out[y * w + x] = s;
    }
  return out;
}

Plane channel(const Image& img, int c) {
  Plane p(img.pixel_count());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = img.data[i * 3 + c];
  return p;
}

// Mean SSIM of one channel; if grad is non-null, adds scale * dSSIM/dx into it.
double ssim_channel(const Plane& x, const Plane& y, int w, int h, Plane* grad, double scale) {
  const std::size_t n = x.size();
  Plane xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const Plane mx = blur(x, w, h), my = blur(y, w, h);
  const Plane exx = blur(xx, w, h), eyy = blur(yy, w, h), exy = blur(xy, w, h);

  Plane g_mx, g_exx, g_exy;
  if (grad) {
    g_mx.assign(n, 0.0);
    g_exx.assign(n, 0.0);
    g_exy.assign(n, 0.0);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = 2.0 * mx[i] * my[i] + kC1;
    const double b = 2.0 * (exy[i] - mx[i] * my[i]) + kC2;
    const double c = mx[i] * mx[i] + my[i] * my[i] + kC1;
    const double d = (exx[i] - mx[i] * mx[i]) + (eyy[i] - my[i] * my[i]) + kC2;
    const double s = a * b / (c * d);
    total += s;
    if (grad) {
      const double cd = c * d;
      // dA = 2my, dB = -2my, dC = 2mx, dD = -2mx w.r.t. mx.
      const double num = (2.0 * my[i] * b - 2.0 * my[i] * a) * cd - a * b * (2.0 * mx[i] * d - 2.0 * mx[i] * c);
      g_mx[i] = scale * num / (cd * cd);
      g_exx[i] = scale * (-a * b / (c * d * d));
      g_exy[i] = scale * (2.0 * a / cd);
    }
  }
  if (grad) {
    const Plane bmx = blur(g_mx, w, h), bxx = blur(g_exx, w, h), bxy = blur(g_exy, w, h);
    for (std::size_t i = 0; i < n; ++i) (*grad)[i] += bmx[i] + 2.0 * x[i] * bxx[i] + y[i] * bxy[i];
  }
  return total / static_cast<double>(n);
}

void require_same_size(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height)
    fail(ErrorKind::InvalidParameter, "image dimensions differ: " + std::to_string(a.width) + "x" +
                                          std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                                          std::to_string(b.height));
}

}  // namespace

double mse(const Image& a, const Image& b) {
  require_same_size(a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    s += d * d;
  }
  return a.data.empty() ? 0.0 : s / static_cast<double>(a.data.size());
}

double psnr(const Image& a, const Image& b) {
  const double m = mse(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / m);
}

double ssim(const Image& a, const Image& b) {
  require_same_size(a, b);
  double s = 0.0;
  for (int c = 0; c < 3; ++c) s += ssim_channel(channel(a, c), channel(b, c), a.width, a.height, nullptr, 0.0);
  return s / 3.0;
}

LossValue image_loss(const Image& rendered, const Image& target, const LossWeights& weights) {
  require_same_size(rendered, target);
  LossValue out;
  out.gradient = Image(rendered.width, rendered.height);
  const double n = static_cast<double>(rendered.data.size());
  if (n == 0.0) return out;

  out.mse = mse(rendered, target);
  for (std::size_t i = 0; i < rendered.data.size(); ++i)
    out.gradient.data[i] = weights.mse * 2.0 * (rendered.data[i] - target.data[i]) / n;

  out.ssim = 1.0;
  if (weights.ssim != 0.0) {
    double s = 0.0;
    for (int c = 0; c < 3; ++c) {
      Plane g(rendered.pixel_count(), 0.0);
      // d(1 - mean_c SSIM_c)/dx = -(1/3) dSSIM_c/dx; the per-pixel mean is inside ssim_channel.
      const double scale = -weights.ssim / (3.0 * static_cast<double>(rendered.pixel_count()));
      s += ssim_channel(channel(rendered, c), channel(target, c), rendered.width, rendered.height, &g, scale);
      for (std::size_t i = 0; i < g.size(); ++i) out.gradient.data[i * 3 + c] += g[i];
    }
    out.ssim = s / 3.0;
  } else {
    out.ssim = ssim(rendered, target);
  }
  out.total = weights.mse * out.mse + weights.ssim * (1.0 - out.ssim);
  return out;
}

}  // namespace tgh
