#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include <Eigen/Dense>

#include "tgh/camera.hpp"
#include "tgh/renderer.hpp"
#include "tgh/gaussian.hpp"

namespace tgh::test {

inline Eigen::Vector4d random_rotor(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Vector4d q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized();
}

/// Random Gaussian with moderate conditioning; zero residual unless sh_scale > 0.
inline Gaussian4D random_gaussian(std::mt19937_64& rng, double sh_scale = 0.0) {
  std::uniform_real_distribution<double> u(-1.0, 1.0), s(0.2, 1.5), o(0.1, 0.95), c(0.2, 0.8);
  std::normal_distribution<double> nrm(0.0, 1.0);
  Gaussian4D g;
  g.mean = Eigen::Vector4d(u(rng), u(rng), u(rng), 5.0 + u(rng));
  g.scale = Eigen::Vector4d(s(rng), s(rng), s(rng), s(rng));
  g.rotor_left = random_rotor(rng);
  g.rotor_right = random_rotor(rng);
  g.opacity = o(rng);
  g.base_color = Eigen::Vector3d(c(rng), c(rng), c(rng));
  for (double& h : g.sh_residual) h = sh_scale * nrm(rng);
  return g;
}

inline Eigen::Vector4d hamilton(const Eigen::Vector4d& a, const Eigen::Vector4d& b) {
  return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
          a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
          a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
          a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

/// Rotation x -> q_l * x * conj(q_r) assembled column by column from quaternion products.
inline Eigen::Matrix4d rotation_by_products(Eigen::Vector4d ql, Eigen::Vector4d qr) {
  ql.normalize();
  qr.normalize();
  const Eigen::Vector4d qr_conj(qr[0], -qr[1], -qr[2], -qr[3]);
  Eigen::Matrix4d r;
  for (int k = 0; k < 4; ++k) r.col(k) = hamilton(hamilton(ql, Eigen::Vector4d::Unit(k)), qr_conj);
  return r;
}

/// Sigma via explicit loops over R S S^T R^T.
inline Eigen::Matrix4d dense_covariance(const Gaussian4D& g) {
  const Eigen::Matrix4d r = rotation_by_products(g.rotor_left, g.rotor_right);
  const Eigen::Vector4d s = clamped_scale(g.scale);
  Eigen::Matrix4d sigma = Eigen::Matrix4d::Zero();
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 4; ++k) sigma(i, j) += r(i, k) * s[k] * s[k] * r(j, k);
  return sigma;
}

template <int N>
double gaussian_density(const Eigen::Matrix<double, N, 1>& x, const Eigen::Matrix<double, N, 1>& mu,
                        const Eigen::Matrix<double, N, N>& cov) {
  const Eigen::Matrix<double, N, 1> d = x - mu;
  const double quad = d.dot(cov.inverse() * d);
  return std::exp(-0.5 * quad) / std::sqrt(std::pow(2.0 * M_PI, N) * cov.determinant());
}

/// Central difference of f along one coordinate.
inline double central_difference(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline bool close_rel(double a, double b, double rel, double abs_floor) {
  return std::abs(a - b) <= std::max(abs_floor, rel * std::max(std::abs(a), std::abs(b)));
}

/// Scratch directory removed on destruction.
/// Pinhole camera at the origin looking down +z.
inline Camera axis_camera(int w, int h, double f) {
  Camera cam;
  cam.fx = cam.fy = f;
  cam.cx = 0.5 * (w - 1);
  cam.cy = 0.5 * (h - 1);
  cam.width = w;
  cam.height = h;
  return cam;
}

struct GradCheckScene {
  std::vector<Gaussian4D> gaussians;
  std::vector<std::uint32_t> keys;
  Camera cam;
  Image target;
  double t = 0.0;
};

inline GradCheckScene make_scene(int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0), c(0.25, 0.75), o(0.3, 0.8), s(0.6, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  GradCheckScene sc;
  sc.cam = axis_camera(8, 8, 8.0);
  sc.t = 2.0;
  for (int i = 0; i < count; ++i) {
    Gaussian4D g;
    // Well-separated depths keep the sort order fixed under perturbation.
    g.mean = {0.3 * u(rng), 0.3 * u(rng), 4.0 + 1.5 * i + 0.1 * u(rng), sc.t + 0.3 * u(rng)};
    g.scale = {s(rng), s(rng), s(rng), 0.5 + 0.2 * u(rng)};
    g.rotor_left = Eigen::Vector4d(1.0, 0.2 * u(rng), 0.2 * u(rng), 0.2 * u(rng)).normalized();
    g.rotor_right = Eigen::Vector4d(1.0, 0.2 * u(rng), 0.2 * u(rng), 0.2 * u(rng)).normalized();
    g.opacity = o(rng);
    g.base_color = {c(rng), c(rng), c(rng)};
    for (double& h : g.sh_residual) h = 0.03 * n(rng);
    sc.gaussians.push_back(g);
    sc.keys.push_back(i);
  }
  sc.target = Image(8, 8);
  for (double& v : sc.target.data) v = 0.5 + 0.4 * u(rng);
  return sc;
}

struct GradCheckOutcome {
  int checked = 0;
  int failures = 0;
  double worst = 0.0;  // max relative error, with a 1e-7 absolute floor
  std::vector<std::string> messages;
};

/// Compares every analytic parameter gradient with a central difference of the
/// full render + loss. Tolerance: relative 1e-4 with an absolute floor of 1e-7.
inline GradCheckOutcome gradient_check(const GradCheckScene& sc) {
  RenderOptions opts;
  const LossWeights w{0.8, 0.2};
  const GradientResult res = render_with_gradients(sc.gaussians, sc.keys, sc.t, sc.cam, sc.target, w, opts);
  GradCheckOutcome out;
  for (std::size_t gi = 0; gi < sc.gaussians.size(); ++gi) {
    if (res.visible[gi] != 1) {
      ++out.failures;
      out.messages.push_back("gaussian " + std::to_string(gi) + " not visible");
      continue;
    }
    const ParamVector base = flatten(sc.gaussians[gi]);
    const ParamVector analytic = flatten(res.gradients[gi]);
    for (int p = 0; p < kParamCount; ++p) {
      auto f = [&](double v) {
        auto gs = sc.gaussians;
        ParamVector q = base;
        q[p] = v;
        unflatten(q, gs[gi]);
        const Framebuffer fb = render_gaussians(gs, sc.keys, sc.t, sc.cam, opts);
        return image_loss(fb.color, sc.target, w).total;
      };
      const double h = 1e-4 * std::max(1.0, std::abs(base[p]));
      const double numeric = central_difference(f, base[p], h);
      if (!close_rel(analytic[p], numeric, 1e-4, 1e-7)) {
        ++out.failures;
        out.messages.push_back("gaussian " + std::to_string(gi) + " param " + std::to_string(p) + " analytic " +
                               std::to_string(analytic[p]) + " numeric " + std::to_string(numeric));
      }
      out.worst = std::max(out.worst, std::abs(analytic[p] - numeric) / std::max(1e-7, std::abs(numeric)));
      ++out.checked;
    }
  }
  return out;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    static std::atomic<int> counter{0};
    path = std::filesystem::temp_directory_path() /
           ("tgh_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace tgh::test
