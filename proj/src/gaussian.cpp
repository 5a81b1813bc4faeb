#include "tgh/gaussian.hpp"

#include <algorithm>
#include <cmath>

#include "tgh/error.hpp"

namespace tgh {

namespace {

constexpr double kC1 = 0.4886025119029199;
constexpr double kC2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                           -1.0925484305920792, 0.5462742152960396};
constexpr double kC3[7] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
                           0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                           -0.5900435899266435};

Eigen::Vector4d normalized_rotor(const Eigen::Vector4d& q) {
  const double n = q.norm();
  if (!(n > 0.0) || !std::isfinite(n)) fail(ErrorKind::InvalidParameter, "rotor has zero or non-finite norm");
  return q / n;
}

double min_scale(int axis) { return axis == 3 ? kMinTemporalScale : kMinSpatialScale; }

// Gradient through q_hat = q / |q|.
Eigen::Vector4d normalize_backward(const Eigen::Vector4d& q, const Eigen::Vector4d& d_qhat) {
  const double n = q.norm();
  const Eigen::Vector4d qh = q / n;
  return (d_qhat - qh * qh.dot(d_qhat)) / n;
}

}  // namespace

GaussianGradient& GaussianGradient::operator+=(const GaussianGradient& other) {
  mean += other.mean;
  scale += other.scale;
  rotor_left += other.rotor_left;
  rotor_right += other.rotor_right;
  opacity += other.opacity;
  base_color += other.base_color;
  for (int i = 0; i < kShCoeffs; ++i) sh_residual[i] += other.sh_residual[i];
  return *this;
}

Eigen::Matrix4d left_isoclinic(const Eigen::Vector4d& q) {
  const double a = q[0], b = q[1], c = q[2], d = q[3];
  Eigen::Matrix4d m;
  m << a, -b, -c, -d,
       b,  a, -d,  c,
       c,  d,  a, -b,
       d, -c,  b,  a;
  return m;
}

Eigen::Matrix4d right_isoclinic(const Eigen::Vector4d& q) {
  const double p = q[0], r = q[1], s = q[2], u = q[3];
  Eigen::Matrix4d m;
  m <<  p,  r,  s,  u,
       -r,  p, -u,  s,
       -s,  u,  p, -r,
       -u, -s,  r,  p;
  return m;
}

Eigen::Matrix4d rotation_4d(const Eigen::Vector4d& rotor_left, const Eigen::Vector4d& rotor_right) {
  return left_isoclinic(normalized_rotor(rotor_left)) * right_isoclinic(normalized_rotor(rotor_right));
}

Eigen::Vector4d clamped_scale(const Eigen::Vector4d& scale) {
  Eigen::Vector4d s;
  for (int i = 0; i < 4; ++i) s[i] = std::max(scale[i], min_scale(i));
  return s;
}

bool is_finite(const Gaussian4D& g) {
  bool ok = g.mean.allFinite() && g.scale.allFinite() && g.rotor_left.allFinite() &&
            g.rotor_right.allFinite() && std::isfinite(g.opacity) && g.base_color.allFinite();
  for (double v : g.sh_residual) ok = ok && std::isfinite(v);
  return ok;
}

Eigen::Matrix4d build_covariance(const Gaussian4D& g) {
  if (!g.mean.allFinite() || !g.scale.allFinite() || !g.rotor_left.allFinite() || !g.rotor_right.allFinite())
    fail(ErrorKind::InvalidParameter, "non-finite Gaussian parameters");
  const Eigen::Matrix4d r = rotation_4d(g.rotor_left, g.rotor_right);
  const Eigen::Matrix4d m = r * clamped_scale(g.scale).asDiagonal();
  Eigen::Matrix4d sigma = m * m.transpose();
  // Exact symmetry; the product above can differ in the last ulp.
  sigma = 0.5 * (sigma + sigma.transpose()).eval();
  return sigma;
}

double temporal_variance(const Gaussian4D& g) { return build_covariance(g)(3, 3); }

double temporal_factor(const Gaussian4D& g, double t) {
  const double var = temporal_variance(g);
  const double dt = t - g.mean[3];
  return std::exp(-dt * dt / (2.0 * var));
}

double marginal_opacity(const Gaussian4D& g, double t) { return g.opacity * temporal_factor(g, t); }

InfluenceRange influence_range(double mu_t, double temporal_var, double o_th) {
  if (!(o_th > 0.0 && o_th < 1.0)) fail(ErrorKind::InvalidParameter, "o_th must lie in (0, 1)");
  if (!(temporal_var > 0.0) || !std::isfinite(temporal_var) || !std::isfinite(mu_t))
    fail(ErrorKind::InvalidParameter, "temporal variance must be positive and finite");
  const double r = std::sqrt(std::log(o_th) / -0.5 * temporal_var);
  return {mu_t - r, mu_t + r, r};
}

InfluenceRange influence_range(const Gaussian4D& g, double o_th) {
  return influence_range(g.mean[3], temporal_variance(g), o_th);
}

ConditionedGaussian3D condition_at_time(const Gaussian4D& g, double t) {
  const Eigen::Matrix4d sigma = build_covariance(g);
  const Eigen::Matrix3d a = sigma.topLeftCorner<3, 3>();
  const Eigen::Vector3d b = sigma.topRightCorner<3, 1>();
  const double c = sigma(3, 3);
  const double dt = t - g.mean[3];

  ConditionedGaussian3D out;
  out.mean3 = g.mean.head<3>() + b * (dt / c);
  out.cov3 = a - b * b.transpose() / c;
  out.cov3 = 0.5 * (out.cov3 + out.cov3.transpose()).eval();
  out.opacity_t = g.opacity * std::exp(-dt * dt / (2.0 * c));
  return out;
}

ShBasis sh_basis(const Eigen::Vector3d& dir) {
  const double x = dir[0], y = dir[1], z = dir[2];
  const double xx = x * x, yy = y * y, zz = z * z;
  return {-kC1 * y,
          kC1 * z,
          -kC1 * x,
          kC2[0] * x * y,
          kC2[1] * y * z,
          kC2[2] * (2.0 * zz - xx - yy),
          kC2[3] * x * z,
          kC2[4] * (xx - yy),
          kC3[0] * y * (3.0 * xx - yy),
          kC3[1] * x * y * z,
          kC3[2] * y * (4.0 * zz - xx - yy),
          kC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
          kC3[4] * x * (4.0 * zz - xx - yy),
          kC3[5] * z * (xx - yy),
          kC3[6] * x * (xx - 3.0 * yy)};
}

std::array<Eigen::Vector3d, kShBases> sh_basis_jacobian(const Eigen::Vector3d& dir) {
  const double x = dir[0], y = dir[1], z = dir[2];
  const double xx = x * x, yy = y * y, zz = z * z;
  return {Eigen::Vector3d(0.0, -kC1, 0.0),
          Eigen::Vector3d(0.0, 0.0, kC1),
          Eigen::Vector3d(-kC1, 0.0, 0.0),
          kC2[0] * Eigen::Vector3d(y, x, 0.0),
          kC2[1] * Eigen::Vector3d(0.0, z, y),
          kC2[2] * Eigen::Vector3d(-2.0 * x, -2.0 * y, 4.0 * z),
          kC2[3] * Eigen::Vector3d(z, 0.0, x),
          kC2[4] * Eigen::Vector3d(2.0 * x, -2.0 * y, 0.0),
          kC3[0] * Eigen::Vector3d(6.0 * x * y, 3.0 * xx - 3.0 * yy, 0.0),
          kC3[1] * Eigen::Vector3d(y * z, x * z, x * y),
          kC3[2] * Eigen::Vector3d(-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z),
          kC3[3] * Eigen::Vector3d(-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy),
          kC3[4] * Eigen::Vector3d(4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z),
          kC3[5] * Eigen::Vector3d(2.0 * x * z, -2.0 * y * z, xx - yy),
          kC3[6] * Eigen::Vector3d(3.0 * xx - 3.0 * yy, -6.0 * x * y, 0.0)};
}

Eigen::Vector3d raw_color(const Gaussian4D& g, const Eigen::Vector3d& dir) {
  Eigen::Vector3d c = g.base_color;
  const ShBasis basis = sh_basis(dir);
  for (int b = 0; b < kShBases; ++b)
    for (int ch = 0; ch < 3; ++ch) c[ch] += g.sh_residual[b * 3 + ch] * basis[b];
  return c;
}

Eigen::Vector3d eval_color(const Gaussian4D& g, const Eigen::Vector3d& dir) {
  return raw_color(g, dir).cwiseMax(0.0).cwiseMin(1.0);
}

void covariance_backward(const Gaussian4D& g, const Eigen::Matrix4d& d_sigma, GaussianGradient& out) {
  const Eigen::Vector4d ql = normalized_rotor(g.rotor_left);
  const Eigen::Vector4d qr = normalized_rotor(g.rotor_right);
  const Eigen::Matrix4d lm = left_isoclinic(ql);
  const Eigen::Matrix4d rm = right_isoclinic(qr);
  const Eigen::Matrix4d r = lm * rm;
  const Eigen::Vector4d s = clamped_scale(g.scale);
  const Eigen::Matrix4d m = r * s.asDiagonal();

  const Eigen::Matrix4d d_m = (d_sigma + d_sigma.transpose()) * m;
  const Eigen::Matrix4d d_r = d_m * s.asDiagonal();
  for (int j = 0; j < 4; ++j) {
    if (g.scale[j] >= min_scale(j)) out.scale[j] += d_m.col(j).dot(r.col(j));
  }

  const Eigen::Matrix4d d_lm = d_r * rm.transpose();
  const Eigen::Matrix4d d_rm = lm.transpose() * d_r;
  Eigen::Vector4d d_ql, d_qr;
  for (int k = 0; k < 4; ++k) {
    const Eigen::Vector4d e = Eigen::Vector4d::Unit(k);
    d_ql[k] = d_lm.cwiseProduct(left_isoclinic(e)).sum();
    d_qr[k] = d_rm.cwiseProduct(right_isoclinic(e)).sum();
  }
  out.rotor_left += normalize_backward(g.rotor_left, d_ql);
  out.rotor_right += normalize_backward(g.rotor_right, d_qr);
}

void condition_backward(const Gaussian4D& g, double t, const Eigen::Vector3d& d_mean3,
                        const Eigen::Matrix3d& d_cov3, double d_opacity_t, GaussianGradient& out) {
  const Eigen::Matrix4d sigma = build_covariance(g);
  const Eigen::Vector3d b = sigma.topRightCorner<3, 1>();
  const double c = sigma(3, 3);
  const double dt = t - g.mean[3];
  const double w = std::exp(-dt * dt / (2.0 * c));

  // The forward pass symmetrizes cov3, so only the symmetric part of d_cov3 matters.
  const Eigen::Matrix3d d_cov = 0.5 * (d_cov3 + d_cov3.transpose());

  Eigen::Vector3d d_b = d_mean3 * (dt / c);
  double d_c = -d_mean3.dot(b) * dt / (c * c);
  double d_dt = d_mean3.dot(b) / c;

  d_b -= (d_cov + d_cov.transpose()) * b / c;
  d_c += b.dot(d_cov * b) / (c * c);

  out.opacity += d_opacity_t * w;
  const double d_w = d_opacity_t * g.opacity;
  d_dt += d_w * w * (-dt / c);
  d_c += d_w * w * dt * dt / (2.0 * c * c);

  out.mean.head<3>() += d_mean3;
  out.mean[3] -= d_dt;

  Eigen::Matrix4d d_sigma = Eigen::Matrix4d::Zero();
  d_sigma.topLeftCorner<3, 3>() = d_cov;
  d_sigma.topRightCorner<3, 1>() = d_b;
  d_sigma(3, 3) = d_c;
  // build_covariance symmetrizes its output, so pass the symmetric part.
  covariance_backward(g, 0.5 * (d_sigma + d_sigma.transpose()), out);
}

Eigen::Vector3d color_backward(const Gaussian4D& g, const Eigen::Vector3d& dir,
                               const Eigen::Vector3d& d_color, GaussianGradient& out) {
  const Eigen::Vector3d raw = raw_color(g, dir);
  Eigen::Vector3d d_raw = Eigen::Vector3d::Zero();
  for (int ch = 0; ch < 3; ++ch)
    if (raw[ch] > 0.0 && raw[ch] < 1.0) d_raw[ch] = d_color[ch];

  out.base_color += d_raw;
  const ShBasis basis = sh_basis(dir);
  const auto jac = sh_basis_jacobian(dir);
  Eigen::Vector3d d_dir = Eigen::Vector3d::Zero();
  for (int b = 0; b < kShBases; ++b) {
    double d_basis = 0.0;
    for (int ch = 0; ch < 3; ++ch) {
      out.sh_residual[b * 3 + ch] += d_raw[ch] * basis[b];
      d_basis += d_raw[ch] * g.sh_residual[b * 3 + ch];
    }
    d_dir += d_basis * jac[b];
  }
  return d_dir;
}

}  // namespace tgh
