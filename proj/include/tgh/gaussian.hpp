#pragma once

#include <array>
#include <cstddef>

#include <Eigen/Core>

namespace tgh {

inline constexpr int kShBases = 15;   // degree 1..3, the constant band lives in base_color
inline constexpr int kShCoeffs = 45;  // kShBases x 3 channels, index = basis * 3 + channel
inline constexpr int kParamCount = 65;

inline constexpr double kMinSpatialScale = 1e-6;
inline constexpr double kMinTemporalScale = 1e-4;

using ShCoeffs = std::array<double, kShCoeffs>;
using ShBasis = std::array<double, kShBases>;

/// One 4D primitive. Axes are (x, y, z, t); t in seconds.
struct Gaussian4D {
  Eigen::Vector4d mean{0.0, 0.0, 0.0, 0.0};
  Eigen::Vector4d scale{1.0, 1.0, 1.0, 1.0};
  Eigen::Vector4d rotor_left{1.0, 0.0, 0.0, 0.0};
  Eigen::Vector4d rotor_right{1.0, 0.0, 0.0, 0.0};
  double opacity = 1.0;
  Eigen::Vector3d base_color{0.5, 0.5, 0.5};
  ShCoeffs sh_residual{};
};

/// dL/d(parameter) with the same field layout as Gaussian4D.
struct GaussianGradient {
  Eigen::Vector4d mean = Eigen::Vector4d::Zero();
  Eigen::Vector4d scale = Eigen::Vector4d::Zero();
  Eigen::Vector4d rotor_left = Eigen::Vector4d::Zero();
  Eigen::Vector4d rotor_right = Eigen::Vector4d::Zero();
  double opacity = 0.0;
  Eigen::Vector3d base_color = Eigen::Vector3d::Zero();
  ShCoeffs sh_residual{};

  GaussianGradient& operator+=(const GaussianGradient& other);
};

/// Offsets of each parameter group inside a flattened ParamVector.
namespace param {
inline constexpr int kMean = 0;
inline constexpr int kScale = 4;
inline constexpr int kRotorLeft = 8;
inline constexpr int kRotorRight = 12;
inline constexpr int kOpacity = 16;
inline constexpr int kBaseColor = 17;
inline constexpr int kSh = 20;
}  // namespace param

using ParamVector = std::array<double, kParamCount>;

template <class G>
ParamVector flatten(const G& g) {
  ParamVector p{};
  for (int i = 0; i < 4; ++i) {
    p[param::kMean + i] = g.mean[i];
    p[param::kScale + i] = g.scale[i];
    p[param::kRotorLeft + i] = g.rotor_left[i];
    p[param::kRotorRight + i] = g.rotor_right[i];
  }
  p[param::kOpacity] = g.opacity;
  for (int i = 0; i < 3; ++i) p[param::kBaseColor + i] = g.base_color[i];
  for (int i = 0; i < kShCoeffs; ++i) p[param::kSh + i] = g.sh_residual[i];
  return p;
}

template <class G>
void unflatten(const ParamVector& p, G& g) {
  for (int i = 0; i < 4; ++i) {
    g.mean[i] = p[param::kMean + i];
    g.scale[i] = p[param::kScale + i];
    g.rotor_left[i] = p[param::kRotorLeft + i];
    g.rotor_right[i] = p[param::kRotorRight + i];
  }
  g.opacity = p[param::kOpacity];
  for (int i = 0; i < 3; ++i) g.base_color[i] = p[param::kBaseColor + i];
  for (int i = 0; i < kShCoeffs; ++i) g.sh_residual[i] = p[param::kSh + i];
}

struct ConditionedGaussian3D {
  Eigen::Vector3d mean3 = Eigen::Vector3d::Zero();
  Eigen::Matrix3d cov3 = Eigen::Matrix3d::Identity();
  double opacity_t = 0.0;
};

/// Time interval where the normalized temporal factor is at least o_th.
struct InfluenceRange {
  double start = 0.0;
  double end = 0.0;
  double radius = 0.0;
};

// Isoclinic rotation matrices of a unit quaternion (w, x, y, z).
Eigen::Matrix4d left_isoclinic(const Eigen::Vector4d& q);
Eigen::Matrix4d right_isoclinic(const Eigen::Vector4d& q);

/// R = L(q_left) * R(q_right); both rotors are renormalized first.
Eigen::Matrix4d rotation_4d(const Eigen::Vector4d& rotor_left, const Eigen::Vector4d& rotor_right);

Eigen::Vector4d clamped_scale(const Eigen::Vector4d& scale);

/// Sigma = R S S^T R^T. Throws InvalidParameter on non-finite input.
Eigen::Matrix4d build_covariance(const Gaussian4D& g);

/// Sigma[3,3], the temporal variance.
double temporal_variance(const Gaussian4D& g);

/// exp(-(t - mu_t)^2 / (2 sigma_t)); the factor thresholded by o_th.
double temporal_factor(const Gaussian4D& g, double t);
double marginal_opacity(const Gaussian4D& g, double t);

InfluenceRange influence_range(double mu_t, double temporal_var, double o_th);
InfluenceRange influence_range(const Gaussian4D& g, double o_th);

ConditionedGaussian3D condition_at_time(const Gaussian4D& g, double t);

/// Real SH bases of degree 1..3 in band-major order.
ShBasis sh_basis(const Eigen::Vector3d& dir);
/// Jacobian of sh_basis w.r.t. the (unnormalized) direction components.
std::array<Eigen::Vector3d, kShBases> sh_basis_jacobian(const Eigen::Vector3d& dir);

/// c_base + evalSH(h, dir) before clamping.
Eigen::Vector3d raw_color(const Gaussian4D& g, const Eigen::Vector3d& dir);
Eigen::Vector3d eval_color(const Gaussian4D& g, const Eigen::Vector3d& dir);

// Backward passes. All accumulate into `out`.

/// Pulls dL/dSigma (full 4x4, entries treated independently) back to scale and rotors.
void covariance_backward(const Gaussian4D& g, const Eigen::Matrix4d& d_sigma, GaussianGradient& out);

/// Pulls gradients of condition_at_time outputs back to the 4D parameters.
void condition_backward(const Gaussian4D& g, double t, const Eigen::Vector3d& d_mean3,
                        const Eigen::Matrix3d& d_cov3, double d_opacity_t, GaussianGradient& out);

/// Pulls dL/dcolor back to base_color and sh_residual; returns dL/d(dir), where
/// `dir` is the unit view direction fed to eval_color.
Eigen::Vector3d color_backward(const Gaussian4D& g, const Eigen::Vector3d& dir,
                               const Eigen::Vector3d& d_color, GaussianGradient& out);

bool is_finite(const Gaussian4D& g);

}  // namespace tgh
