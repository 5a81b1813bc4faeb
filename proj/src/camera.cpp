#include "tgh/camera.hpp"

#include <cmath>

#include <Eigen/Geometry>
#include <Eigen/LU>
#include <Eigen/SVD>

#include "tgh/error.hpp"

namespace tgh {

void Camera::validate() const {
  if (!(fx > 0.0) || !std::isfinite(fx)) fail(ErrorKind::InvalidParameter, "camera field \"fx\" must be positive");
  if (!(fy > 0.0) || !std::isfinite(fy)) fail(ErrorKind::InvalidParameter, "camera field \"fy\" must be positive");
  if (!std::isfinite(cx)) fail(ErrorKind::InvalidParameter, "camera field \"cx\" must be finite");
  if (!std::isfinite(cy)) fail(ErrorKind::InvalidParameter, "camera field \"cy\" must be finite");
  if (width <= 0) fail(ErrorKind::InvalidParameter, "camera field \"width\" must be positive");
  if (height <= 0) fail(ErrorKind::InvalidParameter, "camera field \"height\" must be positive");
  if (!(near > 0.0 && near < far)) fail(ErrorKind::InvalidParameter, "camera requires 0 < near < far");
  if (!translation.allFinite()) fail(ErrorKind::InvalidParameter, "camera field \"translation\" must be finite");
  const double err = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (!(err <= 1e-6) || rotation.determinant() <= 0.0)
    fail(ErrorKind::InvalidParameter, "camera field \"rotation\" is not a proper rotation");
}

Eigen::Matrix3d orthonormalize(const Eigen::Matrix3d& m) {
  // Rotations already orthonormal to rounding pass through unchanged, so
  // canonicalization is idempotent bit for bit.
  if ((m.transpose() * m - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= 1e-14 && m.determinant() > 0.0)
    return m;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Eigen::Matrix3d u = svd.matrixU();
    u.col(2) *= -1.0;
    r = u * svd.matrixV().transpose();
  }
  return r;
}

Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up, double focal,
               int width, int height) {
  const Eigen::Vector3d forward = (target - eye).normalized();
  const Eigen::Vector3d right = forward.cross(up).normalized();
  const Eigen::Vector3d down = forward.cross(right);
  Camera cam;
  cam.rotation.row(0) = right.transpose();
  cam.rotation.row(1) = down.transpose();
  cam.rotation.row(2) = forward.transpose();
  cam.translation = -cam.rotation * eye;
  cam.fx = cam.fy = focal;
  cam.cx = 0.5 * (width - 1);
  cam.cy = 0.5 * (height - 1);
  cam.width = width;
  cam.height = height;
  return cam;
}

}  // namespace tgh
