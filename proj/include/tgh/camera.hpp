#pragma once

#include <Eigen/Core>

namespace tgh {

/// Pinhole camera. rotation/translation map world to camera space; +z looks forward.
struct Camera {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  int width = 1;
  int height = 1;
  double near = 0.01;
  double far = 1000.0;

  Eigen::Vector3d center() const { return -rotation.transpose() * translation; }
  Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const { return rotation * world + translation; }
  Eigen::Vector2d project(const Eigen::Vector3d& cam) const {
    return {fx * cam.x() / cam.z() + cx, fy * cam.y() / cam.z() + cy};
  }

  /// Throws InvalidParameter naming the offending field.
  void validate() const;
};

/// Camera at `eye` looking at `target`; image y grows downward.
Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up, double focal,
               int width, int height);

/// Nearest rotation (SVD polar factor); matrices orthonormal within 1e-14 are returned as is.
Eigen::Matrix3d orthonormalize(const Eigen::Matrix3d& m);

}  // namespace tgh
