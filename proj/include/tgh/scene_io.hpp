#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tgh/camera.hpp"
#include "tgh/gaussian.hpp"
#include "tgh/image.hpp"

namespace tgh {

struct SceneCamera {
  std::string id;
  Camera camera;
  std::vector<std::filesystem::path> images;  // one per frame, absolute after loading
};

/// Frame i is at time i / frame_rate. All cameras share the frame count.
struct SceneDescription {
  double frame_rate = 30.0;
  int frames = 0;
  std::vector<SceneCamera> cameras;
  std::filesystem::path init_clouds;  // directory of frame_%06d.ply, absolute after loading

  double duration() const { return frames / frame_rate; }
};

/// Parses and validates a scene document. Relative paths resolve against base_dir.
/// Errors are ErrorKind::Parse and name the offending field (e.g. "cameras[0].fx").
SceneDescription parse_scene(const std::string& text, const std::filesystem::path& base_dir, bool check_paths = true);
SceneDescription load_scene(const std::filesystem::path& path);
/// Canonical form: orthonormal rotations, paths relative to the file's directory when possible.
std::string scene_to_json(const SceneDescription& scene, const std::filesystem::path& base_dir);
void save_scene(const SceneDescription& scene, const std::filesystem::path& path);

/// A single camera document: the camera fields of a scene entry without id/images.
Camera parse_camera(const std::string& text);
Camera load_camera(const std::filesystem::path& path);
std::string camera_to_json(const Camera& camera);

struct PointCloud {
  std::vector<Eigen::Vector3d> positions;
  std::vector<Eigen::Vector3d> colors;  // [0, 1]
};

struct InitCloud {
  double timestamp = 0.0;
  PointCloud points;
};

/// PLY subset: first element "vertex" with x, y, z and optional red, green, blue;
/// ascii or binary_little_endian.
PointCloud read_ply(const std::filesystem::path& path);
/// Fixture writer for generated scenes (ascii, uchar colors).
void write_ply(const std::filesystem::path& path, const PointCloud& cloud);
std::string cloud_filename(int frame);
/// Loads every frame_%06d.ply in dir; timestamps from the frame number.
std::vector<InitCloud> load_init_clouds(const std::filesystem::path& dir, double frame_rate);

struct InitConfig {
  int k = 3;
  double opacity = 0.1;
  double default_scale = 0.05;  // used when a cloud has fewer than two points
  double default_gap = 1.0;     // temporal coverage when there is a single cloud
  double o_th = 0.05;
  std::size_t max_points = 0;   // 0 keeps every point; otherwise uniform subsample
  std::uint64_t seed = 0;
};

/// Mean distance to the k nearest other points (fewer if the cloud is smaller); 0 for a lone point.
std::vector<double> knn_mean_distance(std::span<const Eigen::Vector3d> points, int k);

/// One Gaussian per point. Spatial scale from KNN; temporal scale so the
/// influence radius equals the gap to the farther neighbouring cloud.
std::vector<Gaussian4D> init_gaussians(std::span<const InitCloud> clouds, const InitConfig& cfg);

/// Supervision for training: cameras and per-(camera, frame) target images.
class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual int camera_count() const = 0;
  virtual int frame_count() const = 0;
  virtual double frame_rate() const = 0;
  virtual const Camera& camera(int index) const = 0;
  virtual Image target(int camera, int frame) const = 0;

  double frame_time(int frame) const { return frame / frame_rate(); }
  double duration() const { return frame_count() / frame_rate(); }
};

/// Images loaded from disk on first use and cached.
class DiskScene final : public FrameSource {
 public:
  explicit DiskScene(SceneDescription scene);
  const SceneDescription& description() const { return scene_; }

  int camera_count() const override { return static_cast<int>(scene_.cameras.size()); }
  int frame_count() const override { return scene_.frames; }
  double frame_rate() const override { return scene_.frame_rate; }
  const Camera& camera(int index) const override;
  Image target(int camera, int frame) const override;

 private:
  SceneDescription scene_;
  mutable std::mutex mutex_;
  mutable std::map<std::pair<int, int>, Image> cache_;
};

struct Blob {
  enum class Path { Linear, Sinusoidal };
  Path path = Path::Sinusoidal;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();     // position at t = 0 (linear) or path centre
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();   // linear
  Eigen::Vector3d amplitude = Eigen::Vector3d::Zero();  // sinusoidal
  double frequency = 0.5;                                // Hz, sinusoidal
  double phase = 0.0;
  double radius = 0.5;
  Eigen::Vector3d color = Eigen::Vector3d::Constant(0.8);
  double opacity = 0.95;  // peak opacity along a ray through the centre

  Eigen::Vector3d position(double t) const;
};

struct SynthSpec {
  std::vector<Blob> blobs;
  int cameras = 4;
  double camera_radius = 4.0;
  double camera_height = 1.0;
  double camera_phase = 0.0;   // angle of camera 0, radians
  double fov_degrees = 50.0;
  int width = 64;
  int height = 64;
  int frames = 60;
  double frame_rate = 30.0;
  Eigen::Vector3d light = Eigen::Vector3d(0.4, 0.8, 0.45).normalized();
  Eigen::Vector3d background = Eigen::Vector3d::Zero();
  std::uint64_t seed = 0;

  /// Two moving blobs on periodic paths, so any frame count stays in view.
  static SynthSpec two_blobs(int frames = 60, int cameras = 4, int size = 64);
};

/// Ray-cast soft spheres: opacity is a Gaussian in the ray's closest-approach
/// distance, Lambertian shading, exact per-ray depth order.
class SyntheticScene final : public FrameSource {
 public:
  explicit SyntheticScene(SynthSpec spec);
  const SynthSpec& spec() const { return spec_; }

  int camera_count() const override { return static_cast<int>(cameras_.size()); }
  int frame_count() const override { return spec_.frames; }
  double frame_rate() const override { return spec_.frame_rate; }
  const Camera& camera(int index) const override;
  Image target(int camera, int frame) const override;

  /// Camera on the rig circle at an arbitrary angle, for held-out views.
  Camera camera_at_angle(double radians) const;
  Image render_view(const Camera& cam, double t) const;

  /// Points sampled inside each blob every keyframe_interval frames.
  std::vector<InitCloud> init_clouds(int keyframe_interval, int points_per_blob) const;

  /// Writes PNG frames, init clouds and scene.json under dir; returns the scene file path.
  std::filesystem::path write(const std::filesystem::path& dir, int keyframe_interval, int points_per_blob) const;

 private:
  SynthSpec spec_;
  std::vector<Camera> cameras_;
};

}  // namespace tgh
