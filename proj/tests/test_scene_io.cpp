#include <cmath>
#include <fstream>
#include <random>

#include "doctest.h"
#include "support.hpp"
#include "tgh/error.hpp"
#include "tgh/hierarchy.hpp"
#include "tgh/scene_io.hpp"

using namespace tgh;
namespace fs = std::filesystem;

namespace {

std::string minimal_scene(const std::string& fx = "50", const std::string& rotation = "1,0,0, 0,1,0, 0,0,1") {
  return R"({"frame_rate": 30, "frames": 1, "init_clouds": "clouds",
  "cameras": [{"id": "a", "width": 8, "height": 6, "fx": )" +
         fx + R"(, "fy": 50, "cx": 3.5, "cy": 2.5,
  "rotation": [)" + rotation +
         R"(], "translation": [0, 0, 4], "images": ["img/a0.png"]}]})";
}

void make_scene_files(const fs::path& dir) {
  fs::create_directories(dir / "clouds");
  fs::create_directories(dir / "img");
  write_png(dir / "img" / "a0.png", Image(8, 6, Eigen::Vector3d(0.2, 0.4, 0.6)));
}

std::string parse_error_message(const std::string& text, const fs::path& base, bool check_paths = false) {
  try {
    parse_scene(text, base, check_paths);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Parse);
    return e.what();
  }
  return "";
}

Eigen::Vector2d centroid(const Image& img) {
  Eigen::Vector2d acc = Eigen::Vector2d::Zero();
  double w = 0.0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double v = img.pixel(x, y).sum();
      acc += v * Eigen::Vector2d(x, y);
      w += v;
    }
  return acc / w;
}

}  // namespace

TEST_CASE("scene documents") {
  test::TempDir tmp;
  make_scene_files(tmp.path);
  SUBCASE("minimal document loads with resolved paths") {
    std::ofstream(tmp.path / "scene.json") << minimal_scene();
    const SceneDescription s = load_scene(tmp.path / "scene.json");
    CHECK(s.frames == 1);
    CHECK(s.cameras.size() == 1);
    CHECK(s.cameras[0].camera.fx == 50.0);
    CHECK(s.cameras[0].images[0] == (tmp.path / "img" / "a0.png").lexically_normal());
    CHECK(s.duration() == doctest::Approx(1.0 / 30.0));
    DiskScene disk(s);
    CHECK(disk.target(0, 0).pixel(3, 3).isApprox(Eigen::Vector3d(51, 102, 153) / 255.0));
  }
  SUBCASE("non-positive focal length names the field") {
    CHECK(parse_error_message(minimal_scene("0"), tmp.path).find("fx") != std::string::npos);
    CHECK(parse_error_message(minimal_scene("-3"), tmp.path).find("cameras[0].fx") != std::string::npos);
  }
  SUBCASE("missing and malformed fields") {
    CHECK(parse_error_message(R"({"frame_rate": 30})", tmp.path).find("frames") != std::string::npos);
    CHECK(parse_error_message("{\"frames\": ", tmp.path).find("JSON") != std::string::npos);
    CHECK(parse_error_message(minimal_scene("50", "1,0,0, 0,1,0, 0,0"), tmp.path).find("rotation") !=
          std::string::npos);
  }
  SUBCASE("rotation tolerance") {
    CHECK(parse_error_message(minimal_scene("50", "1,0.01,0, 0,1,0, 0,0,1"), tmp.path).find("rotation") !=
          std::string::npos);
    const SceneDescription s = parse_scene(minimal_scene("50", "1,0.0002,0, 0,1,0, 0,0,1"), tmp.path, false);
    const Eigen::Matrix3d r = s.cameras[0].camera.rotation;
    CHECK((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("broken image path") {
    fs::remove(tmp.path / "img" / "a0.png");
    CHECK(parse_error_message(minimal_scene(), tmp.path, true).find("images[0]") != std::string::npos);
  }
  SUBCASE("save of a load is a canonicalization fixpoint") {
    std::ofstream(tmp.path / "scene.json") << minimal_scene("50", "1,0.0002,0, 0,1,0, 0,0,1");
    const SceneDescription a = load_scene(tmp.path / "scene.json");
    save_scene(a, tmp.path / "canon.json");
    const SceneDescription b = load_scene(tmp.path / "canon.json");
    save_scene(b, tmp.path / "canon2.json");
    std::ifstream f1(tmp.path / "canon.json"), f2(tmp.path / "canon2.json");
    const std::string t1((std::istreambuf_iterator<char>(f1)), {}), t2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(t1 == t2);
    CHECK(b.cameras[0].images == a.cameras[0].images);
    CHECK((b.cameras[0].camera.rotation - a.cameras[0].camera.rotation).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("point clouds") {
  test::TempDir tmp;
  SUBCASE("ascii") {
    std::ofstream(tmp.path / "a.ply") << "ply\nformat ascii 1.0\ncomment hi\nelement vertex 2\nproperty float x\n"
                                         "property float y\nproperty float z\nproperty uchar red\nproperty uchar "
                                         "green\nproperty uchar blue\nelement face 0\nproperty list uchar int "
                                         "vertex_indices\nend_header\n1 2 3 255 0 51\n-1 0.5 0 0 255 0\n";
    const PointCloud c = read_ply(tmp.path / "a.ply");
    REQUIRE(c.positions.size() == 2);
    CHECK(c.positions[0] == Eigen::Vector3d(1, 2, 3));
    CHECK(c.colors[0].isApprox(Eigen::Vector3d(1.0, 0.0, 0.2)));
    CHECK(c.positions[1] == Eigen::Vector3d(-1, 0.5, 0));
  }
  SUBCASE("binary little endian with extra properties") {
    {
      std::ofstream out(tmp.path / "b.ply", std::ios::binary);
      out << "ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty double x\nproperty double y\n"
             "property double z\nproperty float nx\nproperty uchar red\nproperty uchar green\nproperty uchar "
             "blue\nend_header\n";
      const double xyz[3] = {0.25, -4.0, 9.5};
      const float nx = 1.0f;
      const unsigned char rgb[3] = {0, 128, 255};
      out.write(reinterpret_cast<const char*>(xyz), sizeof xyz);
      out.write(reinterpret_cast<const char*>(&nx), sizeof nx);
      out.write(reinterpret_cast<const char*>(rgb), sizeof rgb);
    }
    const PointCloud c = read_ply(tmp.path / "b.ply");
    REQUIRE(c.positions.size() == 1);
    CHECK(c.positions[0] == Eigen::Vector3d(0.25, -4.0, 9.5));
    CHECK(c.colors[0].isApprox(Eigen::Vector3d(0.0, 128.0 / 255.0, 1.0)));
  }
  SUBCASE("writer round trip and directory loading") {
    PointCloud c;
    c.positions = {{0.5, 1.5, -2.0}, {3.0, 0.0, 1.0}};
    c.colors = {{1.0, 0.0, 0.0}, {0.0, 0.0, 1.0}};
    write_ply(tmp.path / cloud_filename(0), c);
    write_ply(tmp.path / cloud_filename(15), c);
    std::ofstream(tmp.path / "notes.txt") << "ignored";
    const auto clouds = load_init_clouds(tmp.path, 30.0);
    REQUIRE(clouds.size() == 2);
    CHECK(clouds[1].timestamp == 0.5);
    CHECK(clouds[0].points.positions == c.positions);
  }
  SUBCASE("malformed") {
    std::ofstream(tmp.path / "c.ply") << "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nend_header\n1\n";
    CHECK_THROWS_AS(read_ply(tmp.path / "c.ply"), Error);
  }
}

TEST_CASE("initialization") {
  SUBCASE("unit-square corners") {
    InitCloud cloud;
    cloud.points.positions = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}};
    cloud.points.colors.assign(4, Eigen::Vector3d(0.1, 0.2, 0.3));
    const std::vector<InitCloud> clouds = {cloud};
    const auto gs = init_gaussians(clouds, {});
    REQUIRE(gs.size() == 4);
    const double expected = (1.0 + 1.0 + std::sqrt(2.0)) / 3.0;
    for (const auto& g : gs) {
      for (int k = 0; k < 3; ++k) CHECK(g.scale[k] == doctest::Approx(expected).epsilon(1e-12));
      CHECK(g.scale[0] == doctest::Approx(1.1381).epsilon(1e-4));
      CHECK(g.opacity == 0.1);
      CHECK(g.base_color == Eigen::Vector3d(0.1, 0.2, 0.3));
      CHECK(g.rotor_left == Eigen::Vector4d(1, 0, 0, 0));
      for (double h : g.sh_residual) CHECK(h == 0.0);
    }
  }
  SUBCASE("single point falls back to the default scale") {
    InitCloud cloud;
    cloud.points.positions = {{1, 2, 3}};
    cloud.points.colors = {{1, 1, 1}};
    InitConfig cfg;
    cfg.default_scale = 0.07;
    const std::vector<InitCloud> clouds = {cloud};
    CHECK(init_gaussians(clouds, cfg)[0].scale[0] == 0.07);
  }
  SUBCASE("empty input is rejected") {
    CHECK_THROWS_AS(init_gaussians(std::vector<InitCloud>{}, {}), Error);
    CHECK_THROWS_AS(init_gaussians(std::vector<InitCloud>(3), {}), Error);
  }
  SUBCASE("knn agrees with brute force") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<Eigen::Vector3d> pts(300);
    for (auto& p : pts) p = {u(rng), u(rng), u(rng)};
    const auto fast = knn_mean_distance(pts, 3);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      std::vector<double> d;
      for (std::size_t j = 0; j < pts.size(); ++j)
        if (j != i) d.push_back((pts[i] - pts[j]).norm());
      std::sort(d.begin(), d.end());
      CHECK(fast[i] == doctest::Approx((d[0] + d[1] + d[2]) / 3.0).epsilon(1e-12));
    }
  }
  SUBCASE("synthetic clouds cover the timeline and place cleanly") {
    const SyntheticScene scene(SynthSpec::two_blobs(60));
    const auto clouds = scene.init_clouds(6, 40);
    const auto gs = init_gaussians(clouds, {});
    std::size_t points = 0;
    for (const auto& c : clouds) points += c.points.positions.size();
    CHECK(gs.size() == points);
    auto h = Hierarchy::build(scene.duration(), 10.0, 9);
    for (const auto& g : gs) {
      CHECK(is_finite(g));
      h.insert(g);
      // Influence radius equals the keyframe gap.
      CHECK(influence_range(g, 0.05).radius == doctest::Approx(0.2).epsilon(1e-12));
    }
    CHECK(h.audit().ok());
    for (int f = 0; f < 60; ++f) CHECK(!h.query(scene.frame_time(f)).gaussian_ids.empty());
  }
  SUBCASE("subsampling cap") {
    const SyntheticScene scene(SynthSpec::two_blobs(30));
    InitConfig cfg;
    cfg.max_points = 100;
    CHECK(init_gaussians(scene.init_clouds(5, 30), cfg).size() == 100);
  }
}

TEST_CASE("synthetic scenes") {
  SUBCASE("static blob renders identical frames") {
    SynthSpec spec = SynthSpec::two_blobs(10, 2, 32);
    spec.blobs.resize(1);
    spec.blobs[0].amplitude.setZero();
    const SyntheticScene scene(spec);
    const Image first = scene.target(1, 0);
    for (int f = 1; f < 10; ++f) CHECK(scene.target(1, f) == first);
    CHECK(first.pixel(16, 16).sum() > 0.5);
  }
  SUBCASE("deterministic") {
    const SyntheticScene a(SynthSpec::two_blobs(20)), b(SynthSpec::two_blobs(20));
    CHECK(a.target(2, 13) == b.target(2, 13));
    CHECK(a.init_clouds(4, 10)[2].points.positions == b.init_clouds(4, 10)[2].points.positions);
  }
  SUBCASE("a crossing blob's centroid moves monotonically along the projected path") {
    SynthSpec spec = SynthSpec::two_blobs(20, 1, 48);
    spec.blobs.resize(1);
    Blob& b = spec.blobs[0];
    b.path = Blob::Path::Linear;
    b.center = {0.0, 0.0, -1.2};
    b.velocity = {0.0, 0.0, 3.6};  // crosses in 20 frames at 30 Hz
    b.radius = 0.3;
    const SyntheticScene scene(spec);
    const Camera& cam = scene.camera(0);
    const Eigen::Vector2d p0 = cam.project(cam.to_camera(b.position(0.0)));
    const Eigen::Vector2d p1 = cam.project(cam.to_camera(b.position(scene.frame_time(19))));
    const Eigen::Vector2d dir = (p1 - p0).normalized();
    double prev = -1e9;
    for (int f = 0; f < 20; ++f) {
      const double along = centroid(scene.target(0, f)).dot(dir);
      CHECK(along > prev);
      prev = along;
    }
  }
  SUBCASE("two views agree with the analytic geometry") {
    SynthSpec spec = SynthSpec::two_blobs(1, 4, 64);
    spec.blobs.resize(1);
    spec.blobs[0].amplitude.setZero();
    spec.blobs[0].center = {0.3, -0.2, 0.4};
    spec.blobs[0].radius = 0.3;
    spec.light.setZero();  // uniform shading keeps the centroid unbiased
    const SyntheticScene scene(spec);
    const Camera& a = scene.camera(0);
    const Camera& b = scene.camera(1);
    const Eigen::Vector2d ca = centroid(scene.target(0, 0)), cb = centroid(scene.target(1, 0));
    const Eigen::Vector3d x = spec.blobs[0].center;
    CHECK((ca - a.project(a.to_camera(x))).norm() < 0.5);
    CHECK((cb - b.project(b.to_camera(x))).norm() < 0.5);
    // Epipolar line of the camera-a centroid in camera b.
    const Eigen::Vector3d ray = a.rotation.transpose() * Eigen::Vector3d((ca.x() - a.cx) / a.fx, (ca.y() - a.cy) / a.fy, 1);
    const Eigen::Vector2d e0 = b.project(b.to_camera(a.center() + 2.0 * ray));
    const Eigen::Vector2d e1 = b.project(b.to_camera(a.center() + 6.0 * ray));
    const Eigen::Vector2d d = (e1 - e0).normalized();
    const Eigen::Vector2d r = cb - e0;
    CHECK(std::abs(r.x() * d.y() - r.y() * d.x()) < 0.5);
  }
  SUBCASE("written fixtures load back") {
    test::TempDir tmp;
    const SyntheticScene scene(SynthSpec::two_blobs(4, 2, 16));
    const fs::path file = scene.write(tmp.path, 2, 10);
    const SceneDescription desc = load_scene(file);
    CHECK(desc.frames == 4);
    CHECK(desc.cameras.size() == 2);
    CHECK(load_init_clouds(desc.init_clouds, desc.frame_rate).size() == 2);
    const DiskScene disk(desc);
    const Image ref = scene.target(1, 3);
    const Image got = disk.target(1, 3);
    for (std::size_t i = 0; i < ref.data.size(); ++i) CHECK(std::abs(ref.data[i] - got.data[i]) <= 0.5 / 255.0 + 1e-12);
  }
}

TEST_CASE("camera documents round trip") {
  const Camera cam = look_at(Eigen::Vector3d(3, 1, -2), Eigen::Vector3d::Zero(), Eigen::Vector3d(0, 1, 0), 40.0, 48, 32);
  const Camera back = parse_camera(camera_to_json(cam));
  CHECK(back.width == 48);
  CHECK(back.height == 32);
  CHECK(back.fx == cam.fx);
  CHECK((back.rotation - cam.rotation).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(back.translation == cam.translation);
  const std::string once = camera_to_json(back);
  CHECK(camera_to_json(parse_camera(once)) == once);
  try {
    parse_camera(R"({"width": 4, "height": 4, "fx": -1, "fy": 1, "cx": 2, "cy": 2,
                     "rotation": [1, 0, 0, 0, 1, 0, 0, 0, 1], "translation": [0, 0, 0]})");
    FAIL("expected a parse error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Parse);
    CHECK(std::string(e.what()).find("fx") != std::string::npos);
  }
}
