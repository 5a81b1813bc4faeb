#include "tgh/scene_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <Eigen/Dense>
#include <boost/geometry.hpp>
#include <boost/geometry/index/rtree.hpp>

#include "json.hpp"
#include "tgh/error.hpp"

namespace tgh {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void parse_fail(const std::string& field, const std::string& what) {
  fail(ErrorKind::Parse, "scene field \"" + field + "\": " + what);
}

const json& require(const json& obj, const std::string& key, const std::string& where) {
  const auto it = obj.find(key);
  if (it == obj.end()) parse_fail(where + key, "missing");
  return *it;
}

double number(const json& obj, const std::string& key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_number()) parse_fail(where + key, "expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) parse_fail(where + key, "must be finite");
  return d;
}

int integer(const json& obj, const std::string& key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_number_integer()) parse_fail(where + key, "expected an integer");
  return v.get<int>();
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

std::string relative_string(const fs::path& p, const fs::path& base) {
  if (base.empty()) return p.string();
  const fs::path rel = p.lexically_relative(base);
  return rel.empty() ? p.string() : rel.generic_string();
}

Camera parse_camera_fields(const json& c, const std::string& where) {
  Camera cam;
  cam.width = integer(c, "width", where);
  cam.height = integer(c, "height", where);
  if (cam.width <= 0) parse_fail(where + "width", "must be positive");
  if (cam.height <= 0) parse_fail(where + "height", "must be positive");
  cam.fx = number(c, "fx", where);
  cam.fy = number(c, "fy", where);
  if (!(cam.fx > 0.0)) parse_fail(where + "fx", "must be positive");
  if (!(cam.fy > 0.0)) parse_fail(where + "fy", "must be positive");
  cam.cx = number(c, "cx", where);
  cam.cy = number(c, "cy", where);

  const json& rot = require(c, "rotation", where);
  if (!rot.is_array() || rot.size() != 9) parse_fail(where + "rotation", "expected 9 numbers (row-major)");
  Eigen::Matrix3d r;
  for (int k = 0; k < 9; ++k) {
    if (!rot[k].is_number()) parse_fail(where + "rotation", "expected 9 numbers (row-major)");
    r(k / 3, k % 3) = rot[k].get<double>();
  }
  if (!r.allFinite()) parse_fail(where + "rotation", "must be finite");
  const double err = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (err > 1e-3 || r.determinant() <= 0.0) parse_fail(where + "rotation", "not a rotation within 1e-3");
  cam.rotation = orthonormalize(r);

  const json& tr = require(c, "translation", where);
  if (!tr.is_array() || tr.size() != 3) parse_fail(where + "translation", "expected 3 numbers");
  for (int k = 0; k < 3; ++k) {
    if (!tr[k].is_number()) parse_fail(where + "translation", "expected 3 numbers");
    cam.translation[k] = tr[k].get<double>();
  }
  return cam;
}

json camera_fields_json(const Camera& c) {
  const Eigen::Matrix3d r = orthonormalize(c.rotation);
  json j;
  j["width"] = c.width;
  j["height"] = c.height;
  j["fx"] = c.fx;
  j["fy"] = c.fy;
  j["cx"] = c.cx;
  j["cy"] = c.cy;
  j["rotation"] = json::array();
  for (int k = 0; k < 9; ++k) j["rotation"].push_back(r(k / 3, k % 3));
  j["translation"] = {c.translation.x(), c.translation.y(), c.translation.z()};
  return j;
}

json parse_document(const std::string& text, const char* what) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Parse, std::string(what) + " is not valid JSON at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  if (!doc.is_object()) fail(ErrorKind::Parse, std::string(what) + " document must be a JSON object");
  return doc;
}

std::string read_text(const fs::path& path, const char* what) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::NotFound, std::string("cannot open ") + what + " file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

Camera parse_camera(const std::string& text) { return parse_camera_fields(parse_document(text, "camera"), ""); }

Camera load_camera(const fs::path& path) { return parse_camera(read_text(path, "camera")); }

std::string camera_to_json(const Camera& camera) { return camera_fields_json(camera).dump(2) + "\n"; }

SceneDescription parse_scene(const std::string& text, const fs::path& base_dir, bool check_paths) {
  const json doc = parse_document(text, "scene");

  SceneDescription scene;
  scene.frame_rate = number(doc, "frame_rate", "");
  if (!(scene.frame_rate > 0.0)) parse_fail("frame_rate", "must be positive");
  scene.frames = integer(doc, "frames", "");
  if (scene.frames <= 0) parse_fail("frames", "must be positive");

  const json& cams = require(doc, "cameras", "");
  if (!cams.is_array() || cams.empty()) parse_fail("cameras", "expected a non-empty array");
  for (std::size_t i = 0; i < cams.size(); ++i) {
    const std::string where = "cameras[" + std::to_string(i) + "].";
    const json& c = cams[i];
    if (!c.is_object()) parse_fail("cameras[" + std::to_string(i) + "]", "expected an object");
    SceneCamera sc;
    const json& id = require(c, "id", where);
    if (!id.is_string()) parse_fail(where + "id", "expected a string");
    sc.id = id.get<std::string>();
    sc.camera = parse_camera_fields(c, where);

    const json& imgs = require(c, "images", where);
    if (!imgs.is_array()) parse_fail(where + "images", "expected an array of paths");
    if (static_cast<int>(imgs.size()) != scene.frames)
      parse_fail(where + "images", "has " + std::to_string(imgs.size()) + " entries, frames is " +
                                       std::to_string(scene.frames));
    for (std::size_t f = 0; f < imgs.size(); ++f) {
      const std::string field = where + "images[" + std::to_string(f) + "]";
      if (!imgs[f].is_string()) parse_fail(field, "expected a path string");
      const fs::path p = resolve(base_dir, imgs[f].get<std::string>());
      if (check_paths && !fs::is_regular_file(p)) parse_fail(field, "file not found: " + p.string());
      sc.images.push_back(p);
    }
    scene.cameras.push_back(std::move(sc));
  }

  const json& clouds = require(doc, "init_clouds", "");
  if (!clouds.is_string()) parse_fail("init_clouds", "expected a directory path");
  scene.init_clouds = resolve(base_dir, clouds.get<std::string>());
  if (check_paths && !fs::is_directory(scene.init_clouds))
    parse_fail("init_clouds", "directory not found: " + scene.init_clouds.string());
  return scene;
}

SceneDescription load_scene(const fs::path& path) {
  return parse_scene(read_text(path, "scene"), fs::absolute(path).parent_path());
}

std::string scene_to_json(const SceneDescription& scene, const fs::path& base_dir) {
  json doc;
  doc["frame_rate"] = scene.frame_rate;
  doc["frames"] = scene.frames;
  doc["cameras"] = json::array();
  for (const SceneCamera& sc : scene.cameras) {
    json j = camera_fields_json(sc.camera);
    j["id"] = sc.id;
    j["images"] = json::array();
    for (const fs::path& p : sc.images) j["images"].push_back(relative_string(p, base_dir));
    doc["cameras"].push_back(std::move(j));
  }
  doc["init_clouds"] = relative_string(scene.init_clouds, base_dir);
  return doc.dump(2) + "\n";
}

void save_scene(const SceneDescription& scene, const fs::path& path) {
  const fs::path base = fs::absolute(path).parent_path();
  std::ofstream out(path);
  if (!out) fail(ErrorKind::NotFound, "cannot write scene file " + path.string());
  out << scene_to_json(scene, base);
}

// --- PLY ---------------------------------------------------------------------

namespace {

struct PlyProperty {
  std::string name;
  std::string type;
  int size = 0;
};

int ply_type_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "float" || t == "int32" || t == "uint32" || t == "float32") return 4;
  if (t == "double" || t == "float64") return 8;
  return 0;
}

double ply_read_binary(const char* p, const std::string& t) {
  auto get = [p](auto v) {
    std::memcpy(&v, p, sizeof(v));
    return static_cast<double>(v);
  };
  if (t == "char" || t == "int8") return get(std::int8_t{});
  if (t == "uchar" || t == "uint8") return get(std::uint8_t{});
  if (t == "short" || t == "int16") return get(std::int16_t{});
  if (t == "ushort" || t == "uint16") return get(std::uint16_t{});
  if (t == "int" || t == "int32") return get(std::int32_t{});
  if (t == "uint" || t == "uint32") return get(std::uint32_t{});
  if (t == "float" || t == "float32") return get(float{});
  return get(double{});
}

bool is_integer_type(const std::string& t) { return t != "float" && t != "float32" && t != "double" && t != "float64"; }

}  // namespace

PointCloud read_ply(const fs::path& path) {
  static_assert(std::endian::native == std::endian::little, "binary PLY reader assumes a little-endian host");
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::NotFound, "cannot open point cloud " + path.string());
  auto bad = [&](const std::string& what) -> void { fail(ErrorKind::Parse, path.string() + ": " + what); };

  std::string line;
  std::getline(in, line);
  if (line != "ply" && line != "ply\r") bad("missing 'ply' magic");
  bool binary = false;
  long long count = -1;
  bool in_vertex = false;
  std::vector<PlyProperty> props;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "end_header") break;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "binary_little_endian")
        binary = true;
      else if (fmt != "ascii")
        bad("unsupported format " + fmt);
    } else if (word == "element") {
      std::string name;
      long long n = 0;
      ls >> name >> n;
      if (count < 0) {
        if (name != "vertex") bad("first element must be 'vertex'");
        count = n;
        in_vertex = true;
      } else {
        in_vertex = false;
      }
    } else if (word == "property" && in_vertex) {
      PlyProperty p;
      ls >> p.type;
      if (p.type == "list") bad("list properties on vertices are not supported");
      ls >> p.name;
      p.size = ply_type_size(p.type);
      if (p.size == 0) bad("unknown property type " + p.type);
      props.push_back(p);
    }
  }
  if (count < 0) bad("no vertex element");

  int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1;
  for (int i = 0; i < static_cast<int>(props.size()); ++i) {
    const std::string& n = props[i].name;
    if (n == "x") ix = i;
    if (n == "y") iy = i;
    if (n == "z") iz = i;
    if (n == "red") ir = i;
    if (n == "green") ig = i;
    if (n == "blue") ib = i;
  }
  if (ix < 0 || iy < 0 || iz < 0) bad("vertex element lacks x, y, z");
  const bool has_color = ir >= 0 && ig >= 0 && ib >= 0;

  PointCloud cloud;
  cloud.positions.reserve(count);
  cloud.colors.reserve(count);
  std::vector<double> values(props.size());
  int stride = 0;
  for (const auto& p : props) stride += p.size;
  std::vector<char> buf(stride);
  for (long long v = 0; v < count; ++v) {
    if (binary) {
      if (!in.read(buf.data(), stride)) bad("truncated binary vertex data");
      int off = 0;
      for (std::size_t i = 0; i < props.size(); ++i) {
        values[i] = ply_read_binary(buf.data() + off, props[i].type);
        off += props[i].size;
      }
    } else {
      for (std::size_t i = 0; i < props.size(); ++i)
        if (!(in >> values[i])) bad("truncated ascii vertex data");
    }
    cloud.positions.emplace_back(values[ix], values[iy], values[iz]);
    Eigen::Vector3d c = Eigen::Vector3d::Constant(0.5);
    if (has_color) {
      c = {values[ir], values[ig], values[ib]};
      if (is_integer_type(props[ir].type)) c /= 255.0;
    }
    cloud.colors.push_back(c.cwiseMax(0.0).cwiseMin(1.0));
  }
  return cloud;
}

void write_ply(const fs::path& path, const PointCloud& cloud) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::NotFound, "cannot write point cloud " + path.string());
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.positions.size()
      << "\nproperty float x\nproperty float y\nproperty float z\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  char line[160];
  for (std::size_t i = 0; i < cloud.positions.size(); ++i) {
    const Eigen::Vector3d& p = cloud.positions[i];
    const Eigen::Vector3d c = (cloud.colors[i].cwiseMax(0.0).cwiseMin(1.0) * 255.0).array().round();
    std::snprintf(line, sizeof line, "%.9g %.9g %.9g %d %d %d\n", p.x(), p.y(), p.z(), static_cast<int>(c.x()),
                  static_cast<int>(c.y()), static_cast<int>(c.z()));
    out << line;
  }
}

std::string cloud_filename(int frame) {
  char name[32];
  std::snprintf(name, sizeof name, "frame_%06d.ply", frame);
  return name;
}

std::vector<InitCloud> load_init_clouds(const fs::path& dir, double frame_rate) {
  if (!fs::is_directory(dir)) fail(ErrorKind::NotFound, "init cloud directory not found: " + dir.string());
  std::vector<std::pair<int, fs::path>> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    int frame = 0;
    char tail = 0;
    if (std::sscanf(name.c_str(), "frame_%d.pl%c", &frame, &tail) == 2 && tail == 'y' && name.size() == 16)
      files.emplace_back(frame, entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<InitCloud> clouds;
  for (const auto& [frame, path] : files) clouds.push_back({frame / frame_rate, read_ply(path)});
  return clouds;
}

// --- initialization ------------------------------------------------------------

std::vector<double> knn_mean_distance(std::span<const Eigen::Vector3d> points, int k) {
  namespace bg = boost::geometry;
  namespace bgi = boost::geometry::index;
  using Point = bg::model::point<double, 3, bg::cs::cartesian>;
  using Value = std::pair<Point, std::size_t>;

  std::vector<Value> values;
  values.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i)
    values.emplace_back(Point(points[i].x(), points[i].y(), points[i].z()), i);
  const bgi::rtree<Value, bgi::rstar<16>> tree(values.begin(), values.end());

  std::vector<double> out(points.size(), 0.0);
  std::vector<Value> hits;
  for (std::size_t i = 0; i < points.size(); ++i) {
    hits.clear();
    tree.query(bgi::nearest(values[i].first, static_cast<unsigned>(k + 1)), std::back_inserter(hits));
    std::vector<double> d;
    bool skipped_self = false;
    for (const Value& h : hits) {
      if (!skipped_self && h.second == i) {
        skipped_self = true;
        continue;
      }
      d.push_back((points[h.second] - points[i]).norm());
    }
    std::sort(d.begin(), d.end());
    if (d.size() > static_cast<std::size_t>(k)) d.resize(k);
    if (!d.empty()) out[i] = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
  }
  return out;
}

std::vector<Gaussian4D> init_gaussians(std::span<const InitCloud> clouds, const InitConfig& cfg) {
  if (cfg.k < 1) fail(ErrorKind::InvalidParameter, "init: k must be at least 1");
  if (!(cfg.o_th > 0.0 && cfg.o_th < 1.0)) fail(ErrorKind::InvalidParameter, "init: o_th must lie in (0, 1)");
  std::vector<std::size_t> order;
  std::size_t total = 0;
  for (std::size_t c = 0; c < clouds.size(); ++c) {
    total += clouds[c].points.positions.size();
    if (!clouds[c].points.positions.empty()) order.push_back(c);
  }
  if (order.empty()) fail(ErrorKind::InvalidParameter, "init: every point cloud is empty");
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return clouds[a].timestamp < clouds[b].timestamp; });

  // Uniform subsample across all clouds when capped.
  std::vector<std::vector<std::uint8_t>> keep(clouds.size());
  for (std::size_t c : order) keep[c].assign(clouds[c].points.positions.size(), 1);
  if (cfg.max_points > 0 && total > cfg.max_points) {
    std::vector<std::pair<std::size_t, std::size_t>> all;
    for (std::size_t c : order)
      for (std::size_t i = 0; i < keep[c].size(); ++i) all.emplace_back(c, i);
    std::mt19937_64 rng(cfg.seed);
    std::shuffle(all.begin(), all.end(), rng);
    for (std::size_t c : order) std::fill(keep[c].begin(), keep[c].end(), 0);
    for (std::size_t j = 0; j < cfg.max_points; ++j) keep[all[j].first][all[j].second] = 1;
  }

  const double radius_per_sigma = std::sqrt(-2.0 * std::log(cfg.o_th));
  std::vector<Gaussian4D> out;
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const InitCloud& cloud = clouds[order[oi]];
    double gap = 0.0;
    if (oi > 0) gap = std::max(gap, cloud.timestamp - clouds[order[oi - 1]].timestamp);
    if (oi + 1 < order.size()) gap = std::max(gap, clouds[order[oi + 1]].timestamp - cloud.timestamp);
    if (!(gap > 0.0)) gap = cfg.default_gap;
    const double scale_t = gap / radius_per_sigma;

    const std::vector<double> knn = knn_mean_distance(cloud.points.positions, cfg.k);
    for (std::size_t i = 0; i < cloud.points.positions.size(); ++i) {
      if (!keep[order[oi]][i]) continue;
      Gaussian4D g;
      g.mean << cloud.points.positions[i], cloud.timestamp;
      const double s = knn[i] > 0.0 ? knn[i] : cfg.default_scale;
      g.scale = {s, s, s, scale_t};
      g.opacity = cfg.opacity;
      g.base_color = cloud.points.colors[i];
      if (!is_finite(g)) fail(ErrorKind::InvalidParameter, "init: non-finite point in cloud");
      out.push_back(g);
    }
  }
  return out;
}

// --- frame sources -------------------------------------------------------------

DiskScene::DiskScene(SceneDescription scene) : scene_(std::move(scene)) {
  if (scene_.cameras.empty() || scene_.frames <= 0) fail(ErrorKind::InvalidParameter, "scene has no frames");
}

const Camera& DiskScene::camera(int index) const {
  if (index < 0 || index >= camera_count()) fail(ErrorKind::OutOfRange, "camera index out of range");
  return scene_.cameras[index].camera;
}

Image DiskScene::target(int cam, int frame) const {
  if (frame < 0 || frame >= scene_.frames) fail(ErrorKind::OutOfRange, "frame index out of range");
  const Camera& c = camera(cam);
  std::lock_guard lock(mutex_);
  const auto it = cache_.find({cam, frame});
  if (it != cache_.end()) return it->second;
  Image img = read_png(scene_.cameras[cam].images[frame]);
  if (img.width != c.width || img.height != c.height)
    fail(ErrorKind::Parse, "image " + scene_.cameras[cam].images[frame].string() + " does not match camera size");
  cache_.emplace(std::make_pair(cam, frame), img);
  return img;
}

Eigen::Vector3d Blob::position(double t) const {
  if (path == Path::Linear) return center + velocity * t;
  return center + amplitude * std::sin(2.0 * M_PI * frequency * t + phase);
}

SynthSpec SynthSpec::two_blobs(int frames, int cameras, int size) {
  SynthSpec s;
  s.frames = frames;
  s.cameras = cameras;
  s.width = s.height = size;
  Blob a;
  a.center = {0.0, 0.0, 0.0};
  a.amplitude = {0.9, 0.0, 0.3};
  a.frequency = 0.25;
  a.radius = 0.55;
  a.color = {0.9, 0.35, 0.2};
  Blob b;
  b.center = {0.0, 0.25, 0.0};
  b.amplitude = {0.0, 0.3, 0.9};
  b.frequency = 0.2;
  b.phase = 1.3;
  b.radius = 0.45;
  b.color = {0.2, 0.5, 0.95};
  s.blobs = {a, b};
  return s;
}

namespace {

/// Focal length for the horizontal field of view.
double focal_for(const SynthSpec& s) { return 0.5 * s.width / std::tan(0.5 * s.fov_degrees * M_PI / 180.0); }

}  // namespace

SyntheticScene::SyntheticScene(SynthSpec spec) : spec_(std::move(spec)) {
  if (spec_.cameras <= 0 || spec_.frames <= 0 || spec_.width <= 0 || spec_.height <= 0 || !(spec_.frame_rate > 0.0))
    fail(ErrorKind::InvalidParameter, "synthetic scene needs cameras, frames, image size and frame rate");
  for (int c = 0; c < spec_.cameras; ++c)
    cameras_.push_back(camera_at_angle(spec_.camera_phase + 2.0 * M_PI * c / spec_.cameras));
}

const Camera& SyntheticScene::camera(int index) const {
  if (index < 0 || index >= camera_count()) fail(ErrorKind::OutOfRange, "camera index out of range");
  return cameras_[index];
}

Camera SyntheticScene::camera_at_angle(double radians) const {
  const Eigen::Vector3d eye(spec_.camera_radius * std::cos(radians), -spec_.camera_height,
                            spec_.camera_radius * std::sin(radians));
  // World y points down so image y grows downward with an upright scene.
  return look_at(eye, Eigen::Vector3d::Zero(), Eigen::Vector3d(0.0, -1.0, 0.0), focal_for(spec_), spec_.width,
                 spec_.height);
}

Image SyntheticScene::target(int cam, int frame) const {
  if (frame < 0 || frame >= spec_.frames) fail(ErrorKind::OutOfRange, "frame index out of range");
  return render_view(camera(cam), frame_time(frame));
}

Image SyntheticScene::render_view(const Camera& cam, double t) const {
  struct Hit {
    double s;
    double alpha;
    Eigen::Vector3d color;
  };
  std::vector<Eigen::Vector3d> centers;
  for (const Blob& b : spec_.blobs) centers.push_back(b.position(t));
  const Eigen::Vector3d origin = cam.center();
  const Eigen::Matrix3d cam_to_world = cam.rotation.transpose();

  Image img(cam.width, cam.height, spec_.background);
  std::vector<Hit> hits;
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      const Eigen::Vector3d d =
          (cam_to_world * Eigen::Vector3d((x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, 1.0)).normalized();
      hits.clear();
      for (std::size_t i = 0; i < spec_.blobs.size(); ++i) {
        const Blob& b = spec_.blobs[i];
        const Eigen::Vector3d oc = centers[i] - origin;
        const double s = oc.dot(d);
        if (s <= 0.0) continue;
        const Eigen::Vector3d closest = origin + s * d;
        const double rho2 = (closest - centers[i]).squaredNorm();
        const double sigma = 0.5 * b.radius;
        const double alpha = b.opacity * std::exp(-0.5 * rho2 / (sigma * sigma));
        if (alpha < 1e-6) continue;
        // Surface normal where the ray meets the sphere, or the silhouette normal beyond it.
        Eigen::Vector3d n;
        if (rho2 < b.radius * b.radius)
          n = (origin + (s - std::sqrt(b.radius * b.radius - rho2)) * d - centers[i]).normalized();
        else
          n = (closest - centers[i]).normalized();
        const double shade = 0.7 + 0.3 * std::max(0.0, n.dot(spec_.light));
        hits.push_back({s, alpha, b.color * shade});
      }
      std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) { return a.s > b.s; });
      Eigen::Vector3d c = spec_.background;
      for (const Hit& h : hits) c = h.alpha * h.color + (1.0 - h.alpha) * c;
      img.set_pixel(x, y, c);
    }
  return img;
}

std::vector<InitCloud> SyntheticScene::init_clouds(int keyframe_interval, int points_per_blob) const {
  if (keyframe_interval <= 0 || points_per_blob < 0)
    fail(ErrorKind::InvalidParameter, "init clouds need a positive keyframe interval");
  std::mt19937_64 rng(spec_.seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<InitCloud> clouds;
  for (int f = 0; f < spec_.frames; f += keyframe_interval) {
    InitCloud cloud;
    cloud.timestamp = frame_time(f);
    for (const Blob& b : spec_.blobs) {
      const Eigen::Vector3d c = b.position(cloud.timestamp);
      for (int i = 0; i < points_per_blob; ++i) {
        const Eigen::Vector3d dir = Eigen::Vector3d(n(rng), n(rng), n(rng)).normalized();
        const double r = 0.8 * b.radius * std::cbrt(u(rng));
        cloud.points.positions.push_back(c + r * dir);
        cloud.points.colors.push_back(b.color * (0.7 + 0.3 * std::max(0.0, dir.dot(spec_.light))));
      }
    }
    clouds.push_back(std::move(cloud));
  }
  return clouds;
}

fs::path SyntheticScene::write(const fs::path& dir, int keyframe_interval, int points_per_blob) const {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "clouds");
  SceneDescription scene;
  scene.frame_rate = spec_.frame_rate;
  scene.frames = spec_.frames;
  scene.init_clouds = fs::absolute(dir / "clouds");
  for (int c = 0; c < camera_count(); ++c) {
    SceneCamera sc;
    sc.id = "cam" + std::to_string(c);
    sc.camera = cameras_[c];
    for (int f = 0; f < spec_.frames; ++f) {
      char name[64];
      std::snprintf(name, sizeof name, "cam%d_%06d.png", c, f);
      const fs::path p = fs::absolute(dir / "images" / name);
      write_png(p, target(c, f));
      sc.images.push_back(p);
    }
    scene.cameras.push_back(std::move(sc));
  }
  for (const InitCloud& cloud : init_clouds(keyframe_interval, points_per_blob)) {
    const int frame = static_cast<int>(std::lround(cloud.timestamp * spec_.frame_rate));
    write_ply(dir / "clouds" / cloud_filename(frame), cloud.points);
  }
  const fs::path scene_path = dir / "scene.json";
  save_scene(scene, scene_path);
  return scene_path;
}

}  // namespace tgh
