#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "support.hpp"
#include "tgh/codec.hpp"
#include "tgh/image.hpp"
#include "tgh/loss.hpp"
#include "tgh/scene_io.hpp"

#ifndef TGH_CLI_PATH
#error "TGH_CLI_PATH must name the CLI binary"
#endif

using namespace tgh;
using namespace tgh::test;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

/// Runs the CLI inside `cwd` and captures stdout and stderr together.
Run cli(const fs::path& cwd, const std::string& args) {
  const fs::path log = cwd / "cli.log";
  const std::string cmd = "cd '" + cwd.string() + "' && '" + std::string(TGH_CLI_PATH) + "' " + args + " > '" +
                          log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.out = ss.str();
  fs::remove(log);
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t entries(const fs::path& dir) {
  return static_cast<std::size_t>(std::distance(fs::directory_iterator(dir), fs::directory_iterator()));
}

/// One small fitted model shared by the tests below.
struct Fixture {
  TempDir dir;
  Run synth, fit;
  Fixture() {
    synth = cli(dir.path, "synth --out scene --frames 12 --cameras 3 --size 24 --points-per-blob 20");
    fit = cli(dir.path, "fit --scene scene/scene.json --out m.tgh --iters 300 --levels 3 --root-seconds 1 --seed 2");
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

TEST_CASE("usage errors exit 1 and write nothing") {
  TempDir dir;
  CHECK(cli(dir.path, "").code == 1);
  CHECK(cli(dir.path, "frobnicate").code == 1);
  CHECK(cli(dir.path, "fit --scene s.json --out m.tgh --bogus 3").code == 1);
  CHECK(cli(dir.path, "fit --scene s.json").code == 1);
  CHECK(cli(dir.path, "fit --scene s.json --out m.tgh --levels 0").code == 1);
  CHECK(cli(dir.path, "fit --scene s.json --out m.tgh --lambda-p 0.01").code == 1);
  CHECK(cli(dir.path, "render --model m.tgh --camera c.json --out x.png").code == 1);
  CHECK(cli(dir.path, "render --model m.tgh --camera c.json --time 1 --times-csv t.csv --out x").code == 1);
  CHECK(cli(dir.path, "synth --out s --frames -3").code == 1);
  CHECK(entries(dir.path) == 0);
  CHECK(cli(dir.path, "--help").code == 0);
}

TEST_CASE("data errors exit 2") {
  TempDir dir;
  CHECK(cli(dir.path, "fit --scene missing.json --out m.tgh").code == 2);
  CHECK(cli(dir.path, "info --model missing.tgh").code == 2);
  std::ofstream(dir.path / "junk.tgh") << "not a model";
  CHECK(cli(dir.path, "info --model junk.tgh").code == 2);
  CHECK(cli(dir.path, "bench --model junk.tgh").code == 2);
}

TEST_CASE("fit writes a model and metrics") {
  Fixture& f = fixture();
  REQUIRE(f.synth.code == 0);
  REQUIRE(f.fit.code == 0);
  CHECK(f.fit.out.find("config fit {") != std::string::npos);
  CHECK(f.fit.out.find("\"lambda_h\":0.15") != std::string::npos);
  CHECK(fs::is_regular_file(f.dir.path / "m.tgh"));
  const std::string csv = slurp(f.dir.path / "m.metrics.csv");
  CHECK(csv.rfind("iteration,loss,psnr,num_gaussians,working_set_size,seconds_per_iter\n", 0) == 0);
  const Hierarchy h = decode(read_model(f.dir.path / "m.tgh"));
  CHECK(h.size() > 0);
  CHECK(h.audit().ok());
  CHECK(h.geometry().num_levels() == 3);
}

TEST_CASE("fit with zero iterations encodes the initialization") {
  Fixture& f = fixture();
  const Run r = cli(f.dir.path, "fit --scene scene/scene.json --out init.tgh --iters 0");
  REQUIRE(r.code == 0);
  const SceneDescription scene = load_scene(f.dir.path / "scene/scene.json");
  const auto clouds = load_init_clouds(scene.init_clouds, scene.frame_rate);
  std::size_t points = 0;
  for (const auto& c : clouds) points += c.points.positions.size();
  const Hierarchy h = decode(read_model(f.dir.path / "init.tgh"));
  CHECK(h.size() == points);
  CHECK(h.geometry().num_levels() == 9);
  CHECK(h.geometry().root_length() == 10.0);
}

TEST_CASE("full-sh resolves the appearance gate open") {
  Fixture& f = fixture();
  const Run r = cli(f.dir.path, "fit --scene scene/scene.json --out full.tgh --iters 0 --full-sh");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("\"g_th\":0.0") != std::string::npos);
  CHECK(r.out.find("\"lambda_h\":1.0") != std::string::npos);
}

TEST_CASE("render") {
  Fixture& f = fixture();
  const fs::path& d = f.dir.path;
  SUBCASE("deterministic and close to the training view") {
    REQUIRE(cli(d, "render --model m.tgh --camera scene/cameras/cam_01.json --time 0.1 --out a.png").code == 0);
    REQUIRE(cli(d, "render --model m.tgh --camera scene/cameras/cam_01.json --time 0.1 --out b.png").code == 0);
    CHECK(slurp(d / "a.png") == slurp(d / "b.png"));
    REQUIRE(cli(d, "render --model m.tgh --camera scene/cameras/cam_01.json --time 0.1 --out c.png --serial")
                .code == 0);
    CHECK(slurp(d / "a.png") == slurp(d / "c.png"));
    const SceneDescription scene = load_scene(d / "scene/scene.json");
    CHECK(psnr(read_png(d / "a.png"), read_png(scene.cameras[1].images[3])) > 25.0);
  }
  SUBCASE("out of range time") {
    CHECK(cli(d, "render --model m.tgh --camera scene/cameras/cam_00.json --time 9 --out x.png").code == 2);
    CHECK(!fs::exists(d / "x.png"));
  }
  SUBCASE("batch times") {
    std::ofstream(d / "times.csv") << "time\n0.0\n0.2\n0.3\n";
    REQUIRE(cli(d, "render --model m.tgh --camera scene/cameras/heldout.json --times-csv times.csv --out frames")
                .code == 0);
    CHECK(entries(d / "frames") == 3);
    CHECK(fs::is_regular_file(d / "frames" / "frame_000002.png"));
  }
  SUBCASE("empty model gives the background") {
    write_model(d / "empty.tgh", encode(Hierarchy::build(1.0, 1.0, 2)));
    REQUIRE(cli(d, "render --model empty.tgh --camera scene/cameras/cam_00.json --time 0.5 --out e.png "
                   "--background 0.2 0.4 0.6")
                .code == 0);
    const Image img = read_png(d / "e.png");
    const Image expect(img.width, img.height, Eigen::Vector3d(0.2, 0.4, 0.6));
    CHECK(psnr(img, expect) > 45.0);
  }
}

TEST_CASE("info reports sections that sum to the file size") {
  Fixture& f = fixture();
  const Run r = cli(f.dir.path, "info --model m.tgh");
  REQUIRE(r.code == 0);
  std::istringstream in(r.out);
  std::string line;
  std::size_t sum = 0, total = 0;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag, name;
    std::size_t value = 0;
    ls >> tag >> name >> value;
    if (tag != "bytes") continue;
    if (name == "total")
      total = value;
    else if (name != "file")
      sum += value;
  }
  CHECK(sum == fs::file_size(f.dir.path / "m.tgh"));
  CHECK(total == sum);
}

TEST_CASE("bench writes a csv and the single-level sweep covers the population") {
  Fixture& f = fixture();
  const Run r = cli(f.dir.path, "bench --model m.tgh --samples 50 --durations 20,200 --density 10 --csv b.csv");
  REQUIRE(r.code == 0);
  const std::string csv = slurp(f.dir.path / "b.csv");
  CHECK(csv.find("sweep,value,population,mean_working_set") == 0);
  std::istringstream in(csv);
  std::string line;
  bool saw_level_one = false;
  while (std::getline(in, line)) {
    if (line.rfind("levels,1,", 0) != 0) continue;
    saw_level_one = true;
    std::istringstream ls(line);
    std::string sweep, value, population, mean;
    std::getline(ls, sweep, ',');
    std::getline(ls, value, ',');
    std::getline(ls, population, ',');
    std::getline(ls, mean, ',');
    CHECK(std::stod(mean) == std::stod(population));
  }
  CHECK(saw_level_one);
}

TEST_CASE("export writes a point cloud") {
  Fixture& f = fixture();
  REQUIRE(cli(f.dir.path, "export --model m.tgh --out pts.ply").code == 0);
  const PointCloud all = read_ply(f.dir.path / "pts.ply");
  CHECK(all.positions.size() == decode(read_model(f.dir.path / "m.tgh")).size());
  REQUIRE(cli(f.dir.path, "export --model m.tgh --out slice.ply --time 0.2").code == 0);
  CHECK(read_ply(f.dir.path / "slice.ply").positions.size() <= all.positions.size());
}
