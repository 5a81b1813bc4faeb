#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <string>

#include "doctest.h"
#include "support.hpp"
#include "tgh/error.hpp"
#include "tgh/optimizer.hpp"

using namespace tgh;
using namespace tgh::test;

namespace {

class EmptySource final : public FrameSource {
 public:
  int camera_count() const override { return 0; }
  int frame_count() const override { return 0; }
  double frame_rate() const override { return 30.0; }
  const Camera& camera(int) const override { throw Error(ErrorKind::OutOfRange, "no cameras"); }
  Image target(int, int) const override { return {}; }
};

struct SmallFit {
  SyntheticScene scene{SynthSpec::two_blobs(12, 2, 32)};
  Hierarchy h = Hierarchy::build(scene.duration(), scene.duration(), 4);

  SmallFit() {
    InitConfig init;
    init.seed = 1;
    for (const Gaussian4D& g : init_gaussians(scene.init_clouds(1, 20), init)) h.insert(g);
  }
};

double mean(const std::vector<double>& v, std::size_t from, std::size_t to) {
  return std::accumulate(v.begin() + static_cast<std::ptrdiff_t>(from), v.begin() + static_cast<std::ptrdiff_t>(to),
                         0.0) /
         static_cast<double>(to - from);
}

}  // namespace

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    std::vector<double> p{1.0, -2.0, 3.0};
    const std::vector<double> g(3, 0.0);
    AdamState s(3);
    for (int i = 0; i < 5; ++i) adam_step(p, g, s, 0.1);
    CHECK(p == std::vector<double>{1.0, -2.0, 3.0});
    CHECK(s.step == 5);
  }
  SUBCASE("first step moves by lr against the gradient sign") {
    // Bias correction makes mhat / sqrt(vhat) = sign(g) on step one.
    std::vector<double> p{0.0, 0.0};
    const std::vector<double> g{3.0, -0.25};
    AdamState s(2);
    adam_step(p, g, s, 0.1);
    CHECK(p[0] == doctest::Approx(-0.1).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(0.1).epsilon(1e-12));
  }
  SUBCASE("per-parameter learning rates") {
    std::vector<double> p{0.0, 0.0};
    const std::vector<double> g{1.0, 1.0}, lr{0.1, 0.01};
    AdamState s(2);
    adam_step(p, g, s, lr);
    CHECK(p[0] == doctest::Approx(-0.1));
    CHECK(p[1] == doctest::Approx(-0.01));
  }
  SUBCASE("minimizes a quadratic") {
    std::vector<double> p{5.0};
    AdamState s(1);
    for (int i = 0; i < 2000; ++i) {
      const std::vector<double> g{2.0 * (p[0] - 1.5)};
      adam_step(p, g, s, 0.05);
    }
    CHECK(p[0] == doctest::Approx(1.5).epsilon(1e-2));
  }
  SUBCASE("size mismatch throws") {
    std::vector<double> p(3, 0.0);
    const std::vector<double> g(2, 0.0);
    AdamState s(3);
    CHECK_THROWS_AS(adam_step(p, g, s, 0.1), Error);
  }
}

TEST_CASE("train config") {
  CHECK(TrainConfig::default_iterations(1200) == 50000);
  CHECK(TrainConfig::default_iterations(60) == 2500);
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.lambda_p = 0.1;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.lambda_h = 1.5;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.grad_densify_threshold = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("adaptive control") {
  std::mt19937_64 rng(3);
  Hierarchy h = Hierarchy::build(10.0, 10.0, 5);
  TrainConfig cfg;
  const double extent = 4.0;  // clone/split cutoff 0.04

  Gaussian4D faint;
  faint.opacity = 1e-3;
  faint.mean[3] = 5.0;
  faint.scale = Eigen::Vector4d(0.01, 0.01, 0.01, 0.3);
  Gaussian4D small = faint;
  small.opacity = 0.5;
  Gaussian4D large = small;
  large.scale = Eigen::Vector4d(0.5, 0.2, 0.1, 0.3);
  large.sh_residual[0] = 0.1;
  Gaussian4D quiet = small;

  const GaussianId f = h.insert(faint), s = h.insert(small), l = h.insert(large), q = h.insert(quiet);
  DensifyStats stats;
  stats.add(f, 1.0, Eigen::Vector3d(1, 0, 0));
  stats.add(s, 1e-3, Eigen::Vector3d(1, 0, 0));
  stats.add(l, 1e-3, Eigen::Vector3d(0, 1, 0));
  stats.add(q, 1e-5, Eigen::Vector3d(0, 1, 0));

  const ControlReport r = adaptive_control(h, stats, cfg, extent, rng);
  CHECK(r.pruned == 1);
  CHECK(r.cloned == 1);
  CHECK(r.split == 1);
  CHECK(r.created.size() == 3);
  CHECK(r.population == 5);
  CHECK(r.view_dependent_delta == 1);  // one view-dependent parent became two children
  CHECK(!h.contains(f));
  CHECK(!h.contains(l));
  CHECK(h.contains(s));
  CHECK(h.get(q).mean == quiet.mean);
  CHECK(h.audit().ok());

  // The clone steps against the accumulated gradient by the parent's largest spatial scale.
  const Gaussian4D clone = h.get(r.created[0]);
  CHECK(clone.mean[0] == doctest::Approx(small.mean[0] - 0.01));
  for (std::size_t i = 1; i < 3; ++i) {
    const Gaussian4D child = h.get(r.created[i]);
    for (int k = 0; k < 4; ++k) CHECK(child.scale[k] == doctest::Approx(large.scale[k] / 1.6));
    CHECK(child.sh_residual == large.sh_residual);
  }

  SUBCASE("population cap stops growth but not pruning") {
    Hierarchy h2 = Hierarchy::build(10.0, 10.0, 5);
    const GaussianId a = h2.insert(small), b = h2.insert(faint);
    DensifyStats st;
    st.add(a, 1.0, Eigen::Vector3d(1, 0, 0));
    st.add(b, 1.0, Eigen::Vector3d(1, 0, 0));
    TrainConfig capped;
    capped.max_gaussians = 2;
    const ControlReport cr = adaptive_control(h2, st, capped, extent, rng);
    CHECK(cr.cloned == 0);
    CHECK(cr.pruned == 1);
  }
}

TEST_CASE("training") {
  SUBCASE("zero iterations leave the model untouched") {
    SmallFit fit;
    const Hierarchy before = fit.h;
    TrainConfig cfg;
    cfg.iterations = 0;
    const TrainResult r = train(fit.scene, fit.h, cfg);
    CHECK(r.metrics.empty());
    REQUIRE(fit.h.size() == before.size());
    for (const auto id : before.ids()) CHECK(fit.h.get(id).mean == before.get(id).mean);
  }

  SUBCASE("empty scene is rejected") {
    EmptySource empty;
    Hierarchy h = Hierarchy::build(1.0, 1.0, 2);
    CHECK_THROWS_AS(train(empty, h, TrainConfig{}), Error);
  }

  SUBCASE("loss falls, working-set bound and appearance invariants hold") {
    SmallFit fit;
    TrainConfig cfg;
    cfg.iterations = 600;
    cfg.densify_from = 200;
    cfg.audit = true;
    cfg.seed = 9;
    std::vector<double> losses;
    bool admitted_after_freeze = false;
    std::size_t over_bound = 0;
    const TrainResult r = train(fit.scene, fit.h, cfg, [&](const StepInfo& s) {
      losses.push_back(s.loss);
      over_bound += s.touched > s.working_set ? 1 : 0;
      admitted_after_freeze |= s.gate_frozen_before && s.admitted > 0;
    });
    REQUIRE(losses.size() == 600);
    CHECK(mean(losses, 500, 600) < 0.5 * mean(losses, 0, 100));
    CHECK(over_bound == 0);
    CHECK(r.max_touched <= r.max_working_set);
    CHECK(!admitted_after_freeze);
    CHECK(r.metrics.size() == 6);
    CHECK(r.metrics.back().iteration == 600);
    CHECK(r.control.size() == 2);  // boundaries 200 and 300; the window ends at 300
    CHECK(fit.h.audit().ok());
    std::size_t vd = 0;
    for (const auto id : fit.h.ids()) vd += is_diffuse(fit.h.get(id)) ? 0 : 1;
    std::ptrdiff_t grown = 0;
    for (const auto& c : r.control) grown += std::max<std::ptrdiff_t>(0, c.view_dependent_delta);
    CHECK(static_cast<double>(vd) <=
          std::ceil(cfg.lambda_h * static_cast<double>(fit.h.size())) + static_cast<double>(grown));
  }

  SUBCASE("runs are deterministic for a seed") {
    SmallFit a, b;
    TrainConfig cfg;
    cfg.iterations = 60;
    cfg.seed = 4;
    train(a.scene, a.h, cfg);
    train(b.scene, b.h, cfg);
    REQUIRE(a.h.size() == b.h.size());
    for (const auto id : a.h.ids()) {
      CHECK(a.h.get(id).mean == b.h.get(id).mean);
      CHECK(a.h.get(id).opacity == b.h.get(id).opacity);
    }
  }
}

TEST_CASE("metrics csv") {
  TempDir dir;
  const std::vector<IntervalMetrics> m{{100, 0.5, 20.0, 10, 7.5, 0.01}, {200, 0.25, 23.0, 12, 8.0, 0.02}};
  write_metrics_csv(dir.path / "m.csv", m);
  std::ifstream in(dir.path / "m.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "iteration,loss,psnr,num_gaussians,working_set_size,seconds_per_iter");
  CHECK(row == "100,0.5,20,10,7.5,0.01");
}
