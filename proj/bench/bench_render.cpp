// Serial reference compositor against the tiled OpenMP one, plus a full
// forward/backward step on a random scene.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "tgh/renderer.hpp"

namespace {

using namespace tgh;

std::vector<Splat2D> random_splats(int count, int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(0.0, size), var(1.0, 30.0), unit(0.0, 1.0);
  std::vector<Splat2D> splats(count);
  for (int i = 0; i < count; ++i) {
    Splat2D& s = splats[i];
    s.center = Eigen::Vector2d(pos(rng), pos(rng));
    const double a = var(rng), b = var(rng), c = 0.5 * std::sqrt(a * b) * (2.0 * unit(rng) - 1.0);
    s.cov2 << a, c, c, b;
    s.depth = 1.0 + 10.0 * unit(rng);
    s.color = Eigen::Vector3d(unit(rng), unit(rng), unit(rng));
    s.alpha = 0.2 + 0.7 * unit(rng);
    s.key = static_cast<std::uint32_t>(i);
  }
  std::vector<Splat2D> ordered;
  for (const std::uint32_t i : depth_sort(splats)) ordered.push_back(splats[i]);
  return ordered;
}

void composite_bench(benchmark::State& state, bool parallel) {
  const int size = 256;
  const auto splats = random_splats(static_cast<int>(state.range(0)), size, 7);
  RenderOptions opts;
  for (auto _ : state) {
    Framebuffer fb = parallel ? composite_tiled(splats, size, size, opts) : composite_serial(splats, size, size, opts);
    benchmark::DoNotOptimize(fb.color.data.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_CompositeSerial(benchmark::State& state) { composite_bench(state, false); }
void BM_CompositeTiled(benchmark::State& state) { composite_bench(state, true); }
BENCHMARK(BM_CompositeSerial)->Arg(500)->Arg(5000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CompositeTiled)->Arg(500)->Arg(5000)->Unit(benchmark::kMillisecond);

void BM_ForwardBackward(benchmark::State& state) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0), s(0.05, 0.2);
  std::vector<Gaussian4D> gs(static_cast<std::size_t>(state.range(0)));
  std::vector<std::uint32_t> keys(gs.size());
  for (std::size_t i = 0; i < gs.size(); ++i) {
    gs[i].mean = Eigen::Vector4d(u(rng), u(rng), u(rng), 0.0);
    gs[i].scale = Eigen::Vector4d(s(rng), s(rng), s(rng), 1.0);
    gs[i].opacity = 0.5;
    keys[i] = static_cast<std::uint32_t>(i);
  }
  const Camera cam = look_at(Eigen::Vector3d(0, 0, -4), Eigen::Vector3d::Zero(), Eigen::Vector3d(0, 1, 0), 80.0, 128, 128);
  const Image target(128, 128, Eigen::Vector3d(0.3, 0.3, 0.3));
  RenderOptions opts;
  opts.parallel = state.range(1) != 0;
  for (auto _ : state) {
    GradientResult r = render_with_gradients(gs, keys, 0.0, cam, target, LossWeights{}, opts);
    benchmark::DoNotOptimize(r.loss);
  }
}
BENCHMARK(BM_ForwardBackward)->Args({1000, 0})->Args({1000, 1})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
