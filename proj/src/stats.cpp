#include "tgh/stats.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <random>

#include "tgh/error.hpp"

namespace tgh {

WorkingSetStats sample_working_sets(const Hierarchy& h, int samples, std::uint64_t seed) {
  if (samples <= 0) fail(ErrorKind::InvalidParameter, "sample_working_sets: samples must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pick(0.0, h.geometry().duration());
  WorkingSetStats s;
  s.samples = static_cast<std::size_t>(samples);
  s.population = h.size();
  s.min_gaussians = std::numeric_limits<std::size_t>::max();
  double seconds = 0.0;
  for (int i = 0; i < samples; ++i) {
    const double t = pick(rng);
    const auto start = std::chrono::steady_clock::now();
    const WorkingSet ws = h.query(t);
    seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const std::size_t n = ws.gaussian_ids.size();
    s.mean_gaussians += static_cast<double>(n);
    s.mean_segments += static_cast<double>(ws.segment_refs.size());
    s.min_gaussians = std::min(s.min_gaussians, n);
    s.max_gaussians = std::max(s.max_gaussians, n);
  }
  s.mean_gaussians /= samples;
  s.mean_segments /= samples;
  s.mean_query_seconds = seconds / samples;
  return s;
}

Hierarchy with_levels(const Hierarchy& h, int num_levels) {
  const HierarchyGeometry& geo = h.geometry();
  Hierarchy out = Hierarchy::build(geo.duration(), geo.root_length(), num_levels, h.o_th());
  for (const GaussianId id : h.ids()) out.insert(h.get(id));
  return out;
}

Hierarchy resampled_timeline(const Hierarchy& model, double duration, double density, std::uint64_t seed) {
  if (!(density > 0.0)) fail(ErrorKind::InvalidParameter, "resampled_timeline: density must be positive");
  const std::vector<GaussianId> ids = model.ids();
  if (ids.empty()) fail(ErrorKind::InvalidParameter, "resampled_timeline: model is empty");
  const HierarchyGeometry& geo = model.geometry();
  Hierarchy out = Hierarchy::build(duration, geo.root_length(), geo.num_levels(), model.o_th());
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, ids.size() - 1);
  std::uniform_real_distribution<double> when(0.0, duration);
  const auto count = static_cast<std::size_t>(density * duration);
  for (std::size_t i = 0; i < count; ++i) {
    Gaussian4D g = model.get(ids[pick(rng)]);
    g.mean[3] = when(rng);
    out.insert(g);
  }
  return out;
}

}  // namespace tgh
