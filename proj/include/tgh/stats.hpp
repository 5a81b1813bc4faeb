#pragma once

#include <cstdint>
#include <vector>

#include "tgh/hierarchy.hpp"

namespace tgh {

struct WorkingSetStats {
  std::size_t samples = 0;
  double mean_gaussians = 0.0;
  std::size_t min_gaussians = 0;
  std::size_t max_gaussians = 0;
  double mean_segments = 0.0;
  double mean_query_seconds = 0.0;
  std::size_t population = 0;
};

/// Queries `samples` timestamps drawn uniformly from [0, duration).
WorkingSetStats sample_working_sets(const Hierarchy& h, int samples, std::uint64_t seed);

/// Same Gaussians, geometry rebuilt with a different level count.
Hierarchy with_levels(const Hierarchy& h, int num_levels);

/// A hierarchy of the given duration whose Gaussians are resampled from
/// `model` with temporal means shifted uniformly over [0, duration), at
/// `density` Gaussians per second. Keeps the model's root length, levels and
/// threshold, so per-segment density matches across durations.
Hierarchy resampled_timeline(const Hierarchy& model, double duration, double density, std::uint64_t seed);

}  // namespace tgh
