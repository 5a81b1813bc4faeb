#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <unordered_map>
#include <vector>

#include "tgh/appearance.hpp"
#include "tgh/hierarchy.hpp"
#include "tgh/loss.hpp"
#include "tgh/renderer.hpp"
#include "tgh/scene_io.hpp"

namespace tgh {

struct TrainConfig {
  int iterations = 5000;
  std::uint64_t seed = 0;

  // Learning rates: positions use lr_position scaled by the scene extent; other
  // groups are multiples of lr_position. Scales are optimized in log space and
  // opacity in logit space.
  double lr_position = 1.6e-4;
  double lr_time_mult = 1.0;  // temporal mean, in seconds
  double lr_scale_mult = 5.0;
  double lr_rotor_mult = 5.0;
  double lr_opacity_mult = 25.0;
  double lr_color_mult = 12.5;  // base color and residual SH
  double scene_extent = 0.0;    // <= 0 derives it from the camera rig

  LossWeights weights{0.8, 0.2};
  double lambda_p = 0.0;  // perceptual weight; no perceptual branch exists, must stay 0

  int densify_interval = 100;
  int densify_from = 500;
  int densify_until = -1;  // < 0: half of the iterations
  double grad_densify_threshold = 2e-4;  // mean view-space (NDC) positional gradient
  double prune_opacity_threshold = 5e-3;
  double split_divisor = 1.6;
  double percent_dense = 0.01;  // clone/split cutoff as a fraction of the scene extent
  std::size_t max_gaussians = 0;  // absolute population cap; 0 defers to max_growth
  double max_growth = 2.0;        // cap as a multiple of the starting population; 0: unbounded

  double o_th = 0.05;
  double g_th = 1e-6;
  double lambda_h = 0.15;

  bool audit = false;  // run the full hierarchy audit after every interval (O(N))
  RenderOptions render;

  /// Iteration count scaled linearly from 50000 per 1200 frames.
  static int default_iterations(int frames);
  /// Throws InvalidParameter on non-positive thresholds or negative weights.
  void validate() const;
};

/// Bias-corrected Adam over a flat parameter block.
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-15;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr);
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               std::span<const double> lr);

/// Accumulated since the last adaptive_control call, keyed by Gaussian id.
struct DensifyStats {
  struct Entry {
    double grad_norm_sum = 0.0;                                 // NDC units
    Eigen::Vector3d mean_grad_sum = Eigen::Vector3d::Zero();  // dL/d(spatial mean)
    std::uint32_t count = 0;
  };
  std::unordered_map<std::uint32_t, Entry> entries;

  void add(GaussianId id, double ndc_grad_norm, const Eigen::Vector3d& mean_grad);
  void clear() { entries.clear(); }
};

struct ControlReport {
  std::size_t pruned = 0;
  std::size_t cloned = 0;
  std::size_t split = 0;
  std::size_t population = 0;
  std::ptrdiff_t view_dependent_delta = 0;
  std::vector<GaussianId> created;
};

/// Prunes, clones and splits Gaussians seen in stats. New Gaussians keep the
/// parent's residual SH. Only Gaussians in stats are examined.
ControlReport adaptive_control(Hierarchy& h, const DensifyStats& stats, const TrainConfig& cfg, double scene_extent,
                               std::mt19937_64& rng);

struct IntervalMetrics {
  int iteration = 0;
  double loss = 0.0;
  double psnr = 0.0;
  std::size_t num_gaussians = 0;
  double working_set_size = 0.0;
  double seconds_per_iter = 0.0;
};

struct StepInfo {
  int iteration = 0;
  double loss = 0.0;
  std::size_t working_set = 0;
  std::size_t touched = 0;
  std::size_t admitted = 0;     // Gaussians that became view-dependent this step
  bool gate_frozen_before = false;
};

struct TrainResult {
  std::vector<IntervalMetrics> metrics;
  std::vector<ControlReport> control;
  AppearanceGate gate;
  std::size_t max_working_set = 0;
  std::size_t max_touched = 0;
  double seconds = 0.0;
};

/// Scene extent as in common splatting practice: 1.1 x the largest camera
/// distance from the rig centroid.
double camera_extent(const FrameSource& scene);

/// Trains h in place. Each step touches only the working set at the sampled time.
TrainResult train(const FrameSource& scene, Hierarchy& h, const TrainConfig& cfg,
                  const std::function<void(const StepInfo&)>& on_step = {});

void write_metrics_csv(const std::filesystem::path& path, std::span<const IntervalMetrics> metrics);

}  // namespace tgh
