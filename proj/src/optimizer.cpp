#include "tgh/optimizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include "tgh/error.hpp"

namespace tgh {

int TrainConfig::default_iterations(int frames) {
  return static_cast<int>(std::llround(50000.0 * frames / 1200.0));
}

void TrainConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0)) fail(ErrorKind::InvalidParameter, std::string("train config: ") + name + " must be positive");
  };
  if (iterations < 0) fail(ErrorKind::InvalidParameter, "train config: iterations must be >= 0");
  positive(lr_position, "lr_position");
  positive(densify_interval, "densify_interval");
  positive(grad_densify_threshold, "grad_densify_threshold");
  positive(prune_opacity_threshold, "prune_opacity_threshold");
  positive(split_divisor, "split_divisor");
  positive(percent_dense, "percent_dense");
  if (!(max_growth >= 0.0)) fail(ErrorKind::InvalidParameter, "train config: max_growth must be >= 0");
  if (!(o_th > 0.0 && o_th < 1.0)) fail(ErrorKind::InvalidParameter, "train config: o_th must lie in (0, 1)");
  if (!(g_th >= 0.0)) fail(ErrorKind::InvalidParameter, "train config: g_th must be >= 0");
  if (!(lambda_h >= 0.0 && lambda_h <= 1.0)) fail(ErrorKind::InvalidParameter, "train config: lambda_h must lie in [0, 1]");
  if (weights.mse < 0.0 || weights.ssim < 0.0 || lambda_p < 0.0)
    fail(ErrorKind::InvalidParameter, "train config: loss weights must be >= 0");
  if (lambda_p != 0.0) fail(ErrorKind::InvalidParameter, "train config: perceptual loss is not available, lambda_p must be 0");
}

namespace {

template <class Lr>
void adam_core(std::span<double> params, std::span<const double> grads, std::span<double> m, std::span<double> v,
               std::uint64_t step, double beta1, double beta2, double eps, const Lr& lr) {
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grads[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grads[i] * grads[i];
    const double mhat = m[i] / c1;
    const double vhat = v[i] / c2;
    params[i] -= lr(i) * mhat / (std::sqrt(vhat) + eps);
  }
}

void check_adam_shapes(std::size_t params, std::size_t grads, const AdamState& s) {
  if (params != grads || s.m.size() != params || s.v.size() != params)
    fail(ErrorKind::InvalidParameter, "adam_step: parameter, gradient and moment sizes differ");
}

}  // namespace

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr) {
  check_adam_shapes(params.size(), grads.size(), state);
  ++state.step;
  adam_core(params, grads, state.m, state.v, state.step, state.beta1, state.beta2, state.eps,
            [lr](std::size_t) { return lr; });
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               std::span<const double> lr) {
  check_adam_shapes(params.size(), grads.size(), state);
  if (lr.size() != params.size()) fail(ErrorKind::InvalidParameter, "adam_step: learning-rate size differs");
  ++state.step;
  adam_core(params, grads, state.m, state.v, state.step, state.beta1, state.beta2, state.eps,
            [lr](std::size_t i) { return lr[i]; });
}

void DensifyStats::add(GaussianId id, double ndc_grad_norm, const Eigen::Vector3d& mean_grad) {
  Entry& e = entries[index_of(id)];
  e.grad_norm_sum += ndc_grad_norm;
  e.mean_grad_sum += mean_grad;
  ++e.count;
}

ControlReport adaptive_control(Hierarchy& h, const DensifyStats& stats, const TrainConfig& cfg, double scene_extent,
                               std::mt19937_64& rng) {
  ControlReport report;
  std::vector<std::uint32_t> keys;
  keys.reserve(stats.entries.size());
  for (const auto& [k, e] : stats.entries) keys.push_back(k);
  std::sort(keys.begin(), keys.end());

  std::normal_distribution<double> normal(0.0, 1.0);
  const double size_cutoff = cfg.percent_dense * scene_extent;
  auto room = [&] { return cfg.max_gaussians == 0 || h.size() < cfg.max_gaussians; };

  for (std::uint32_t key : keys) {
    const GaussianId id{key};
    if (!h.contains(id)) continue;
    const Gaussian4D g = h.get(id);
    const bool vd = !is_diffuse(g);
    if (g.opacity < cfg.prune_opacity_threshold) {
      h.remove(id);
      ++report.pruned;
      report.view_dependent_delta -= vd ? 1 : 0;
      continue;
    }
    const DensifyStats::Entry& e = stats.entries.at(key);
    if (e.count == 0 || e.grad_norm_sum / e.count < cfg.grad_densify_threshold || !room()) continue;

    const Eigen::Vector4d s = g.scale.cwiseMax(Eigen::Vector4d(kMinSpatialScale, kMinSpatialScale, kMinSpatialScale,
                                                                kMinTemporalScale));
    if (s.head<3>().maxCoeff() <= size_cutoff) {
      // Clone: the copy steps against the accumulated positional gradient.
      Gaussian4D c = g;
      const double n = e.mean_grad_sum.norm();
      if (n > 0.0) c.mean.head<3>() -= s.head<3>().maxCoeff() * e.mean_grad_sum / n;
      report.created.push_back(h.insert(c));
      ++report.cloned;
      report.view_dependent_delta += vd ? 1 : 0;
    } else {
      // Split: two children sampled from the parent's 4D density.
      const Eigen::Matrix4d r = rotation_4d(g.rotor_left, g.rotor_right);
      for (int child = 0; child < 2; ++child) {
        Gaussian4D c = g;
        const Eigen::Vector4d z(normal(rng), normal(rng), normal(rng), normal(rng));
        c.mean = g.mean + r * s.cwiseProduct(z);
        c.scale = s / cfg.split_divisor;
        report.created.push_back(h.insert(c));
      }
      h.remove(id);
      ++report.split;
      report.view_dependent_delta += vd ? 1 : 0;
    }
  }
  report.population = h.size();
  return report;
}

double camera_extent(const FrameSource& scene) {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (int c = 0; c < scene.camera_count(); ++c) mean += scene.camera(c).center();
  mean /= scene.camera_count();
  double radius = 0.0;
  for (int c = 0; c < scene.camera_count(); ++c) radius = std::max(radius, (scene.camera(c).center() - mean).norm());
  return 1.1 * std::max(radius, 1e-6);
}

namespace {

struct Moments {
  ParamVector m{};
  ParamVector v{};
  std::uint64_t step = 0;
};

constexpr double kOpacityEps = 1e-6;

double logit(double p) {
  p = std::clamp(p, kOpacityEps, 1.0 - kOpacityEps);
  return std::log(p / (1.0 - p));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Optimizer-space parameters: log scales, logit opacity, everything else direct.
ParamVector to_internal(const Gaussian4D& g) {
  ParamVector p = flatten(g);
  for (int k = 0; k < 4; ++k) p[param::kScale + k] = std::log(std::max(g.scale[k], 1e-12));
  p[param::kOpacity] = logit(g.opacity);
  return p;
}

ParamVector gradient_to_internal(const Gaussian4D& g, const GaussianGradient& grad) {
  ParamVector d = flatten(grad);
  for (int k = 0; k < 4; ++k) d[param::kScale + k] *= g.scale[k];
  const double o = std::clamp(g.opacity, kOpacityEps, 1.0 - kOpacityEps);
  d[param::kOpacity] *= o * (1.0 - o);
  return d;
}

Gaussian4D from_internal(const ParamVector& p) {
  Gaussian4D g;
  unflatten(p, g);
  for (int k = 0; k < 4; ++k) g.scale[k] = std::exp(p[param::kScale + k]);
  g.opacity = sigmoid(p[param::kOpacity]);
  const double nl = g.rotor_left.norm(), nr = g.rotor_right.norm();
  g.rotor_left = nl > 0.0 ? Eigen::Vector4d(g.rotor_left / nl) : Eigen::Vector4d(1, 0, 0, 0);
  g.rotor_right = nr > 0.0 ? Eigen::Vector4d(g.rotor_right / nr) : Eigen::Vector4d(1, 0, 0, 0);
  g.base_color = g.base_color.cwiseMax(0.0).cwiseMin(1.0);
  return g;
}

ParamVector learning_rates(const TrainConfig& cfg, double extent) {
  ParamVector lr{};
  const double base = cfg.lr_position;
  for (int k = 0; k < 3; ++k) lr[param::kMean + k] = base * extent;
  lr[param::kMean + 3] = base * cfg.lr_time_mult;
  for (int k = 0; k < 4; ++k) lr[param::kScale + k] = base * cfg.lr_scale_mult;
  for (int k = 0; k < 4; ++k) {
    lr[param::kRotorLeft + k] = base * cfg.lr_rotor_mult;
    lr[param::kRotorRight + k] = base * cfg.lr_rotor_mult;
  }
  lr[param::kOpacity] = base * cfg.lr_opacity_mult;
  for (int k = param::kBaseColor; k < kParamCount; ++k) lr[k] = base * cfg.lr_color_mult;
  return lr;
}

std::size_t count_view_dependent(const Hierarchy& h) {
  std::size_t n = 0;
  for (GaussianId id : h.ids()) n += is_diffuse(h.get(id)) ? 0 : 1;
  return n;
}

}  // namespace

TrainResult train(const FrameSource& scene, Hierarchy& h, const TrainConfig& cfg,
                  const std::function<void(const StepInfo&)>& on_step) {
  cfg.validate();
  if (scene.camera_count() <= 0 || scene.frame_count() <= 0)
    fail(ErrorKind::InvalidParameter, "train: scene has no views or frames");

  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  const double extent = cfg.scene_extent > 0.0 ? cfg.scene_extent : camera_extent(scene);
  const ParamVector lr = learning_rates(cfg, extent);
  const int densify_until = cfg.densify_until >= 0 ? cfg.densify_until : cfg.iterations / 2;
  TrainConfig control_cfg = cfg;
  if (control_cfg.max_gaussians == 0 && cfg.max_growth > 0.0)
    control_cfg.max_gaussians =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(cfg.max_growth * static_cast<double>(h.size()))));

  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<int> pick_camera(0, scene.camera_count() - 1);
  std::uniform_int_distribution<int> pick_frame(0, scene.frame_count() - 1);

  AppearanceController appearance(AppearanceGate{cfg.g_th, cfg.lambda_h, false});
  std::size_t view_dependent = count_view_dependent(h);
  appearance.recount(view_dependent, h.size());

  std::vector<Moments> moments;  // indexed by id; ids are never reused
  DensifyStats stats;
  TrainResult result;

  double interval_loss = 0.0, interval_psnr = 0.0, interval_ws = 0.0;
  int interval_steps = 0;
  auto interval_start = Clock::now();
  RenderOptions opts = cfg.render;
  opts.o_th = cfg.o_th;

  std::vector<GaussianId> update_ids;
  std::vector<Gaussian4D> update_values;
  for (int it = 0; it < cfg.iterations; ++it) {
    const int cam_index = pick_camera(rng);
    const int frame = pick_frame(rng);
    const double t = scene.frame_time(frame);
    const Camera& cam = scene.camera(cam_index);
    const Image target = scene.target(cam_index, frame);

    HierarchyGradients hg = render_with_gradients(h, t, cam, target, cfg.weights, opts);
    const MaterializedSet& ws = hg.working_set;
    GradientResult& res = hg.result;

    StepInfo info;
    info.iteration = it;
    info.loss = res.loss;
    info.working_set = ws.ids.size();
    info.gate_frozen_before = appearance.gate().frozen;
    info.admitted = appearance.apply(ws.gaussians, res.gradients);

    update_ids.clear();
    update_values.clear();
    for (std::size_t i = 0; i < ws.ids.size(); ++i) {
      if (!res.visible[i]) continue;
      const GaussianId id = ws.ids[i];
      const Gaussian4D& g = ws.gaussians[i];
      if (moments.size() <= index_of(id)) moments.resize(index_of(id) + 1);
      Moments& mo = moments[index_of(id)];
      ParamVector p = to_internal(g);
      const ParamVector d = gradient_to_internal(g, res.gradients[i]);
      ++mo.step;
      adam_core(p, d, mo.m, mo.v, mo.step, 0.9, 0.999, 1e-15, [&lr](std::size_t k) { return lr[k]; });
      update_ids.push_back(id);
      update_values.push_back(from_internal(p));

      const Eigen::Vector2d ndc(res.screen_gradients[i].x() * 0.5 * cam.width,
                                res.screen_gradients[i].y() * 0.5 * cam.height);
      stats.add(id, ndc.norm(), res.gradients[i].mean.head<3>());
    }
    h.set_many(update_ids, update_values);
    info.touched = update_ids.size();
    result.max_working_set = std::max(result.max_working_set, info.working_set);
    result.max_touched = std::max(result.max_touched, info.touched);
    if (info.touched > info.working_set) fail(ErrorKind::Integrity, "train: touched more than the working set");
    if (on_step) on_step(info);

    interval_loss += res.loss;
    interval_psnr += -10.0 * std::log10(std::max(res.mse, 1e-20));
    interval_ws += static_cast<double>(info.working_set);
    ++interval_steps;

    const bool boundary = (it + 1) % cfg.densify_interval == 0;
    if (boundary) {
      if (it + 1 >= cfg.densify_from && it + 1 <= densify_until) {
        ControlReport report = adaptive_control(h, stats, control_cfg, extent, rng);
        view_dependent = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(appearance.view_dependent()) +
                                                  report.view_dependent_delta);
        appearance.recount(view_dependent, h.size());
        report.created.clear();
        report.created.shrink_to_fit();
        result.control.push_back(std::move(report));
      } else {
        appearance.recount(appearance.view_dependent(), h.size());
      }
      stats.clear();
      if (cfg.audit) {
        const AuditReport audit = h.audit();
        if (!audit.ok()) fail(ErrorKind::Integrity, "train: hierarchy audit failed: " + audit.problems.front());
      }
    }
    if (boundary || it + 1 == cfg.iterations) {
      const double secs = std::chrono::duration<double>(Clock::now() - interval_start).count();
      result.metrics.push_back({it + 1, interval_loss / interval_steps, interval_psnr / interval_steps, h.size(),
                                interval_ws / interval_steps, secs / interval_steps});
      interval_loss = interval_psnr = interval_ws = 0.0;
      interval_steps = 0;
      interval_start = Clock::now();
    }
  }
  result.gate = appearance.gate();
  result.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return result;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const IntervalMetrics> metrics) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::NotFound, "cannot write metrics file " + path.string());
  out << "iteration,loss,psnr,num_gaussians,working_set_size,seconds_per_iter\n";
  out.precision(10);
  for (const auto& m : metrics)
    out << m.iteration << ',' << m.loss << ',' << m.psnr << ',' << m.num_gaussians << ',' << m.working_set_size << ','
        << m.seconds_per_iter << '\n';
}

}  // namespace tgh
