// Command-line front end: fit, render, info, bench, synth, export.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 internal failure. Usage
// errors are detected while parsing, before any file is read or written.

#include <omp.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tgh/codec.hpp"
#include "tgh/error.hpp"
#include "tgh/optimizer.hpp"
#include "tgh/renderer.hpp"
#include "tgh/scene_io.hpp"
#include "tgh/stats.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tgh;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitInternal = 3;

/// Failure of the pipeline itself rather than of its inputs.
struct InternalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <class F>
auto internal(const char* stage, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Integrity) throw InternalError(std::string(stage) + ": " + e.what());
    throw;
  }
}

void log_config(const std::string& command, const json& cfg) {
  std::cout << "config " << command << ' ' << cfg.dump() << '\n';
}

json vec_json(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }

// ---------------------------------------------------------------- fit

struct FitArgs {
  std::string scene;
  std::string out;
  std::string metrics;
  int levels = 9;
  double root_seconds = 10.0;
  int iters = -1;
  std::uint64_t seed = 0;
  double o_th = 0.05;
  double g_th = 1e-6;
  double lambda_h = 0.15;
  bool full_sh = false;
  double lr = 1.6e-4;
  double lambda_m = 0.8;
  double lambda_s = 0.2;
  double lambda_p = 0.0;
  int densify_interval = 100;
  int densify_from = 500;
  int densify_until = -1;
  double grad_threshold = 2e-4;
  double prune_threshold = 5e-3;
  double max_growth = 2.0;
  int knn = 3;
  double init_opacity = 0.1;
  std::size_t max_points = 0;
  bool audit = false;
};

fs::path metrics_path(const FitArgs& a) {
  if (!a.metrics.empty()) return a.metrics;
  fs::path p = a.out;
  return p.replace_extension(".metrics.csv");
}

void require_writable_parent(const fs::path& path) {
  const fs::path parent = fs::absolute(path).parent_path();
  if (!fs::is_directory(parent)) fail(ErrorKind::NotFound, "output directory does not exist: " + parent.string());
}

int cmd_fit(const FitArgs& a) {
  TrainConfig cfg;
  cfg.seed = a.seed;
  cfg.o_th = a.o_th;
  cfg.g_th = a.full_sh ? 0.0 : a.g_th;
  cfg.lambda_h = a.full_sh ? 1.0 : a.lambda_h;
  cfg.lr_position = a.lr;
  cfg.weights = {a.lambda_m, a.lambda_s};
  cfg.lambda_p = a.lambda_p;
  cfg.densify_interval = a.densify_interval;
  cfg.densify_from = a.densify_from;
  cfg.densify_until = a.densify_until;
  cfg.grad_densify_threshold = a.grad_threshold;
  cfg.prune_opacity_threshold = a.prune_threshold;
  cfg.max_growth = a.max_growth;
  cfg.audit = a.audit;

  const SceneDescription desc = load_scene(a.scene);
  cfg.iterations = a.iters >= 0 ? a.iters : TrainConfig::default_iterations(desc.frames);
  require_writable_parent(a.out);
  require_writable_parent(metrics_path(a));

  InitConfig init;
  init.k = a.knn;
  init.opacity = a.init_opacity;
  init.o_th = a.o_th;
  init.max_points = a.max_points;
  init.seed = a.seed;

  log_config("fit", {{"scene", fs::absolute(a.scene).string()},
                     {"out", a.out},
                     {"metrics", metrics_path(a).string()},
                     {"levels", a.levels},
                     {"root_seconds", a.root_seconds},
                     {"duration", desc.duration()},
                     {"frames", desc.frames},
                     {"cameras", desc.cameras.size()},
                     {"iterations", cfg.iterations},
                     {"seed", cfg.seed},
                     {"o_th", cfg.o_th},
                     {"g_th", cfg.g_th},
                     {"lambda_h", cfg.lambda_h},
                     {"lr", cfg.lr_position},
                     {"lambda_m", cfg.weights.mse},
                     {"lambda_s", cfg.weights.ssim},
                     {"lambda_p", cfg.lambda_p},
                     {"densify_interval", cfg.densify_interval},
                     {"densify_from", cfg.densify_from},
                     {"densify_until", cfg.densify_until},
                     {"grad_threshold", cfg.grad_densify_threshold},
                     {"prune_threshold", cfg.prune_opacity_threshold},
                     {"max_growth", cfg.max_growth},
                     {"knn", init.k},
                     {"init_opacity", init.opacity},
                     {"max_points", init.max_points},
                     {"audit", cfg.audit},
                     {"threads", omp_get_max_threads()}});

  const std::vector<InitCloud> clouds = load_init_clouds(desc.init_clouds, desc.frame_rate);
  const std::vector<Gaussian4D> initial = init_gaussians(clouds, init);
  Hierarchy h = Hierarchy::build(desc.duration(), a.root_seconds, a.levels, a.o_th);
  for (const Gaussian4D& g : initial) h.insert(g);
  std::cout << "init gaussians=" << h.size() << " clouds=" << clouds.size() << '\n';

  const DiskScene scene(desc);
  const TrainResult result = internal("train", [&] {
    return train(scene, h, cfg);
  });
  for (const IntervalMetrics& m : result.metrics)
    std::cout << "iter " << m.iteration << " loss " << m.loss << " psnr " << m.psnr << " gaussians " << m.num_gaussians
              << " working_set " << m.working_set_size << " s/iter " << m.seconds_per_iter << '\n';

  const std::vector<std::uint8_t> bytes = internal("encode", [&] { return encode(h); });
  write_model(a.out, bytes);
  write_metrics_csv(metrics_path(a), result.metrics);

  const SizeReport sizes = size_report(bytes);
  const double final_psnr = result.metrics.empty() ? 0.0 : result.metrics.back().psnr;
  std::cout << "final gaussians=" << h.size() << " psnr=" << final_psnr << " max_working_set=" << result.max_working_set
            << " gate_frozen=" << result.gate.frozen << " bytes=" << sizes.total() << " seconds=" << result.seconds
            << '\n';
  return 0;
}

// ---------------------------------------------------------------- render

struct RenderArgs {
  std::string model;
  std::string camera;
  double time = 0.0;
  std::string times_csv;
  std::string out;
  std::vector<double> background{0.0, 0.0, 0.0};
  int tile_size = 16;
  bool serial = false;
};

std::vector<double> read_times(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::NotFound, "cannot open times file " + path.string());
  std::vector<double> times;
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    std::string cell = line.substr(first, line.find_first_of(",\r", first) - first);
    if (row == 1 && cell == "time") continue;
    std::size_t used = 0;
    double t = 0.0;
    try {
      t = std::stod(cell, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0) fail(ErrorKind::Parse, path.string() + ":" + std::to_string(row) + ": expected a time in seconds");
    times.push_back(t);
  }
  return times;
}

int cmd_render(const RenderArgs& a) {
  log_config("render", {{"model", a.model},
                        {"camera", a.camera},
                        {"time", a.times_csv.empty() ? json(a.time) : json(nullptr)},
                        {"times_csv", a.times_csv},
                        {"out", a.out},
                        {"background", a.background},
                        {"tile_size", a.tile_size},
                        {"serial", a.serial},
                        {"threads", omp_get_max_threads()}});
  const Hierarchy h = decode(read_model(a.model));
  const Camera cam = load_camera(a.camera);
  RenderOptions opts;
  opts.background = Eigen::Vector3d(a.background[0], a.background[1], a.background[2]);
  opts.o_th = h.o_th();
  opts.tile_size = a.tile_size;
  opts.parallel = !a.serial;

  const double duration = h.geometry().duration();
  auto check_time = [&](double t) {
    if (!(t >= 0.0 && t <= duration))
      fail(ErrorKind::OutOfRange, "time " + std::to_string(t) + " is outside [0, " + std::to_string(duration) + "]");
  };

  if (a.times_csv.empty()) {
    check_time(a.time);
    require_writable_parent(a.out);
    write_png(a.out, render(h, a.time, cam, opts).color);
    std::cout << "wrote " << a.out << '\n';
    return 0;
  }
  const std::vector<double> times = read_times(a.times_csv);
  for (const double t : times) check_time(t);
  fs::create_directories(a.out);
  char name[32];
  for (std::size_t i = 0; i < times.size(); ++i) {
    std::snprintf(name, sizeof(name), "frame_%06zu.png", i);
    write_png(fs::path(a.out) / name, render(h, times[i], cam, opts).color);
  }
  std::cout << "wrote " << times.size() << " frames to " << a.out << '\n';
  return 0;
}

// ---------------------------------------------------------------- info

int cmd_info(const std::string& model) {
  log_config("info", {{"model", model}});
  const std::vector<std::uint8_t> bytes = read_model(model);
  const ModelHeader hdr = read_header(bytes);
  const Hierarchy h = decode(bytes);
  const SizeReport s = size_report(bytes);
  const Occupancy occ = h.occupancy();

  std::cout << "version " << hdr.version << '\n'
            << "duration " << hdr.duration << '\n'
            << "root_length " << hdr.root_length << '\n'
            << "levels " << hdr.num_levels << '\n'
            << "o_th " << hdr.o_th << '\n'
            << "gaussians " << hdr.gaussian_count << '\n'
            << "view_dependent " << hdr.view_dependent_count << '\n'
            << "segments " << hdr.directory_entries << '\n';
  for (std::size_t l = 0; l < occ.per_level.size(); ++l) std::cout << "level " << l << ' ' << occ.per_level[l] << '\n';
  std::cout << "level global " << occ.global << '\n'
            << "bytes header " << s.header << '\n'
            << "bytes directory " << s.directory << '\n'
            << "bytes geometry " << s.geometry << '\n'
            << "bytes appearance_table " << s.appearance_table << '\n'
            << "bytes appearance_stream " << s.appearance_stream << '\n'
            << "bytes checksum " << s.checksum << '\n'
            << "bytes total " << s.total() << '\n'
            << "bytes file " << bytes.size() << '\n'
            << "appearance_ratio " << (s.raw_appearance ? double(s.appearance()) / double(s.raw_appearance) : 0.0)
            << '\n';
  return 0;
}

// ---------------------------------------------------------------- bench

struct BenchArgs {
  std::string model;
  int samples = 1000;
  std::vector<double> durations{40.0, 400.0, 4000.0};
  std::vector<int> levels{1, 3, 6, 9};
  double density = 50.0;
  std::uint64_t seed = 0;
  std::string csv;
};

int cmd_bench(const BenchArgs& a) {
  log_config("bench", {{"model", a.model},
                       {"samples", a.samples},
                       {"durations", a.durations},
                       {"levels", a.levels},
                       {"density", a.density},
                       {"seed", a.seed},
                       {"csv", a.csv}});
  const Hierarchy h = decode(read_model(a.model));
  if (!a.csv.empty()) require_writable_parent(a.csv);

  std::ostringstream rows;
  rows << "sweep,value,population,mean_working_set,min_working_set,max_working_set,mean_segments,mean_query_us\n";
  auto emit = [&](const char* sweep, double value, const WorkingSetStats& s) {
    rows << sweep << ',' << value << ',' << s.population << ',' << s.mean_gaussians << ',' << s.min_gaussians << ','
         << s.max_gaussians << ',' << s.mean_segments << ',' << s.mean_query_seconds * 1e6 << '\n';
    std::cout << sweep << ' ' << value << " population " << s.population << " working_set mean " << s.mean_gaussians
              << " min " << s.min_gaussians << " max " << s.max_gaussians << " segments " << s.mean_segments
              << " query_us " << s.mean_query_seconds * 1e6 << '\n';
  };

  emit("model", h.geometry().num_levels(), sample_working_sets(h, a.samples, a.seed));
  for (const int l : a.levels) emit("levels", l, sample_working_sets(with_levels(h, l), a.samples, a.seed));
  if (h.size() > 0)
    for (const double d : a.durations)
      emit("duration", d, sample_working_sets(resampled_timeline(h, d, a.density, a.seed), a.samples, a.seed));

  if (!a.csv.empty()) {
    std::ofstream out(a.csv);
    if (!out) fail(ErrorKind::NotFound, "cannot write " + a.csv);
    out << rows.str();
  }
  return 0;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  std::string out;
  int frames = 60;
  int cameras = 4;
  int size = 64;
  double fps = 30.0;
  int keyframe_interval = 1;
  int points_per_blob = 30;
  double heldout_angle = std::numbers::pi / 4.0;
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a) {
  log_config("synth", {{"out", a.out},
                       {"frames", a.frames},
                       {"cameras", a.cameras},
                       {"size", a.size},
                       {"fps", a.fps},
                       {"keyframe_interval", a.keyframe_interval},
                       {"points_per_blob", a.points_per_blob},
                       {"heldout_angle", a.heldout_angle},
                       {"seed", a.seed}});
  SynthSpec spec = SynthSpec::two_blobs(a.frames, a.cameras, a.size);
  spec.frame_rate = a.fps;
  spec.seed = a.seed;
  const SyntheticScene scene(spec);
  const fs::path dir = a.out;
  const fs::path scene_file = scene.write(dir, a.keyframe_interval, a.points_per_blob);

  fs::create_directories(dir / "cameras");
  char name[32];
  for (int c = 0; c < scene.camera_count(); ++c) {
    std::snprintf(name, sizeof(name), "cam_%02d.json", c);
    std::ofstream(dir / "cameras" / name) << camera_to_json(scene.camera(c));
  }
  const Camera held = scene.camera_at_angle(a.heldout_angle);
  std::ofstream(dir / "cameras" / "heldout.json") << camera_to_json(held);
  fs::create_directories(dir / "heldout");
  for (int f = 0; f < scene.frame_count(); ++f) {
    std::snprintf(name, sizeof(name), "frame_%06d.png", f);
    write_png(dir / "heldout" / name, scene.render_view(held, scene.frame_time(f)));
  }
  std::cout << "wrote " << scene_file.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------- export

int cmd_export(const std::string& model, const std::string& out, double time, bool at_time) {
  log_config("export", {{"model", model}, {"out", out}, {"time", at_time ? json(time) : json(nullptr)}});
  const Hierarchy h = decode(read_model(model));
  require_writable_parent(out);
  std::vector<GaussianId> ids = at_time ? h.query(time).gaussian_ids : h.ids();
  PointCloud cloud;
  for (const GaussianId id : ids) {
    const Gaussian4D g = h.get(id);
    if (at_time) {
      const ConditionedGaussian3D c = condition_at_time(g, time);
      cloud.positions.push_back(c.mean3);
    } else {
      cloud.positions.push_back(g.mean.head<3>());
    }
    cloud.colors.push_back(g.base_color.cwiseMax(0.0).cwiseMin(1.0));
  }
  write_ply(out, cloud);
  std::cout << "wrote " << cloud.positions.size() << " points to " << out << '\n';
  return 0;
}

int run(int argc, char** argv) {
  CLI::App app{"Temporal Gaussian hierarchy toolkit"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "OpenMP threads (0: runtime default)")->check(CLI::NonNegativeNumber);

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "Train a model on a scene and write it");
  fit_cmd->add_option("--scene", fit.scene, "Scene JSON")->required();
  fit_cmd->add_option("--out", fit.out, "Output model (.tgh)")->required();
  fit_cmd->add_option("--metrics", fit.metrics, "Metrics CSV (default: <out>.metrics.csv)");
  fit_cmd->add_option("--levels", fit.levels, "Hierarchy levels L")->capture_default_str()->check(CLI::Range(1, kMaxLevels));
  fit_cmd->add_option("--root-seconds", fit.root_seconds, "Root segment length S")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  fit_cmd->add_option("--iters", fit.iters, "Iterations (default: 50000 per 1200 frames)")
      ->check(CLI::NonNegativeNumber);
  fit_cmd->add_option("--seed", fit.seed, "RNG seed")->capture_default_str();
  fit_cmd->add_option("--o-th", fit.o_th, "Temporal opacity threshold")->capture_default_str()->check(CLI::Range(1e-12, 0.999999));
  fit_cmd->add_option("--g-th", fit.g_th, "Residual-SH gradient gate")->capture_default_str()->check(CLI::NonNegativeNumber);
  fit_cmd->add_option("--lambda-h", fit.lambda_h, "View-dependent ratio cutoff")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  fit_cmd->add_flag("--full-sh", fit.full_sh, "Train every residual (g_th = 0, lambda_h = 1)");
  fit_cmd->add_option("--lr", fit.lr, "Base learning rate")->capture_default_str()->check(CLI::PositiveNumber);
  fit_cmd->add_option("--lambda-m", fit.lambda_m, "MSE weight")->capture_default_str()->check(CLI::NonNegativeNumber);
  fit_cmd->add_option("--lambda-s", fit.lambda_s, "SSIM weight")->capture_default_str()->check(CLI::NonNegativeNumber);
  fit_cmd->add_option("--lambda-p", fit.lambda_p, "Perceptual weight (no perceptual network is bundled; must be 0)")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 0.0));
  fit_cmd->add_option("--densify-interval", fit.densify_interval)->capture_default_str()->check(CLI::PositiveNumber);
  fit_cmd->add_option("--densify-from", fit.densify_from)->capture_default_str()->check(CLI::NonNegativeNumber);
  fit_cmd->add_option("--densify-until", fit.densify_until, "Last densify iteration (-1: half of the run)")
      ->capture_default_str();
  fit_cmd->add_option("--grad-threshold", fit.grad_threshold)->capture_default_str()->check(CLI::PositiveNumber);
  fit_cmd->add_option("--prune-threshold", fit.prune_threshold)->capture_default_str()->check(CLI::PositiveNumber);
  fit_cmd->add_option("--max-growth", fit.max_growth, "Population cap as a multiple of the initial count (0: none)")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  fit_cmd->add_option("--knn", fit.knn, "Neighbours for initial scales")->capture_default_str()->check(CLI::Range(1, 64));
  fit_cmd->add_option("--init-opacity", fit.init_opacity)->capture_default_str()->check(CLI::Range(1e-6, 1.0));
  fit_cmd->add_option("--max-points", fit.max_points, "Subsample initial points (0: all)")->capture_default_str();
  fit_cmd->add_flag("--audit", fit.audit, "Audit the hierarchy after every densification interval");

  RenderArgs render_args;
  auto* render_cmd = app.add_subcommand("render", "Render frames from a model");
  render_cmd->add_option("--model", render_args.model)->required();
  render_cmd->add_option("--camera", render_args.camera, "Camera JSON")->required();
  auto* time_opt = render_cmd->add_option("--time", render_args.time, "Timestamp in seconds");
  auto* times_opt = render_cmd->add_option("--times-csv", render_args.times_csv, "CSV of timestamps (batch mode)");
  time_opt->excludes(times_opt);
  render_cmd->add_option("--out", render_args.out, "PNG path, or a directory with --times-csv")->required();
  render_cmd->add_option("--background", render_args.background, "r g b in [0, 1]")
      ->expected(3)
      ->check(CLI::Range(0.0, 1.0));
  render_cmd->add_option("--tile-size", render_args.tile_size)->capture_default_str()->check(CLI::Range(1, 4096));
  render_cmd->add_flag("--serial", render_args.serial, "Use the serial reference compositor");

  std::string info_model;
  auto* info_cmd = app.add_subcommand("info", "Print header, occupancy and section sizes");
  info_cmd->add_option("--model", info_model)->required();

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "Working-set statistics, level and duration sweeps");
  bench_cmd->add_option("--model", bench.model)->required();
  bench_cmd->add_option("--samples", bench.samples)->capture_default_str()->check(CLI::Range(1, 100000000));
  bench_cmd->add_option("--durations", bench.durations, "Synthetic timeline lengths in seconds")
      ->delimiter(',')
      ->check(CLI::PositiveNumber);
  bench_cmd->add_option("--levels", bench.levels, "Level counts to sweep")
      ->delimiter(',')
      ->check(CLI::Range(1, kMaxLevels));
  bench_cmd->add_option("--density", bench.density, "Gaussians per second in the duration sweep")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  bench_cmd->add_option("--seed", bench.seed)->capture_default_str();
  bench_cmd->add_option("--csv", bench.csv, "Write the results as CSV");

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic multi-view scene");
  synth_cmd->add_option("--out", synth.out)->required();
  synth_cmd->add_option("--frames", synth.frames)->capture_default_str()->check(CLI::Range(1, 1000000));
  synth_cmd->add_option("--cameras", synth.cameras)->capture_default_str()->check(CLI::Range(1, 1024));
  synth_cmd->add_option("--size", synth.size)->capture_default_str()->check(CLI::Range(4, 8192));
  synth_cmd->add_option("--fps", synth.fps)->capture_default_str()->check(CLI::PositiveNumber);
  synth_cmd->add_option("--keyframe-interval", synth.keyframe_interval)->capture_default_str()->check(CLI::Range(1, 1000000));
  synth_cmd->add_option("--points-per-blob", synth.points_per_blob)->capture_default_str()->check(CLI::Range(1, 1000000));
  synth_cmd->add_option("--heldout-angle", synth.heldout_angle, "Radians")->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed)->capture_default_str();

  std::string export_model, export_out;
  double export_time = 0.0;
  auto* export_cmd = app.add_subcommand("export", "Write Gaussian centers as a PLY point cloud");
  export_cmd->add_option("--model", export_model)->required();
  export_cmd->add_option("--out", export_out)->required();
  auto* export_time_opt = export_cmd->add_option("--time", export_time, "Condition on this time (working set only)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }
  if (render_cmd->parsed() && time_opt->count() == 0 && times_opt->count() == 0) {
    std::cerr << "render: one of --time or --times-csv is required\n";
    return kExitUsage;
  }
  if (threads > 0) omp_set_num_threads(threads);

  try {
    if (fit_cmd->parsed()) return cmd_fit(fit);
    if (render_cmd->parsed()) return cmd_render(render_args);
    if (info_cmd->parsed()) return cmd_info(info_model);
    if (bench_cmd->parsed()) return cmd_bench(bench);
    if (synth_cmd->parsed()) return cmd_synth(synth);
    if (export_cmd->parsed()) return cmd_export(export_model, export_out, export_time, export_time_opt->count() > 0);
  } catch (const InternalError& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kExitInternal;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
