#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "depthopt/evaluation.hpp"
#include "depthopt/gradcheck.hpp"
#include "depthopt/io.hpp"
#include "depthopt/optimizer.hpp"
#include "depthopt/synth.hpp"

namespace fs = std::filesystem;
using namespace depthopt;

namespace {

// Pedestrians stand where their feet and the surrounding floor are inside
// the default camera's view, so the ground-contact anchors exist.
std::vector<PedestrianSpec> default_pedestrians(int count) {
  std::vector<PedestrianSpec> peds;
  for (int k = 0; k < count; ++k) {
    PedestrianSpec p;
    p.center_xz = {(k % 2 == 0 ? -0.8 : 0.8) + 0.2 * (k / 2), 4.7 + 0.5 * k};
    p.width = 0.7 + 0.05 * (k % 3);
    p.height = 1.6 + 0.1 * (k % 2);
    p.depth = 0.5;
    p.velocity_xz = {k % 2 == 0 ? 0.06 : -0.05, 0.02 + 0.01 * (k % 2)};
    peds.push_back(p);
  }
  return peds;
}

SceneConfig scene_from_flags(int width, int height, int frames, int peds, double pitch_deg,
                             double cam_height, std::uint64_t seed) {
  SceneConfig cfg;
  cfg.K = make_default_intrinsics(width, height);
  cfg.seed = seed;
  cfg.room_width = 7.0;
  cfg.room_length = 9.0;
  cfg.trajectory =
      make_linear_trajectory({0.0, -cam_height, 0.4}, {0.1, 0.0, 0.2}, pitch_deg, frames);
  cfg.pedestrians = default_pedestrians(peds);
  return cfg;
}

void write_scene(const fs::path& out, const SceneConfig& cfg,
                 const std::vector<SyntheticFrame>& frames) {
  fs::create_directories(out);
  write_intrinsics(out / "intrinsics.txt", cfg.K);
  std::vector<std::pair<int, PoseSE3>> poses;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    poses.emplace_back(static_cast<int>(f), frames[f].pose);
  }
  write_poses(out / "poses.txt", poses);
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const int i = static_cast<int>(f);
    write_ppm(out / frame_image_name(i), frames[f].image);
    write_depth_pfm(out / frame_depth_gt_name(i), frames[f].depth);
    write_pgm16(out / frame_mask_name(i), frames[f].instances);
    if (frames[f].flow_to_prev) write_flo(out / frame_flow_name(i, i - 1), *frames[f].flow_to_prev);
    if (frames[f].flow_to_next) write_flo(out / frame_flow_name(i, i + 1), *frames[f].flow_to_next);
  }
}

FrameBundle load_bundle(const fs::path& dir, int frame) {
  FrameBundle bundle;
  bundle.frame_index = frame;
  bundle.K = read_intrinsics(dir / "intrinsics.txt");
  const auto poses = read_poses(dir / "poses.txt");
  auto pose_of = [&](int id) -> const PoseSE3& {
    for (const auto& [pid, pose] : poses) {
      if (pid == id) return pose;
    }
    throw std::runtime_error("poses.txt: no pose for frame " + std::to_string(id));
  };
  bundle.image = read_ppm(dir / frame_image_name(frame));
  bundle.pose = pose_of(frame);
  bundle.mask = read_pgm16(dir / frame_mask_name(frame));
  bundle.sparse = read_sparse(dir / frame_sparse_name(frame), bundle.K.width, bundle.K.height);
  const fs::path gt = dir / frame_depth_gt_name(frame);
  if (fs::exists(gt)) bundle.gt_depth = read_depth_pfm(gt);

  for (int neighbor : {frame - 1, frame + 1}) {
    const fs::path image_path = dir / frame_image_name(neighbor);
    const fs::path flow_path = dir / frame_flow_name(frame, neighbor);
    if (!fs::exists(image_path) || !fs::exists(flow_path)) continue;
    NeighborFrame nb;
    nb.image = read_ppm(image_path);
    nb.pose = pose_of(neighbor);
    nb.mask = read_pgm16(dir / frame_mask_name(neighbor));
    nb.sparse =
        read_sparse(dir / frame_sparse_name(neighbor), bundle.K.width, bundle.K.height);
    nb.flow_to_neighbor = read_flo(flow_path);
    bundle.neighbors.push_back(std::move(nb));
  }
  if (bundle.neighbors.empty()) {
    throw std::runtime_error("optimize: frame " + std::to_string(frame) +
                             " has no usable temporal neighbor");
  }
  return bundle;
}

OptimizerConfig to_optimizer_config(const PipelineConfig& p) {
  OptimizerConfig cfg;
  cfg.steps = p.steps;
  cfg.learning_rate = p.learning_rate;
  cfg.beta1 = p.beta1;
  cfg.beta2 = p.beta2;
  cfg.eps_adam = p.eps_adam;
  cfg.weights = {p.lambda_depth, p.lambda_photometric, p.lambda_smoothness,
                 p.lambda_flow_shape, p.lambda_normal_scale};
  cfg.sample_ratio = p.sample_ratio;
  cfg.ground_threshold_deg = p.ground_threshold_deg;
  cfg.patch_size = p.patch_size;
  cfg.seed = p.seed;
  cfg.detach_median = p.detach_median;
  cfg.optimize_neighbors = p.optimize_neighbors;
  return cfg;
}

DepthField lognormal_init(const DepthField& gt, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  DepthField init = gt;
  for (std::size_t i = 0; i < init.values.size(); ++i) {
    const double u1 = std::max(static_cast<double>(rng() >> 11) * 0x1.0p-53, 1e-300);
    const double u2 = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    const double gauss = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    if (init.valid[i]) init.values[i] *= std::exp(sigma * gauss);
  }
  return init;
}

std::string trace_to_text(const std::vector<StepTrace>& trace) {
  std::ostringstream os;
  os << "# step total depth photometric smoothness flow_shape normal_scale\n";
  os.precision(12);
  for (const StepTrace& t : trace) {
    os << t.step << " " << t.total << " " << t.depth << " " << t.photometric << " "
       << t.smoothness << " " << t.flow_shape << " " << t.normal_scale << "\n";
  }
  return os.str();
}

/// Every optimizer knob is a flag; a config file supplies the same keys and
/// explicitly passed flags win.
void add_pipeline_flags(CLI::App* cmd, PipelineConfig& p) {
  cmd->add_option("--steps", p.steps, "Adam steps")->capture_default_str();
  cmd->add_option("--lr", p.learning_rate, "learning rate on log depth")
      ->capture_default_str();
  cmd->add_option("--beta1", p.beta1, "Adam first-moment decay")->capture_default_str();
  cmd->add_option("--beta2", p.beta2, "Adam second-moment decay")->capture_default_str();
  cmd->add_option("--eps-adam", p.eps_adam, "Adam denominator epsilon")
      ->capture_default_str();
  cmd->add_option("--lambda-depth", p.lambda_depth, "sparse depth term weight")
      ->capture_default_str();
  cmd->add_option("--lambda-photometric", p.lambda_photometric, "photometric term weight")
      ->capture_default_str();
  cmd->add_option("--lambda-smoothness", p.lambda_smoothness, "smoothness term weight")
      ->capture_default_str();
  cmd->add_option("--lambda-flow-shape", p.lambda_flow_shape, "flow-shape term weight")
      ->capture_default_str();
  cmd->add_option("--lambda-normal-scale", p.lambda_normal_scale,
                  "normal-scale term weight")
      ->capture_default_str();
  cmd->add_option("--sample-ratio", p.sample_ratio, "human-pixel sampling ratio")
      ->capture_default_str();
  cmd->add_option("--s-th-deg", p.ground_threshold_deg, "ground-normal angle threshold")
      ->capture_default_str();
  cmd->add_option("--patch", p.patch_size, "ground contact patch size in pixels")
      ->capture_default_str();
  cmd->add_option("--seed", p.seed, "random seed")->capture_default_str();
  cmd->add_flag("--detach-median", p.detach_median,
                "drop the gradient into the median anchor pixel");
  cmd->add_flag("--joint", p.optimize_neighbors, "also optimize neighbor-frame depths");
  cmd->add_option("--init", p.init_mode, "initialization: sparse | gt-lognormal")
      ->capture_default_str();
  cmd->add_option("--init-sigma", p.init_sigma, "log-noise sigma for gt-lognormal init")
      ->capture_default_str();
}

/// Pre-scan for --config / environment default and load it so flags parsed
/// afterwards override the file.
PipelineConfig initial_config(int argc, char** argv) {
  std::optional<fs::path> config_path;
  if (const char* env = std::getenv("DEPTHOPT_CONFIG")) config_path = fs::path(env);
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--config") config_path = fs::path(argv[i + 1]);
  }
  if (config_path) return read_config(*config_path);
  return {};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dense depth optimization from sparse depth, photometric, flow and "
               "surface-normal constraints"};
  app.require_subcommand(1);

  PipelineConfig pipeline;
  try {
    pipeline = initial_config(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::string config_dummy;
  app.add_option("--config", config_dummy, "key=value configuration file")
      ->envname("DEPTHOPT_CONFIG");

  // synth ---------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "generate a synthetic frame set");
  std::string synth_out;
  int synth_frames = 3, synth_width = 64, synth_height = 48, synth_peds = 2;
  double synth_pitch = 10.0, synth_cam_height = 1.4;
  std::uint64_t synth_seed = 1;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--frames", synth_frames)->capture_default_str();
  synth->add_option("--width", synth_width)->capture_default_str();
  synth->add_option("--height", synth_height)->capture_default_str();
  synth->add_option("--peds", synth_peds, "number of pedestrian boxes")
      ->capture_default_str();
  synth->add_option("--pitch-deg", synth_pitch, "camera pitch, up positive")
      ->capture_default_str();
  synth->add_option("--cam-height", synth_cam_height, "camera height above the floor")
      ->capture_default_str();
  synth->add_option("--seed", synth_seed)->capture_default_str();

  // sparsify ------------------------------------------------------------
  auto* sparsify_cmd = app.add_subcommand("sparsify", "sample sparse depth from groundtruth");
  std::string sp_dir, sp_out, sp_mode = "feature";
  int sp_frame = 0, sp_max_n = 200;
  std::uint64_t sp_seed = 0;
  sparsify_cmd->add_option("--dir", sp_dir, "frame-set directory")->required();
  sparsify_cmd->add_option("--frame", sp_frame)->required();
  sparsify_cmd->add_option("--mode", sp_mode, "feature | uniform")->capture_default_str();
  sparsify_cmd->add_option("--max-n", sp_max_n, "maximum number of samples")
      ->capture_default_str();
  sparsify_cmd->add_option("--seed", sp_seed)->capture_default_str();
  sparsify_cmd->add_option("--out", sp_out, "output path (default sparse_%04d.txt)");

  // perturb-pose ----------------------------------------------------------
  auto* perturb = app.add_subcommand("perturb-pose", "add orientation noise to poses");
  std::string pp_in, pp_out;
  double pp_angle = 0.0;
  std::uint64_t pp_seed = 0;
  std::vector<int> pp_skip;
  perturb->add_option("--poses", pp_in, "input poses.txt")->required();
  perturb->add_option("--out", pp_out, "output poses path")->required();
  perturb->add_option("--angle-deg", pp_angle, "rotation noise magnitude")->required();
  perturb->add_option("--seed", pp_seed)->capture_default_str();
  perturb->add_option("--skip-frame", pp_skip, "frame ids to leave untouched");

  // optimize --------------------------------------------------------------
  auto* optimize = app.add_subcommand("optimize", "optimize one frame's depth field");
  std::string opt_dir, opt_out;
  int opt_frame = 1;
  optimize->add_option("--dir", opt_dir, "frame-set directory")->required();
  optimize->add_option("--frame", opt_frame)->capture_default_str();
  optimize->add_option("--out", opt_out, "output directory")->required();
  add_pipeline_flags(optimize, pipeline);

  // eval ------------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "compare a depth estimate against groundtruth");
  std::string ev_est, ev_gt, ev_mask;
  bool ev_median = pipeline.median_scaling;
  double ev_min_depth = pipeline.min_depth, ev_max_depth = pipeline.max_depth;
  eval->add_option("--est", ev_est, "estimated depth PFM")->required();
  eval->add_option("--gt", ev_gt, "groundtruth depth PFM")->required();
  eval->add_option("--mask", ev_mask, "instance mask PGM for the human split");
  eval->add_flag("--median-scale", ev_median, "apply median scaling before the metrics");
  eval->add_option("--min-depth", ev_min_depth, "evaluation range clamp, 0 disables")
      ->capture_default_str();
  eval->add_option("--max-depth", ev_max_depth, "evaluation range clamp, 0 disables")
      ->capture_default_str();

  // gradcheck ---------------------------------------------------------------
  auto* grad = app.add_subcommand("gradcheck",
                                  "verify analytic gradients against finite differences");
  int gc_width = 16, gc_height = 24;
  std::uint64_t gc_seed = 17;
  double gc_eps = 1e-4, gc_tol = 1e-4, gc_min_rate = 0.95;
  grad->add_option("--width", gc_width)->capture_default_str();
  grad->add_option("--height", gc_height)->capture_default_str();
  grad->add_option("--seed", gc_seed)->capture_default_str();
  grad->add_option("--eps", gc_eps, "finite-difference step on log depth")
      ->capture_default_str();
  grad->add_option("--tol", gc_tol, "relative error tolerance")->capture_default_str();
  grad->add_option("--min-rate", gc_min_rate, "required pass rate per term")
      ->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      const SceneConfig cfg = scene_from_flags(synth_width, synth_height, synth_frames,
                                               synth_peds, synth_pitch, synth_cam_height,
                                               synth_seed);
      write_scene(synth_out, cfg, generate_scene(cfg));
      std::cout << "wrote " << synth_frames << " frames to " << synth_out << "\n";
      return 0;
    }

    if (*sparsify_cmd) {
      const fs::path dir(sp_dir);
      const DepthField dense = read_depth_pfm(dir / frame_depth_gt_name(sp_frame));
      const ImageRGB image = read_ppm(dir / frame_image_name(sp_frame));
      const InstanceMask mask = read_pgm16(dir / frame_mask_name(sp_frame));
      const SparsifyMode mode =
          sp_mode == "uniform" ? SparsifyMode::kUniform : SparsifyMode::kFeature;
      if (sp_mode != "uniform" && sp_mode != "feature") {
        throw std::runtime_error("sparsify: unknown mode '" + sp_mode + "'");
      }
      const SparseDepth sparse = sparsify(dense, image, mask, mode, sp_max_n, sp_seed);
      const fs::path out = sp_out.empty() ? dir / frame_sparse_name(sp_frame) : fs::path(sp_out);
      write_sparse(out, sparse);
      std::cout << "wrote " << sparse.count() << " samples to " << out.string() << "\n";
      return 0;
    }

    if (*perturb) {
      auto poses = read_poses(pp_in);
      for (auto& [id, pose] : poses) {
        if (std::find(pp_skip.begin(), pp_skip.end(), id) != pp_skip.end()) continue;
        pose = perturb_pose(pose, pp_angle, mix_seed(pp_seed, static_cast<std::uint64_t>(id)));
      }
      write_poses(pp_out, poses);
      std::cout << "wrote perturbed poses to " << pp_out << "\n";
      return 0;
    }

    if (*optimize) {
      const fs::path dir(opt_dir), out(opt_out);
      const FrameBundle bundle = load_bundle(dir, opt_frame);
      const OptimizerConfig cfg = to_optimizer_config(pipeline);
      DepthField init;
      if (pipeline.init_mode == "sparse") {
        init = init_depth_from_sparse(bundle.sparse);
      } else if (pipeline.init_mode == "gt-lognormal") {
        if (!bundle.gt_depth) {
          throw std::runtime_error("optimize: gt-lognormal init needs groundtruth depth");
        }
        init = lognormal_init(*bundle.gt_depth, pipeline.init_sigma,
                              mix_seed(cfg.seed, static_cast<std::uint64_t>(opt_frame)));
      } else {
        throw std::runtime_error("optimize: unknown init mode '" + pipeline.init_mode + "'");
      }
      const OptimizeResult result = optimize_frame(bundle, init, cfg);
      fs::create_directories(out);
      write_depth_pfm(out / frame_depth_est_name(opt_frame), result.depth);
      write_text_atomic(out / frame_trace_name(opt_frame), trace_to_text(result.trace));
      std::cout << "frame " << opt_frame << ": " << cfg.steps << " steps";
      if (!result.trace.empty()) {
        std::cout << ", loss " << result.trace.front().total << " -> "
                  << result.trace.back().total;
      }
      std::cout << "\n";
      return 0;
    }

    if (*eval) {
      DepthField est = read_depth_pfm(ev_est);
      const DepthField gt = read_depth_pfm(ev_gt);
      if (ev_median) est = median_scale(est, gt).first;
      MetricOptions opts;
      if (ev_min_depth > 0.0) opts.min_depth = ev_min_depth;
      if (ev_max_depth > 0.0) opts.max_depth = ev_max_depth;
      SplitReport report;
      if (!ev_mask.empty()) {
        report = split_eval(est, gt, read_pgm16(ev_mask), opts);
      } else {
        report.full = compute_metrics(est, gt, nullptr, opts);
      }
      const char* scaling = ev_median ? "median" : "none";
      report.full.scaling = scaling;
      if (report.human) report.human->scaling = scaling;
      std::cout << metric_row_header() << "\n" << format_metric_row(report) << "\n";
      return 0;
    }

    if (*grad) {
      const GradCheckBundle g = make_gradcheck_bundle(gc_width, gc_height, gc_seed);
      OptimizerConfig cfg;
      GradCheckOptions opts;
      opts.eps = gc_eps;
      opts.tolerance = gc_tol;
      bool ok = true;
      for (LossTerm term : {LossTerm::kDepth, LossTerm::kPhotometric, LossTerm::kSmoothness,
                            LossTerm::kFlowShape, LossTerm::kNormalScale, LossTerm::kTotal}) {
        const GradCheckReport r =
            check_term_gradient(g.bundle, g.var, g.neighbor_vars, cfg, term, opts);
        const bool pass = r.pass_rate() >= gc_min_rate;
        ok &= pass;
        std::cout << (pass ? "[PASS] " : "[FAIL] ") << loss_term_name(term) << ": "
                  << r.passed << "/" << r.tested << " pixels within tolerance ("
                  << r.skipped << " kink-adjacent skipped, max rel err "
                  << r.max_rel_error << ")\n";
      }
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
