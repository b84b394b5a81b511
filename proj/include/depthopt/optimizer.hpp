#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "depthopt/dynamic.hpp"
#include "depthopt/image.hpp"
#include "depthopt/losses.hpp"

namespace depthopt {

/// Weights of the total objective. Defaults follow the tuned values for this
/// loss family (L1 depth term summed, photometric term averaged).
struct LossWeights {
  double depth = 0.001;
  double photometric = 1.0;
  double smoothness = 0.3;
  double flow_shape = 0.1;
  double normal_scale = 0.001;
};

/// Unconstrained per-pixel variable s with depth = exp(s); keeps depth
/// positive without projection steps.
struct DepthVariable {
  Grid<double> log_depth;
  Grid<std::uint8_t> valid;

  static DepthVariable encode(const DepthField& depth);
  DepthField decode() const;

  int width() const { return log_depth.width(); }
  int height() const { return log_depth.height(); }
};

/// One temporally adjacent frame: its image, sparse depth, camera-to-world
/// pose, human mask and the flow that samples it from the current frame's
/// pixel grid.
struct NeighborFrame {
  ImageRGB image;
  SparseDepth sparse;
  PoseSE3 pose;
  InstanceMask mask;
  FlowField flow_to_neighbor;
};

/// Everything needed to optimize one frame's depth field.
struct FrameBundle {
  int frame_index = 0;
  ImageRGB image;
  SparseDepth sparse;
  PoseSE3 pose;
  Intrinsics K;
  InstanceMask mask;
  std::vector<NeighborFrame> neighbors;
  std::optional<DepthField> gt_depth;  // evaluation only, never optimized against
};

struct OptimizerConfig {
  int steps = 500;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  LossWeights weights;
  double sample_ratio = 0.3;
  double ground_threshold_deg = 15.0;
  int patch_size = 20;
  std::uint64_t seed = 0;
  bool detach_median = false;
  bool optimize_neighbors = false;  // joint mode; default freezes neighbor depths
  Eigen::Vector3d ground_direction = Eigen::Vector3d(0.0, 1.0, 0.0);
  PhotometricOptions photometric;
};

/// Weighted total objective with analytic gradients with respect to the
/// log-depth variables (the exp parameterization is chained inside).
struct TotalLoss {
  double value = 0.0;
  double term_depth = 0.0;
  double term_photometric = 0.0;
  double term_smoothness = 0.0;
  double term_flow_shape = 0.0;
  double term_normal_scale = 0.0;
  Grid<double> grad;                        // d value / d s_t
  std::vector<Grid<double>> grad_neighbors; // d value / d s_{t'}, one per neighbor
  bool degenerate = false;
};

TotalLoss total_loss(const FrameBundle& bundle, const DepthVariable& var,
                     std::span<const DepthVariable> neighbor_vars, const OptimizerConfig& cfg,
                     StructureLog* structure = nullptr);

/// Adam optimizer state; the parameters live inside so a step is a pure
/// function of (state, gradient).
struct AdamState {
  Grid<double> params;
  Grid<double> first_moment;
  Grid<double> second_moment;
  std::int64_t step = 0;

  static AdamState init(const Grid<double>& params);
};

AdamState adam_step(AdamState state, const Grid<double>& grad, double learning_rate,
                    double beta1, double beta2, double eps);

/// Central finite differences of an arbitrary scalar function of the
/// log-depth grid, restricted to the given pixel subset.
Grid<double> finite_diff_gradient(const std::function<double(const Grid<double>&)>& f,
                                  const Grid<double>& log_depth, double eps,
                                  std::span<const std::pair<int, int>> pixels);

/// Dense initialization from sparse samples: nearest-valid-neighbor fill
/// (breadth-first over the 4-neighborhood), 3 m when the sparse map is empty.
DepthField init_depth_from_sparse(const SparseDepth& sparse, double fallback_depth = 3.0);

struct StepTrace {
  int step = 0;
  double total = 0.0;
  double depth = 0.0;
  double photometric = 0.0;
  double smoothness = 0.0;
  double flow_shape = 0.0;
  double normal_scale = 0.0;
};

struct OptimizeResult {
  DepthField depth;
  std::vector<DepthField> neighbor_depths;
  std::vector<StepTrace> trace;
};

/// Runs cfg.steps Adam updates of the current frame's log depth (neighbor
/// depths stay at their sparse-seeded initialization unless
/// cfg.optimize_neighbors is set). Deterministic given cfg.seed. Throws with
/// the step index if the loss turns non-finite.
OptimizeResult optimize_frame(const FrameBundle& bundle, const DepthField& init,
                              const OptimizerConfig& cfg);

}  // namespace depthopt
