#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "depthopt/optimizer.hpp"
#include "depthopt/synth.hpp"

namespace depthopt {

enum class LossTerm { kDepth, kPhotometric, kSmoothness, kFlowShape, kNormalScale, kTotal };

const char* loss_term_name(LossTerm term);

/// Weights isolating one term (weight 1 for it, 0 elsewhere); defaults for
/// the total objective.
LossWeights one_hot_weights(LossTerm term);

struct GradCheckReport {
  LossTerm term = LossTerm::kTotal;
  int tested = 0;    // pixels with a stable branch structure under +-eps
  int skipped = 0;   // kink-adjacent pixels excluded by the stability probe
  int passed = 0;
  double max_rel_error = 0.0;
  double pass_rate() const { return tested == 0 ? 1.0 : double(passed) / double(tested); }
};

struct GradCheckOptions {
  double eps = 1e-4;       // step on the log-depth variable
  double tolerance = 1e-4; // relative error bound
  double abs_floor = 1e-9; // differences below this always match
  int max_pixels = 0;      // 0 = every valid pixel
  std::uint64_t seed = 17;
};

/// Compares the analytic gradient of one loss term (as assembled by
/// total_loss) against central finite differences on the log-depth variable.
/// A pixel is tested only when the discrete decision structure of the loss is
/// identical at s, s+eps and s-eps; everything else counts as skipped.
GradCheckReport check_term_gradient(const FrameBundle& bundle, const DepthVariable& var,
                                    std::span<const DepthVariable> neighbor_vars,
                                    const OptimizerConfig& cfg, LossTerm term,
                                    const GradCheckOptions& options = {});

struct GradCheckBundle {
  SceneConfig scene;
  FrameBundle bundle;
  DepthVariable var;
  std::vector<DepthVariable> neighbor_vars;
};

/// Small synthetic bundle (textured room, one moving pedestrian, three
/// frames) with log-depth initialized from noisy groundtruth so every term
/// has non-trivial gradients.
GradCheckBundle make_gradcheck_bundle(int width, int height, std::uint64_t seed);

}  // namespace depthopt
