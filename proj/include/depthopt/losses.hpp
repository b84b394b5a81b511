#pragma once

#include <span>
#include <vector>

#include "depthopt/camera.hpp"
#include "depthopt/geometry.hpp"
#include "depthopt/image.hpp"

namespace depthopt {

/// Flat log of the discrete decisions a loss evaluation made (kept pixels,
/// argmin ids, interpolation cells, residual signs, median picks). Finite
/// difference harnesses compare logs across perturbed evaluations to skip
/// pixels sitting on a kink or a branch switch.
using StructureLog = std::vector<long long>;

/// Value plus per-pixel gradients. `grad` is with respect to the first
/// depth-like argument of the loss; `grad_other` (when non-empty) with
/// respect to the second frame's. For the smoothness and flow-shape losses
/// the gradients are with respect to the normalized inverse-depth inputs and
/// are chained to raw depth by the caller.
struct LossResult {
  double value = 0.0;
  Grid<double> grad;
  Grid<double> grad_other;
  Grid<double> error_map;       // diagnostic, loss dependent
  Grid<std::uint8_t> automask;  // diagnostic, photometric only
  bool degenerate = false;      // set when no pixel contributed
};

/// L1 penalty between the depth estimate and the sparse targets, summed over
/// the sparse support. Gradient is the residual sign on that support.
LossResult depth_loss(const DepthField& estimate, const SparseDepth& targets,
                      StructureLog* structure = nullptr);

/// Per-pixel structural similarity of two images in [-1,1], channel-averaged.
/// 3x3 mean filtering with edge-replicate padding, C1 = 0.01^2, C2 = 0.03^2
/// for intensities in [0,1].
Grid<double> ssim_map(const ImageRGB& a, const ImageRGB& b);

struct SourceFrame {
  ImageRGB image;
  PoseSE3 target_to_source;
};

struct PhotometricOptions {
  double alpha = 0.85;       // SSIM vs L1 mixing weight
  double min_warp_z = 1e-6;  // points with smaller warped z are invalid
};

/// View-synthesis consistency between the target frame and each source,
/// 0.85/0.15 SSIM+L1 mix, per-pixel minimum over sources, auto-masking
/// against the unwarped error (strict <), mean over kept pixels. Gradient
/// flows through the argmin source only: through the sampled intensities and
/// through the depth-dependent sample coordinates.
LossResult photometric_loss(const ImageRGB& target, std::span<const SourceFrame> sources,
                            const DepthField& depth, const Intrinsics& K,
                            const PhotometricOptions& options = {},
                            StructureLog* structure = nullptr);

/// Edge-aware first-order smoothness of the normalized inverse depth over the
/// given mask: sum of |forward difference| weighted by exp(-|image gradient|)
/// per axis, channel-mean image gradients, zero at the last row/column.
/// The returned gradient is with respect to the inverse-depth input map.
LossResult smoothness_loss(const Grid<double>& norm_inv_depth,
                           const Grid<std::uint8_t>* inv_valid, const ImageRGB& image,
                           const Grid<std::uint8_t>& mask, StructureLog* structure = nullptr);

}  // namespace depthopt
