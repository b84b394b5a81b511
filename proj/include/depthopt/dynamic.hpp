#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "depthopt/camera.hpp"
#include "depthopt/image.hpp"
#include "depthopt/losses.hpp"

namespace depthopt {

/// Inverse depth divided by its mean over valid pixels. Carries the pieces
/// needed to chain gradients back to raw depth.
struct InverseDepthMap {
  Grid<double> values;           // d(p) / mean(d)
  Grid<std::uint8_t> valid;
  double mean_inverse = 0.0;     // mean(d) over valid pixels
  int valid_count = 0;
};

/// Throws when no pixel is valid.
InverseDepthMap mean_normalized_inverse_depth(const DepthField& depth);

/// Chains a gradient with respect to the normalized inverse depth through the
/// mean normalization and the reciprocal, yielding a gradient with respect to
/// raw depth.
Grid<double> chain_inverse_depth_grad(const Grid<double>& grad_norm_inv,
                                      const DepthField& depth, const InverseDepthMap& inv);

/// Binary overlap of the current human mask with the flow-warped neighbor
/// human mask (nearest-neighbor warp, instance identity ignored).
Grid<std::uint8_t> overlap_mask(const InstanceMask& current, const InstanceMask& neighbor,
                                const FlowField& flow);

/// Normalized forward differences per axis: diff / (|value at p+e| +
/// |value at p| + 1e-7). Invariant to positive rescaling of the input; zero
/// at the last row/column and where either pixel is invalid.
struct AxisMaps {
  Grid<double> x;
  Grid<double> y;
};

AxisMaps scale_invariant_gradient(const Grid<double>& values,
                                  const Grid<std::uint8_t>* valid = nullptr);

/// Matches the normalized inverse-depth gradients of the current frame
/// against those of the flow-warped (bilinear) neighbor map inside the
/// overlap mask, averaged over the mask. Gradients are with respect to the
/// two normalized inverse-depth inputs (`grad`, `grad_other`).
LossResult flow_shape_loss(const InverseDepthMap& inv_t, const InverseDepthMap& inv_neighbor,
                           const FlowField& flow, const Grid<std::uint8_t>& mask,
                           StructureLog* structure = nullptr);

/// Per-pixel unit surface normals from the depth field, oriented toward the
/// camera. Each pixel uses its 8 neighbors backprojected to 3D, grouped into
/// the four perpendicular offset pairs (E,S), (SE,SW), (W,N), (NW,NE); the
/// four normalized cross products are averaged and renormalized. Border
/// pixels and pixels with an invalid neighbor are invalid.
struct NormalMap {
  Grid<double> nx;
  Grid<double> ny;
  Grid<double> nz;
  Grid<std::uint8_t> valid;

  int width() const { return nx.width(); }
  int height() const { return nx.height(); }
  Eigen::Vector3d at(int x, int y) const { return {nx.at(x, y), ny.at(x, y), nz.at(x, y)}; }
};

NormalMap surface_normals(const DepthField& depth, const Intrinsics& K);

/// Pixels whose normal is within `threshold_deg` (strict) of the reference
/// ground direction. The reference is first flipped into the camera-facing
/// hemisphere of a below-camera surface (y component <= 0 under the y-down
/// convention), so either sign convention of the input direction works.
Grid<std::uint8_t> ground_mask(const NormalMap& normals, const Eigen::Vector3d& ground_dir,
                               double threshold_deg);

/// Ground-contact candidates for one instance: a patch_size x patch_size
/// rectangle centered at the instance's bottom pixel (maximum v, ties by
/// minimum u), clipped to the image, intersected with the ground mask. The
/// anchor is the lower median of the depths over the candidates.
struct ContactPatch {
  int instance_id = 0;
  int u0 = 0, v0 = 0, u1 = 0, v1 = 0;  // inclusive rectangle bounds
  std::vector<std::pair<int, int>> candidates;
  bool has_anchor = false;
  double anchor_depth = 0.0;
  int anchor_x = -1, anchor_y = -1;
};

ContactPatch contact_patch(const InstanceMask& instances, int instance_id,
                           const Grid<std::uint8_t>& ground, const DepthField& depth,
                           int patch_size = 20);

struct NormalScaleOptions {
  double sample_ratio = 0.3;
  int patch_size = 20;
  bool detach_anchor = false;  // drop the subgradient into the median pixel
};

/// Anchors sampled human pixels to the instance's ground-contact depth:
/// sum over instances of sum over sampled pixels of |D(p) - anchor| / D(p).
/// ceil(ratio * |instance|) pixels are drawn without replacement from a
/// stream seeded by (seed, instance id). Instances without ground-contact
/// candidates contribute nothing. The gradient reaches the sampled pixels
/// and, unless detached, the median-selected anchor pixel.
LossResult normal_scale_loss(const DepthField& depth, const InstanceMask& instances,
                             const Grid<std::uint8_t>& ground, std::uint64_t seed,
                             const NormalScaleOptions& options = {},
                             StructureLog* structure = nullptr);

}  // namespace depthopt
