#pragma once

#include <array>
#include <optional>

#include <Eigen/Core>

#include "depthopt/camera.hpp"
#include "depthopt/image.hpp"

namespace depthopt {

struct PixelCoord {
  double u = 0.0;
  double v = 0.0;
};

/// Camera-frame point of pixel p at the given depth (depth is the camera-z
/// coordinate, not the ray length). Throws on non-positive depth.
Eigen::Vector3d backproject(const PixelCoord& p, double depth, const Intrinsics& K);

/// Perspective projection. Empty when the point is at or behind the camera
/// plane; callers treat such pixels as invalid.
std::optional<PixelCoord> project(const Eigen::Vector3d& point, const Intrinsics& K);

/// Bilinear interpolation cell for (u,v). At the exact outer border the cell
/// index is clamped so all four corners exist; anything beyond [0,w-1]x[0,h-1]
/// is out of bounds (no padding).
struct SampleCell {
  int x0 = 0;
  int y0 = 0;
  double ax = 0.0;  // fractional position inside the cell
  double ay = 0.0;
  bool in_bounds = false;
};

SampleCell make_sample_cell(int width, int height, double u, double v);

struct SampleResult {
  double value = 0.0;
  bool in_bounds = false;
};

SampleResult bilinear_sample(const Grid<double>& field, const PixelCoord& uv);

struct SampleResultRGB {
  std::array<double, 3> value = {0.0, 0.0, 0.0};
  bool in_bounds = false;
};

SampleResultRGB bilinear_sample(const ImageRGB& image, const PixelCoord& uv);

/// Depth-aware variant: out of bounds or any invalid corner makes the sample
/// invalid.
SampleResult bilinear_sample(const DepthField& depth, const PixelCoord& uv);

/// Interpolated value plus its derivative with respect to (u,v) inside the
/// cell. The cell must be in bounds.
double sample_with_cell(const Grid<double>& field, const SampleCell& cell);
void sample_gradient_with_cell(const Grid<double>& field, const SampleCell& cell,
                               double* d_du, double* d_dv);

/// View synthesis of the target frame from a source image: each target pixel
/// is backprojected with its depth, moved by the target-to-source transform,
/// projected, and sampled bilinearly. Valid is false where the depth is
/// invalid, the moved point is behind the camera, or the sample leaves the
/// source image.
struct WarpedImage {
  ImageRGB image;  // zero-filled where invalid
  Grid<std::uint8_t> valid;
};

WarpedImage warp_frame(const ImageRGB& source, const DepthField& depth, const Intrinsics& K,
                       const PoseSE3& target_to_source);

/// Full warp record used by losses: keeps the sampling cells and the
/// derivative of the sample coordinates with respect to depth.
struct WarpField {
  Grid<std::uint8_t> valid;
  Grid<SampleCell> cells;
  Grid<double> du_ddepth;
  Grid<double> dv_ddepth;
};

WarpField compute_warp_field(const DepthField& depth, const Intrinsics& K,
                             const PoseSE3& target_to_source);

enum class InterpMode { kBilinear, kNearest };

/// warped(p) = field(p + flow(p)). Bilinear sampling requires all four cell
/// corners in bounds (and valid when a mask is supplied); nearest requires
/// the rounded source pixel in bounds and valid.
struct WarpedScalar {
  Grid<double> values;
  Grid<std::uint8_t> valid;
};

WarpedScalar flow_warp(const Grid<double>& field, const Grid<std::uint8_t>* field_valid,
                       const FlowField& flow, InterpMode mode);

/// Nearest-neighbor flow warp of an integer label map (keeps labels intact).
struct WarpedLabels {
  Grid<std::int32_t> values;
  Grid<std::uint8_t> valid;
};

WarpedLabels flow_warp_labels(const Grid<std::int32_t>& labels, const FlowField& flow);

}  // namespace depthopt
