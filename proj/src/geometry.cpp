#include "depthopt/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace depthopt {

Eigen::Vector3d backproject(const PixelCoord& p, double depth, const Intrinsics& K) {
  if (!(depth > 0.0)) {
    throw std::invalid_argument("backproject: depth must be positive");
  }
  return {depth * (p.u - K.cx) / K.fx, depth * (p.v - K.cy) / K.fy, depth};
}

std::optional<PixelCoord> project(const Eigen::Vector3d& point, const Intrinsics& K) {
  if (!(point.z() > 0.0)) return std::nullopt;
  return PixelCoord{K.fx * point.x() / point.z() + K.cx,
                    K.fy * point.y() / point.z() + K.cy};
}

SampleCell make_sample_cell(int width, int height, double u, double v) {
  SampleCell cell;
  if (width < 1 || height < 1) return cell;
  if (!(u >= 0.0 && v >= 0.0 && u <= width - 1.0 && v <= height - 1.0)) return cell;
  cell.in_bounds = true;
  if (width == 1) {
    cell.x0 = 0;
    cell.ax = 0.0;
  } else {
    cell.x0 = std::min(static_cast<int>(std::floor(u)), width - 2);
    cell.ax = u - cell.x0;
  }
  if (height == 1) {
    cell.y0 = 0;
    cell.ay = 0.0;
  } else {
    cell.y0 = std::min(static_cast<int>(std::floor(v)), height - 2);
    cell.ay = v - cell.y0;
  }
  return cell;
}

double sample_with_cell(const Grid<double>& field, const SampleCell& cell) {
  const int x1 = std::min(cell.x0 + 1, field.width() - 1);
  const int y1 = std::min(cell.y0 + 1, field.height() - 1);
  const double f00 = field.at(cell.x0, cell.y0);
  const double f10 = field.at(x1, cell.y0);
  const double f01 = field.at(cell.x0, y1);
  const double f11 = field.at(x1, y1);
  const double ax = cell.ax, ay = cell.ay;
  return (1.0 - ax) * (1.0 - ay) * f00 + ax * (1.0 - ay) * f10 + (1.0 - ax) * ay * f01 +
         ax * ay * f11;
}

void sample_gradient_with_cell(const Grid<double>& field, const SampleCell& cell,
                               double* d_du, double* d_dv) {
  const int x1 = std::min(cell.x0 + 1, field.width() - 1);
  const int y1 = std::min(cell.y0 + 1, field.height() - 1);
  const double f00 = field.at(cell.x0, cell.y0);
  const double f10 = field.at(x1, cell.y0);
  const double f01 = field.at(cell.x0, y1);
  const double f11 = field.at(x1, y1);
  *d_du = (1.0 - cell.ay) * (f10 - f00) + cell.ay * (f11 - f01);
  *d_dv = (1.0 - cell.ax) * (f01 - f00) + cell.ax * (f11 - f10);
}

SampleResult bilinear_sample(const Grid<double>& field, const PixelCoord& uv) {
  const SampleCell cell = make_sample_cell(field.width(), field.height(), uv.u, uv.v);
  if (!cell.in_bounds) return {0.0, false};
  return {sample_with_cell(field, cell), true};
}

SampleResultRGB bilinear_sample(const ImageRGB& image, const PixelCoord& uv) {
  const SampleCell cell = make_sample_cell(image.width(), image.height(), uv.u, uv.v);
  if (!cell.in_bounds) return {};
  SampleResultRGB out;
  out.in_bounds = true;
  for (int c = 0; c < 3; ++c) out.value[c] = sample_with_cell(image.channel(c), cell);
  return out;
}

SampleResult bilinear_sample(const DepthField& depth, const PixelCoord& uv) {
  const SampleCell cell = make_sample_cell(depth.width(), depth.height(), uv.u, uv.v);
  if (!cell.in_bounds) return {0.0, false};
  const int x1 = std::min(cell.x0 + 1, depth.width() - 1);
  const int y1 = std::min(cell.y0 + 1, depth.height() - 1);
  if (!depth.valid.at(cell.x0, cell.y0) || !depth.valid.at(x1, cell.y0) ||
      !depth.valid.at(cell.x0, y1) || !depth.valid.at(x1, y1)) {
    return {0.0, false};
  }
  return {sample_with_cell(depth.values, cell), true};
}

WarpField compute_warp_field(const DepthField& depth, const Intrinsics& K,
                             const PoseSE3& target_to_source) {
  const int w = depth.width();
  const int h = depth.height();
  if (w != K.width || h != K.height) {
    throw std::invalid_argument("compute_warp_field: depth dimensions do not match K");
  }
  WarpField out;
  out.valid = Grid<std::uint8_t>(w, h, 0);
  out.cells = Grid<SampleCell>(w, h);
  out.du_ddepth = Grid<double>(w, h, 0.0);
  out.dv_ddepth = Grid<double>(w, h, 0.0);

  const Eigen::Matrix3d& R = target_to_source.rotation();
  const Eigen::Vector3d& t = target_to_source.translation();
  constexpr double kMinZ = 1e-6;

  // An exact identity transform maps every pixel to itself with no depth
  // dependence; short-circuiting keeps that case bit-exact instead of
  // round-tripping through the projection arithmetic.
  if (R == Eigen::Matrix3d::Identity() && t == Eigen::Vector3d::Zero()) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!depth.is_valid(x, y)) continue;
        out.valid.at(x, y) = 1;
        out.cells.at(x, y) = make_sample_cell(w, h, double(x), double(y));
      }
    }
    return out;
  }

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!depth.is_valid(x, y)) continue;
      const double d = depth.values.at(x, y);
      const Eigen::Vector3d dir((x - K.cx) / K.fx, (y - K.cy) / K.fy, 1.0);
      const Eigen::Vector3d rdir = R * dir;  // d P' / d depth
      const Eigen::Vector3d p = d * rdir + t;
      if (!(p.z() > kMinZ)) continue;
      const double u = K.fx * p.x() / p.z() + K.cx;
      const double v = K.fy * p.y() / p.z() + K.cy;
      const SampleCell cell = make_sample_cell(w, h, u, v);
      if (!cell.in_bounds) continue;
      const double inv_z2 = 1.0 / (p.z() * p.z());
      out.valid.at(x, y) = 1;
      out.cells.at(x, y) = cell;
      out.du_ddepth.at(x, y) = K.fx * (rdir.x() * p.z() - p.x() * rdir.z()) * inv_z2;
      out.dv_ddepth.at(x, y) = K.fy * (rdir.y() * p.z() - p.y() * rdir.z()) * inv_z2;
    }
  }
  return out;
}

WarpedImage warp_frame(const ImageRGB& source, const DepthField& depth, const Intrinsics& K,
                       const PoseSE3& target_to_source) {
  if (!source.same_size(depth.values)) {
    throw std::invalid_argument("warp_frame: image and depth dimensions differ");
  }
  const WarpField warp = compute_warp_field(depth, K, target_to_source);
  WarpedImage out;
  out.image = ImageRGB(depth.width(), depth.height());
  out.valid = warp.valid;
  for (int y = 0; y < depth.height(); ++y) {
    for (int x = 0; x < depth.width(); ++x) {
      if (!warp.valid.at(x, y)) continue;
      const SampleCell& cell = warp.cells.at(x, y);
      for (int c = 0; c < 3; ++c) {
        out.image.at(c, x, y) = sample_with_cell(source.channel(c), cell);
      }
    }
  }
  return out;
}

WarpedScalar flow_warp(const Grid<double>& field, const Grid<std::uint8_t>* field_valid,
                       const FlowField& flow, InterpMode mode) {
  if (!field.same_size(flow.du)) {
    throw std::invalid_argument("flow_warp: field and flow dimensions differ");
  }
  const int w = field.width();
  const int h = field.height();
  WarpedScalar out;
  out.values = Grid<double>(w, h, 0.0);
  out.valid = Grid<std::uint8_t>(w, h, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double u = x + flow.du.at(x, y);
      const double v = y + flow.dv.at(x, y);
      if (mode == InterpMode::kNearest) {
        const int sx = static_cast<int>(std::lround(u));
        const int sy = static_cast<int>(std::lround(v));
        if (!field.contains(sx, sy)) continue;
        if (field_valid && !field_valid->at(sx, sy)) continue;
        out.values.at(x, y) = field.at(sx, sy);
        out.valid.at(x, y) = 1;
      } else {
        const SampleCell cell = make_sample_cell(w, h, u, v);
        if (!cell.in_bounds) continue;
        if (field_valid) {
          const int x1 = std::min(cell.x0 + 1, w - 1);
          const int y1 = std::min(cell.y0 + 1, h - 1);
          if (!field_valid->at(cell.x0, cell.y0) || !field_valid->at(x1, cell.y0) ||
              !field_valid->at(cell.x0, y1) || !field_valid->at(x1, y1)) {
            continue;
          }
        }
        out.values.at(x, y) = sample_with_cell(field, cell);
        out.valid.at(x, y) = 1;
      }
    }
  }
  return out;
}

WarpedLabels flow_warp_labels(const Grid<std::int32_t>& labels, const FlowField& flow) {
  if (!labels.same_size(flow.du)) {
    throw std::invalid_argument("flow_warp_labels: label and flow dimensions differ");
  }
  WarpedLabels out;
  out.values = Grid<std::int32_t>(labels.width(), labels.height(), 0);
  out.valid = Grid<std::uint8_t>(labels.width(), labels.height(), 0);
  for (int y = 0; y < labels.height(); ++y) {
    for (int x = 0; x < labels.width(); ++x) {
      const int sx = static_cast<int>(std::lround(x + flow.du.at(x, y)));
      const int sy = static_cast<int>(std::lround(y + flow.dv.at(x, y)));
      if (!labels.contains(sx, sy)) continue;
      out.values.at(x, y) = labels.at(sx, sy);
      out.valid.at(x, y) = 1;
    }
  }
  return out;
}

}  // namespace depthopt
