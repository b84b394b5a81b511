#pragma once

#include <array>
#include <cstdint>

#include "depthopt/grid.hpp"

namespace depthopt {

/// 3-channel intensity image, values in [0,1], stored as planar channels.
class ImageRGB {
 public:
  ImageRGB() = default;
  ImageRGB(int width, int height) {
    for (auto& c : channels_) c = Grid<double>(width, height);
  }

  int width() const { return channels_[0].width(); }
  int height() const { return channels_[0].height(); }

  Grid<double>& channel(int c) { return channels_[c]; }
  const Grid<double>& channel(int c) const { return channels_[c]; }

  double at(int c, int x, int y) const { return channels_[c].at(x, y); }
  double& at(int c, int x, int y) { return channels_[c].at(x, y); }

  template <typename G>
  bool same_size(const G& other) const {
    return width() == other.width() && height() == other.height();
  }

  bool operator==(const ImageRGB&) const = default;

 private:
  std::array<Grid<double>, 3> channels_;
};

/// Per-pixel metric depth with a validity mask. Invalid pixels never enter
/// a loss or a metric; valid values are finite and strictly positive.
struct DepthField {
  Grid<double> values;
  Grid<std::uint8_t> valid;

  DepthField() = default;
  DepthField(int width, int height) : values(width, height), valid(width, height, 0) {}

  int width() const { return values.width(); }
  int height() const { return values.height(); }
  bool is_valid(int x, int y) const { return valid.at(x, y) != 0; }

  int valid_count() const {
    int n = 0;
    for (auto v : valid.values()) n += (v != 0);
    return n;
  }

  static DepthField constant(int width, int height, double depth) {
    DepthField d(width, height);
    d.values.fill(depth);
    d.valid.fill(1);
    return d;
  }
};

/// Validity-masked absolute-scale depth samples (the sparse supervision set).
struct SparseDepth {
  Grid<double> values;
  Grid<std::uint8_t> valid;

  SparseDepth() = default;
  SparseDepth(int width, int height) : values(width, height), valid(width, height, 0) {}

  int width() const { return values.width(); }
  int height() const { return values.height(); }

  int count() const {
    int n = 0;
    for (auto v : valid.values()) n += (v != 0);
    return n;
  }
};

/// Dense per-pixel 2D displacement in pixels. flow(p) points from a pixel of
/// the frame it is attached to into the coordinates of the paired frame.
struct FlowField {
  Grid<double> du;
  Grid<double> dv;

  FlowField() = default;
  FlowField(int width, int height) : du(width, height, 0.0), dv(width, height, 0.0) {}

  int width() const { return du.width(); }
  int height() const { return du.height(); }
};

/// Per-pixel instance labels: 0 is background, k >= 1 is pedestrian k.
struct InstanceMask {
  Grid<std::int32_t> ids;

  InstanceMask() = default;
  InstanceMask(int width, int height) : ids(width, height, 0) {}

  int width() const { return ids.width(); }
  int height() const { return ids.height(); }
  bool is_human(int x, int y) const { return ids.at(x, y) > 0; }

  int max_id() const {
    std::int32_t m = 0;
    for (auto v : ids.values())
      if (v > m) m = v;
    return m;
  }
};

}  // namespace depthopt
