#include "depthopt/dynamic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "depthopt/geometry.hpp"

namespace depthopt {

namespace {

constexpr double kGradStabilizer = 1e-7;

inline double sign_of(double x) { return (x > 0.0) - (x < 0.0); }

/// Unbiased bounded draw from raw mt19937_64 words; identical on every
/// platform, unlike std::uniform_int_distribution.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

}  // namespace

InverseDepthMap mean_normalized_inverse_depth(const DepthField& depth) {
  InverseDepthMap out;
  out.values = Grid<double>(depth.width(), depth.height(), 0.0);
  out.valid = depth.valid;
  std::vector<double> inv;
  for (std::size_t i = 0; i < depth.values.size(); ++i) {
    if (!depth.valid[i]) continue;
    inv.push_back(1.0 / depth.values[i]);
  }
  if (inv.empty()) {
    throw std::invalid_argument("mean_normalized_inverse_depth: no valid pixel");
  }
  out.valid_count = static_cast<int>(inv.size());
  out.mean_inverse = pairwise_mean(inv);
  for (std::size_t i = 0; i < depth.values.size(); ++i) {
    if (!depth.valid[i]) continue;
    out.values[i] = (1.0 / depth.values[i]) / out.mean_inverse;
  }
  return out;
}

Grid<double> chain_inverse_depth_grad(const Grid<double>& grad_norm_inv,
                                      const DepthField& depth, const InverseDepthMap& inv) {
  // d*(p) = d(p)/mu with mu the mean of d over valid pixels; the mean couples
  // every pixel, so the chain has a pointwise part and a shared correction.
  std::vector<double> weighted;
  for (std::size_t i = 0; i < grad_norm_inv.size(); ++i) {
    if (!inv.valid[i]) continue;
    weighted.push_back(grad_norm_inv[i] * inv.values[i]);
  }
  const double coupled = weighted.empty() ? 0.0 : pairwise_sum(weighted);
  const double correction = coupled / (inv.mean_inverse * inv.valid_count);

  Grid<double> grad_depth(depth.width(), depth.height(), 0.0);
  for (std::size_t i = 0; i < grad_depth.size(); ++i) {
    if (!inv.valid[i]) continue;
    const double g_d = grad_norm_inv[i] / inv.mean_inverse - correction;
    const double dd = depth.values[i];
    grad_depth[i] = -g_d / (dd * dd);
  }
  return grad_depth;
}

Grid<std::uint8_t> overlap_mask(const InstanceMask& current, const InstanceMask& neighbor,
                                const FlowField& flow) {
  if (!current.ids.same_size(neighbor.ids) || !current.ids.same_size(flow.du)) {
    throw std::invalid_argument("overlap_mask: dimension mismatch");
  }
  const WarpedLabels warped = flow_warp_labels(neighbor.ids, flow);
  Grid<std::uint8_t> mask(current.width(), current.height(), 0);
  for (int y = 0; y < current.height(); ++y) {
    for (int x = 0; x < current.width(); ++x) {
      if (current.ids.at(x, y) > 0 && warped.valid.at(x, y) && warped.values.at(x, y) > 0) {
        mask.at(x, y) = 1;
      }
    }
  }
  return mask;
}

AxisMaps scale_invariant_gradient(const Grid<double>& values,
                                  const Grid<std::uint8_t>* valid) {
  const int w = values.width(), h = values.height();
  AxisMaps out;
  out.x = Grid<double>(w, h, 0.0);
  out.y = Grid<double>(w, h, 0.0);
  auto ok = [&](int x, int y) { return !valid || valid->at(x, y) != 0; };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!ok(x, y)) continue;
      if (x + 1 < w && ok(x + 1, y)) {
        const double diff = values.at(x + 1, y) - values.at(x, y);
        const double den = std::max(
            std::abs(values.at(x + 1, y)) + std::abs(values.at(x, y)), kGradStabilizer);
        out.x.at(x, y) = diff / den;
      }
      if (y + 1 < h && ok(x, y + 1)) {
        const double diff = values.at(x, y + 1) - values.at(x, y);
        const double den = std::max(
            std::abs(values.at(x, y + 1)) + std::abs(values.at(x, y)), kGradStabilizer);
        out.y.at(x, y) = diff / den;
      }
    }
  }
  return out;
}

namespace {

/// Derivatives of diff/max(|b|+|a|, eps) with respect to a (the base pixel)
/// and b (the forward neighbor), where diff = b - a. At the stabilized floor
/// the denominator is constant.
inline void norm_diff_partials(double a, double b, double* d_da, double* d_db) {
  const double raw = std::abs(b) + std::abs(a);
  const double den = std::max(raw, kGradStabilizer);
  const double n = b - a;
  const double sa = raw > kGradStabilizer ? sign_of(a) : 0.0;
  const double sb = raw > kGradStabilizer ? sign_of(b) : 0.0;
  *d_da = (-den - n * sa) / (den * den);
  *d_db = (den - n * sb) / (den * den);
}

}  // namespace

LossResult flow_shape_loss(const InverseDepthMap& inv_t, const InverseDepthMap& inv_neighbor,
                           const FlowField& flow, const Grid<std::uint8_t>& mask,
                           StructureLog* structure) {
  if (!inv_t.values.same_size(inv_neighbor.values) || !inv_t.values.same_size(flow.du) ||
      !inv_t.values.same_size(mask)) {
    throw std::invalid_argument("flow_shape_loss: dimension mismatch");
  }
  const int w = inv_t.values.width(), h = inv_t.values.height();

  LossResult out;
  out.grad = Grid<double>(w, h, 0.0);
  out.grad_other = Grid<double>(w, h, 0.0);
  out.error_map = Grid<double>(w, h, 0.0);

  int mask_count = 0;
  for (auto m : mask.values()) mask_count += (m != 0);
  if (mask_count == 0) {
    out.degenerate = true;
    return out;
  }

  // Warp the neighbor's normalized inverse depth onto this frame (bilinear),
  // keeping the cells for the backward pass.
  Grid<double> warped(w, h, 0.0);
  Grid<std::uint8_t> warped_valid(w, h, 0);
  Grid<SampleCell> cells(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const SampleCell cell =
          make_sample_cell(w, h, x + flow.du.at(x, y), y + flow.dv.at(x, y));
      if (!cell.in_bounds) continue;
      const int x1 = std::min(cell.x0 + 1, w - 1);
      const int y1 = std::min(cell.y0 + 1, h - 1);
      if (!inv_neighbor.valid.at(cell.x0, cell.y0) || !inv_neighbor.valid.at(x1, cell.y0) ||
          !inv_neighbor.valid.at(cell.x0, y1) || !inv_neighbor.valid.at(x1, y1)) {
        continue;
      }
      warped.at(x, y) = sample_with_cell(inv_neighbor.values, cell);
      warped_valid.at(x, y) = 1;
      cells.at(x, y) = cell;
    }
  }

  Grid<double> grad_warped(w, h, 0.0);
  const double inv_count = 1.0 / static_cast<double>(mask_count);
  std::vector<double> terms;

  auto axis_term = [&](int x, int y, int dx, int dy) {
    const int nx = x + dx, ny = y + dy;
    if (!inv_t.valid.at(x, y) || !inv_t.valid.at(nx, ny)) return;
    if (!warped_valid.at(x, y) || !warped_valid.at(nx, ny)) return;
    const double a_t = inv_t.values.at(x, y), b_t = inv_t.values.at(nx, ny);
    const double a_w = warped.at(x, y), b_w = warped.at(nx, ny);
    const double g_t =
        (b_t - a_t) / std::max(std::abs(b_t) + std::abs(a_t), kGradStabilizer);
    const double g_w =
        (b_w - a_w) / std::max(std::abs(b_w) + std::abs(a_w), kGradStabilizer);
    const double r = g_t - g_w;
    terms.push_back(std::abs(r) * inv_count);
    out.error_map.at(x, y) += std::abs(r);
    const double up = sign_of(r) * inv_count;
    double da = 0.0, db = 0.0;
    norm_diff_partials(a_t, b_t, &da, &db);
    out.grad.at(x, y) += up * da;
    out.grad.at(nx, ny) += up * db;
    norm_diff_partials(a_w, b_w, &da, &db);
    grad_warped.at(x, y) -= up * da;
    grad_warped.at(nx, ny) -= up * db;
    if (structure) {
      structure->push_back(static_cast<long long>(sign_of(r)));
      structure->push_back(static_cast<long long>(sign_of(b_t - a_t)));
      structure->push_back(static_cast<long long>(sign_of(b_w - a_w)));
    }
  };

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask.at(x, y)) continue;
      if (x + 1 < w) axis_term(x, y, 1, 0);
      if (y + 1 < h) axis_term(x, y, 0, 1);
    }
  }
  out.value = pairwise_sum(terms);

  // Scatter the warped-map gradient through the bilinear weights into the
  // neighbor's inverse-depth map.
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double g = grad_warped.at(x, y);
      if (g == 0.0 || !warped_valid.at(x, y)) continue;
      const SampleCell& cell = cells.at(x, y);
      const int x1 = std::min(cell.x0 + 1, w - 1);
      const int y1 = std::min(cell.y0 + 1, h - 1);
      out.grad_other.at(cell.x0, cell.y0) += g * (1.0 - cell.ax) * (1.0 - cell.ay);
      out.grad_other.at(x1, cell.y0) += g * cell.ax * (1.0 - cell.ay);
      out.grad_other.at(cell.x0, y1) += g * (1.0 - cell.ax) * cell.ay;
      out.grad_other.at(x1, y1) += g * cell.ax * cell.ay;
    }
  }
  if (structure) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const bool v = warped_valid.at(x, y);
        const SampleCell& cell = cells.at(x, y);
        structure->push_back(v ? cell.x0 + static_cast<long long>(cell.y0) * w : -1);
      }
    }
  }
  return out;
}

NormalMap surface_normals(const DepthField& depth, const Intrinsics& K) {
  const int w = depth.width(), h = depth.height();
  if (w != K.width || h != K.height) {
    throw std::invalid_argument("surface_normals: depth dimensions do not match K");
  }
  NormalMap out;
  out.nx = Grid<double>(w, h, 0.0);
  out.ny = Grid<double>(w, h, 0.0);
  out.nz = Grid<double>(w, h, 0.0);
  out.valid = Grid<std::uint8_t>(w, h, 0);

  // Offsets by compass direction; the pairs below are the four perpendicular
  // combinations covering all 8 neighbors.
  static constexpr int kOffsets[8][2] = {
      {1, 0},   // E
      {1, 1},   // SE
      {0, 1},   // S
      {-1, 1},  // SW
      {-1, 0},  // W
      {-1, -1}, // NW
      {0, -1},  // N
      {1, -1},  // NE
  };
  static constexpr int kPairs[4][2] = {{0, 2}, {1, 3}, {4, 6}, {5, 7}};

  for (int y = 1; y < h - 1; ++y) {
    for (int x = 1; x < w - 1; ++x) {
      bool all_valid = depth.is_valid(x, y);
      for (int k = 0; k < 8 && all_valid; ++k) {
        all_valid = depth.is_valid(x + kOffsets[k][0], y + kOffsets[k][1]);
      }
      if (!all_valid) continue;

      const Eigen::Vector3d center =
          backproject({double(x), double(y)}, depth.values.at(x, y), K);
      Eigen::Vector3d neighbors[8];
      for (int k = 0; k < 8; ++k) {
        const int nx = x + kOffsets[k][0];
        const int ny = y + kOffsets[k][1];
        neighbors[k] = backproject({double(nx), double(ny)}, depth.values.at(nx, ny), K);
      }

      Eigen::Vector3d sum = Eigen::Vector3d::Zero();
      int used = 0;
      for (const auto& pair : kPairs) {
        const Eigen::Vector3d vi = neighbors[pair[0]] - center;
        const Eigen::Vector3d vj = neighbors[pair[1]] - center;
        Eigen::Vector3d n = vi.cross(vj);
        const double len = n.norm();
        if (len < 1e-15) continue;
        n /= len;
        if (n.dot(center) > 0.0) n = -n;  // orient toward the camera
        sum += n;
        ++used;
      }
      if (used == 0) continue;
      const double len = sum.norm();
      if (len < 1e-12) continue;
      sum /= len;
      out.nx.at(x, y) = sum.x();
      out.ny.at(x, y) = sum.y();
      out.nz.at(x, y) = sum.z();
      out.valid.at(x, y) = 1;
    }
  }
  return out;
}

Grid<std::uint8_t> ground_mask(const NormalMap& normals, const Eigen::Vector3d& ground_dir,
                               double threshold_deg) {
  if (ground_dir.norm() < 1e-12) {
    throw std::invalid_argument("ground_mask: ground direction must be nonzero");
  }
  Eigen::Vector3d ref = ground_dir.normalized();
  // Camera-facing normals of a below-camera surface have non-positive y in
  // the y-down convention; flip the reference there once so either sign
  // convention of the input works.
  if (ref.y() > 0.0) ref = -ref;
  const double threshold_rad = threshold_deg * std::numbers::pi / 180.0;

  Grid<std::uint8_t> mask(normals.width(), normals.height(), 0);
  for (int y = 0; y < normals.height(); ++y) {
    for (int x = 0; x < normals.width(); ++x) {
      if (!normals.valid.at(x, y)) continue;
      const double c = std::clamp(ref.dot(normals.at(x, y)), -1.0, 1.0);
      if (std::acos(c) < threshold_rad) mask.at(x, y) = 1;
    }
  }
  return mask;
}

ContactPatch contact_patch(const InstanceMask& instances, int instance_id,
                           const Grid<std::uint8_t>& ground, const DepthField& depth,
                           int patch_size) {
  if (patch_size < 1) throw std::invalid_argument("contact_patch: patch size must be >= 1");
  ContactPatch patch;
  patch.instance_id = instance_id;

  // Bottom pixel: maximum v, ties broken by minimum u.
  int bu = -1, bv = -1;
  for (int y = 0; y < instances.height(); ++y) {
    for (int x = 0; x < instances.width(); ++x) {
      if (instances.ids.at(x, y) != instance_id) continue;
      if (y > bv || (y == bv && (bu < 0 || x < bu))) {
        bv = y;
        bu = x;
      }
    }
  }
  if (bv < 0) throw std::invalid_argument("contact_patch: instance is empty");

  patch.u0 = std::max(0, bu - patch_size / 2);
  patch.u1 = std::min(instances.width() - 1, bu + (patch_size - 1) / 2);
  patch.v0 = std::max(0, bv - patch_size / 2);
  patch.v1 = std::min(instances.height() - 1, bv + (patch_size - 1) / 2);

  for (int y = patch.v0; y <= patch.v1; ++y) {
    for (int x = patch.u0; x <= patch.u1; ++x) {
      if (ground.at(x, y) && depth.is_valid(x, y)) {
        patch.candidates.emplace_back(x, y);
      }
    }
  }
  if (patch.candidates.empty()) return patch;

  // Lower median with a deterministic pixel identity for the subgradient.
  std::vector<std::size_t> order(patch.candidates.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& pa = patch.candidates[a];
    const auto& pb = patch.candidates[b];
    const double da = depth.values.at(pa.first, pa.second);
    const double db = depth.values.at(pb.first, pb.second);
    if (da != db) return da < db;
    if (pa.second != pb.second) return pa.second < pb.second;
    return pa.first < pb.first;
  });
  const auto& median_pixel = patch.candidates[order[(order.size() - 1) / 2]];
  patch.has_anchor = true;
  patch.anchor_x = median_pixel.first;
  patch.anchor_y = median_pixel.second;
  patch.anchor_depth = depth.values.at(patch.anchor_x, patch.anchor_y);
  return patch;
}

LossResult normal_scale_loss(const DepthField& depth, const InstanceMask& instances,
                             const Grid<std::uint8_t>& ground, std::uint64_t seed,
                             const NormalScaleOptions& options, StructureLog* structure) {
  if (!depth.values.same_size(instances.ids) || !depth.values.same_size(ground)) {
    throw std::invalid_argument("normal_scale_loss: dimension mismatch");
  }
  if (!(options.sample_ratio > 0.0 && options.sample_ratio <= 1.0)) {
    throw std::invalid_argument("normal_scale_loss: sample ratio must be in (0,1]");
  }
  LossResult out;
  out.grad = Grid<double>(depth.width(), depth.height(), 0.0);
  out.error_map = Grid<double>(depth.width(), depth.height(), 0.0);

  const int max_id = instances.max_id();
  std::vector<double> terms;
  bool any_instance = false;

  for (int id = 1; id <= max_id; ++id) {
    std::vector<std::pair<int, int>> pixels;
    for (int y = 0; y < instances.height(); ++y) {
      for (int x = 0; x < instances.width(); ++x) {
        if (instances.ids.at(x, y) == id) pixels.emplace_back(x, y);
      }
    }
    if (pixels.empty()) continue;
    any_instance = true;

    const ContactPatch patch =
        contact_patch(instances, id, ground, depth, options.patch_size);
    if (structure) {
      structure->push_back(id);
      structure->push_back(patch.has_anchor ? 1 : 0);
      structure->push_back(patch.anchor_x + static_cast<long long>(patch.anchor_y) * 100000);
      structure->push_back(static_cast<long long>(patch.candidates.size()));
      for (const auto& c : patch.candidates) {
        structure->push_back(c.first + static_cast<long long>(c.second) * 100000);
      }
    }
    if (!patch.has_anchor) continue;  // no grounded anchor, skip the instance

    const std::size_t sample_count = static_cast<std::size_t>(
        std::ceil(options.sample_ratio * static_cast<double>(pixels.size())));
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(id)));
    // Partial Fisher-Yates over the row-major pixel list.
    for (std::size_t i = 0; i < sample_count; ++i) {
      const std::size_t j = i + uniform_below(rng, pixels.size() - i);
      std::swap(pixels[i], pixels[j]);
    }

    double anchor_grad = 0.0;
    for (std::size_t i = 0; i < sample_count; ++i) {
      const auto [x, y] = pixels[i];
      if (!depth.is_valid(x, y)) continue;
      const double d = depth.values.at(x, y);
      const double r = d - patch.anchor_depth;
      const double term = std::abs(r) / d;
      terms.push_back(term);
      out.error_map.at(x, y) += term;
      out.grad.at(x, y) += sign_of(r) / d - std::abs(r) / (d * d);
      anchor_grad += -sign_of(r) / d;
      if (structure) {
        structure->push_back(x + static_cast<long long>(y) * 100000);
        structure->push_back(static_cast<long long>(sign_of(r)));
      }
    }
    if (!options.detach_anchor) {
      out.grad.at(patch.anchor_x, patch.anchor_y) += anchor_grad;
    }
  }

  if (!any_instance) {
    out.degenerate = true;
    return out;
  }
  out.value = pairwise_sum(terms);
  return out;
}

}  // namespace depthopt
