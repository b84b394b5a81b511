#include "depthopt/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace depthopt {

namespace {

constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

inline double sign_of(double x) { return (x > 0.0) - (x < 0.0); }

inline int clamp_index(int i, int n) { return std::clamp(i, 0, n - 1); }

/// 3x3 mean filter with edge-replicate padding.
Grid<double> box3_replicate(const Grid<double>& in) {
  const int w = in.width(), h = in.height();
  Grid<double> out(w, h, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          s += in.at(clamp_index(x + dx, w), clamp_index(y + dy, h));
        }
      }
      out.at(x, y) = s / 9.0;
    }
  }
  return out;
}

/// Transpose of box3_replicate: scatters each upstream value back to the
/// clamped source pixels.
Grid<double> box3_adjoint(const Grid<double>& upstream) {
  const int w = upstream.width(), h = upstream.height();
  Grid<double> out(w, h, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double g = upstream.at(x, y) / 9.0;
      if (g == 0.0) continue;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          out.at(clamp_index(x + dx, w), clamp_index(y + dy, h)) += g;
        }
      }
    }
  }
  return out;
}

/// Cached moment maps of one channel pair (a fixed, b differentiated).
struct SsimChannel {
  Grid<double> ma, mb, raa, rab, rbb;  // box means of a, b, a*a, a*b, b*b
  Grid<double> ssim;
};

SsimChannel ssim_channel(const Grid<double>& a, const Grid<double>& b) {
  const int w = a.width(), h = a.height();
  Grid<double> aa(w, h), ab(w, h), bb(w, h);
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    ab[i] = a[i] * b[i];
    bb[i] = b[i] * b[i];
  }
  SsimChannel out;
  out.ma = box3_replicate(a);
  out.mb = box3_replicate(b);
  out.raa = box3_replicate(aa);
  out.rab = box3_replicate(ab);
  out.rbb = box3_replicate(bb);
  out.ssim = Grid<double>(w, h, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double ma = out.ma[i], mb = out.mb[i];
    const double cov = out.rab[i] - ma * mb;
    const double var_a = out.raa[i] - ma * ma;
    const double var_b = out.rbb[i] - mb * mb;
    const double n1 = 2.0 * ma * mb + kC1;
    const double n2 = 2.0 * cov + kC2;
    const double d1 = ma * ma + mb * mb + kC1;
    const double d2 = var_a + var_b + kC2;
    out.ssim[i] = (n1 * n2) / (d1 * d2);
  }
  return out;
}

/// Accumulates d(sum of upstream * ssim)/d(b) into grad_b.
void ssim_backprop_b(const SsimChannel& maps, const Grid<double>& a, const Grid<double>& b,
                     const Grid<double>& upstream, Grid<double>& grad_b) {
  const int w = a.width(), h = a.height();
  Grid<double> g_mb(w, h, 0.0), g_rab(w, h, 0.0), g_rbb(w, h, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double u = upstream[i];
    if (u == 0.0) continue;
    const double ma = maps.ma[i], mb = maps.mb[i];
    const double n1 = 2.0 * ma * mb + kC1;
    const double n2 = 2.0 * (maps.rab[i] - ma * mb) + kC2;
    const double d1 = ma * ma + mb * mb + kC1;
    const double d2 = (maps.raa[i] - ma * ma) + (maps.rbb[i] - mb * mb) + kC2;
    const double s = (n1 * n2) / (d1 * d2);
    g_mb[i] = u * (2.0 * ma * (n2 - n1) / (d1 * d2) - 2.0 * mb * s * (1.0 / d1 - 1.0 / d2));
    g_rab[i] = u * 2.0 * n1 / (d1 * d2);
    g_rbb[i] = u * (-s / d2);
  }
  const Grid<double> adj_mb = box3_adjoint(g_mb);
  const Grid<double> adj_rab = box3_adjoint(g_rab);
  const Grid<double> adj_rbb = box3_adjoint(g_rbb);
  for (std::size_t i = 0; i < a.size(); ++i) {
    grad_b[i] += adj_mb[i] + a[i] * adj_rab[i] + 2.0 * b[i] * adj_rbb[i];
  }
}

struct SourceEval {
  ImageRGB warped;                  // target values where the warp is invalid
  WarpField warp;
  std::array<SsimChannel, 3> ssim;  // against the warped image
  Grid<double> error;               // mixed SSIM/L1 error per pixel
  Grid<double> identity_error;      // same mix against the unwarped source
};

Grid<double> mixed_error(const ImageRGB& target, const ImageRGB& other,
                         const std::array<SsimChannel, 3>& ssim, double alpha) {
  const int w = target.width(), h = target.height();
  Grid<double> e(w, h, 0.0);
  for (std::size_t i = 0; i < e.size(); ++i) {
    double s = 0.0, l1 = 0.0;
    for (int c = 0; c < 3; ++c) {
      s += ssim[c].ssim[i];
      l1 += std::abs(target.channel(c)[i] - other.channel(c)[i]);
    }
    s /= 3.0;
    l1 /= 3.0;
    e[i] = alpha * 0.5 * (1.0 - s) + (1.0 - alpha) * l1;
  }
  return e;
}

}  // namespace

LossResult depth_loss(const DepthField& estimate, const SparseDepth& targets,
                      StructureLog* structure) {
  if (!estimate.values.same_size(targets.values)) {
    throw std::invalid_argument("depth_loss: dimension mismatch");
  }
  LossResult out;
  out.grad = Grid<double>(estimate.width(), estimate.height(), 0.0);
  out.error_map = Grid<double>(estimate.width(), estimate.height(), 0.0);
  std::vector<double> terms;
  for (int y = 0; y < estimate.height(); ++y) {
    for (int x = 0; x < estimate.width(); ++x) {
      if (!targets.valid.at(x, y)) continue;
      if (!estimate.is_valid(x, y)) {
        throw std::invalid_argument("depth_loss: estimate invalid on the sparse support");
      }
      const double r = estimate.values.at(x, y) - targets.values.at(x, y);
      terms.push_back(std::abs(r));
      out.grad.at(x, y) = sign_of(r);
      out.error_map.at(x, y) = std::abs(r);
      if (structure) structure->push_back(static_cast<long long>(sign_of(r)));
    }
  }
  if (terms.empty()) {
    out.degenerate = true;
    return out;
  }
  out.value = pairwise_sum(terms);
  return out;
}

Grid<double> ssim_map(const ImageRGB& a, const ImageRGB& b) {
  if (!a.same_size(b)) throw std::invalid_argument("ssim_map: dimension mismatch");
  Grid<double> out(a.width(), a.height(), 0.0);
  for (int c = 0; c < 3; ++c) {
    const SsimChannel m = ssim_channel(a.channel(c), b.channel(c));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += m.ssim[i] / 3.0;
  }
  return out;
}

LossResult photometric_loss(const ImageRGB& target, std::span<const SourceFrame> sources,
                            const DepthField& depth, const Intrinsics& K,
                            const PhotometricOptions& options, StructureLog* structure) {
  if (sources.empty()) {
    throw std::invalid_argument("photometric_loss: at least one source frame required");
  }
  if (!target.same_size(depth.values)) {
    throw std::invalid_argument("photometric_loss: dimension mismatch");
  }
  const int w = target.width(), h = target.height();
  const double alpha = options.alpha;

  std::vector<SourceEval> evals;
  evals.reserve(sources.size());
  for (const SourceFrame& src : sources) {
    if (!src.image.same_size(target)) {
      throw std::invalid_argument("photometric_loss: source dimension mismatch");
    }
    SourceEval ev;
    ev.warp = compute_warp_field(depth, K, src.target_to_source);
    ev.warped = target;  // neutral fill keeps SSIM finite next to invalid pixels
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!ev.warp.valid.at(x, y)) continue;
        for (int c = 0; c < 3; ++c) {
          ev.warped.at(c, x, y) = sample_with_cell(src.image.channel(c), ev.warp.cells.at(x, y));
        }
      }
    }
    for (int c = 0; c < 3; ++c) {
      ev.ssim[c] = ssim_channel(target.channel(c), ev.warped.channel(c));
    }
    ev.error = mixed_error(target, ev.warped, ev.ssim, alpha);

    std::array<SsimChannel, 3> ssim_id;
    for (int c = 0; c < 3; ++c) {
      ssim_id[c] = ssim_channel(target.channel(c), src.image.channel(c));
    }
    ev.identity_error = mixed_error(target, src.image, ssim_id, alpha);
    evals.push_back(std::move(ev));
  }

  // Minimum reprojection over valid sources, auto-mask against the best
  // unwarped error (strict <).
  Grid<std::int8_t> argmin(w, h, -1);
  Grid<std::uint8_t> kept(w, h, 0);
  Grid<double> min_error(w, h, 0.0);
  std::vector<double> kept_terms;
  std::vector<std::size_t> kept_index;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int best = -1;
      double best_e = 0.0;
      double best_id = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < evals.size(); ++j) {
        best_id = std::min(best_id, evals[j].identity_error.at(x, y));
        if (!evals[j].warp.valid.at(x, y)) continue;
        const double e = evals[j].error.at(x, y);
        if (best < 0 || e < best_e) {
          best = static_cast<int>(j);
          best_e = e;
        }
      }
      argmin.at(x, y) = static_cast<std::int8_t>(best);
      if (best < 0) continue;
      min_error.at(x, y) = best_e;
      if (best_e < best_id) {
        kept.at(x, y) = 1;
        kept_terms.push_back(best_e);
      }
    }
  }

  LossResult out;
  out.grad = Grid<double>(w, h, 0.0);
  out.error_map = min_error;
  out.automask = kept;
  if (structure) {
    for (std::size_t i = 0; i < kept.size(); ++i) {
      structure->push_back(kept[i]);
      structure->push_back(argmin[i]);
    }
    for (const SourceEval& ev : evals) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const bool valid = ev.warp.valid.at(x, y);
          const SampleCell& cell = ev.warp.cells.at(x, y);
          structure->push_back(valid ? cell.x0 + static_cast<long long>(cell.y0) * w : -1);
          if (valid) {
            for (int c = 0; c < 3; ++c) {
              structure->push_back(static_cast<long long>(
                  sign_of(target.at(c, x, y) - ev.warped.at(c, x, y))));
            }
          }
        }
      }
    }
  }
  if (kept_terms.empty()) {
    out.degenerate = true;
    return out;
  }
  out.value = pairwise_mean(kept_terms);
  const double inv_n = 1.0 / static_cast<double>(kept_terms.size());

  // Backward pass per source: upstream weight inv_n at kept-argmin pixels,
  // first to the warped intensities (pointwise L1 plus the SSIM moment
  // filters), then through the bilinear sampler and the projection to depth.
  for (std::size_t j = 0; j < evals.size(); ++j) {
    const SourceEval& ev = evals[j];
    Grid<double> weight(w, h, 0.0);
    bool any = false;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (kept.at(x, y) && argmin.at(x, y) == static_cast<int>(j)) {
          weight.at(x, y) = inv_n;
          any = true;
        }
      }
    }
    if (!any) continue;

    std::array<Grid<double>, 3> g_image;
    Grid<double> ssim_upstream(w, h, 0.0);
    for (std::size_t i = 0; i < weight.size(); ++i) {
      ssim_upstream[i] = weight[i] * (-alpha / 6.0);  // d e / d ssim_c, 3 channels
    }
    for (int c = 0; c < 3; ++c) {
      g_image[c] = Grid<double>(w, h, 0.0);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const double u = weight.at(x, y);
          if (u == 0.0) continue;
          const double diff = target.at(c, x, y) - ev.warped.at(c, x, y);
          g_image[c].at(x, y) += u * (1.0 - alpha) / 3.0 * (-sign_of(diff));
        }
      }
      ssim_backprop_b(ev.ssim[c], target.channel(c), ev.warped.channel(c), ssim_upstream,
                      g_image[c]);
    }
    const SourceFrame& src = sources[j];
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!ev.warp.valid.at(x, y)) continue;  // fill pixels do not depend on depth
        const SampleCell& cell = ev.warp.cells.at(x, y);
        double acc = 0.0;
        for (int c = 0; c < 3; ++c) {
          const double g = g_image[c].at(x, y);
          if (g == 0.0) continue;
          double d_du = 0.0, d_dv = 0.0;
          sample_gradient_with_cell(src.image.channel(c), cell, &d_du, &d_dv);
          acc += g * (d_du * ev.warp.du_ddepth.at(x, y) + d_dv * ev.warp.dv_ddepth.at(x, y));
        }
        out.grad.at(x, y) += acc;
      }
    }
  }
  return out;
}

LossResult smoothness_loss(const Grid<double>& norm_inv_depth,
                           const Grid<std::uint8_t>* inv_valid, const ImageRGB& image,
                           const Grid<std::uint8_t>& mask, StructureLog* structure) {
  if (!norm_inv_depth.same_size(image.channel(0)) || !norm_inv_depth.same_size(mask)) {
    throw std::invalid_argument("smoothness_loss: dimension mismatch");
  }
  const int w = norm_inv_depth.width(), h = norm_inv_depth.height();
  LossResult out;
  out.grad = Grid<double>(w, h, 0.0);
  out.error_map = Grid<double>(w, h, 0.0);

  auto pixel_valid = [&](int x, int y) { return !inv_valid || inv_valid->at(x, y) != 0; };
  auto image_grad = [&](int x, int y, int dx, int dy) {
    double g = 0.0;
    for (int c = 0; c < 3; ++c) {
      g += std::abs(image.at(c, x + dx, y + dy) - image.at(c, x, y));
    }
    return g / 3.0;
  };

  // Averaged over the mask so the regularizer's per-pixel pull is independent
  // of the image size; the companion weights were tuned against an averaged
  // smoothness term.
  int mask_count = 0;
  for (auto m : mask.values()) mask_count += (m != 0);

  std::vector<double> terms;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask.at(x, y) || !pixel_valid(x, y)) continue;
      if (x + 1 < w && pixel_valid(x + 1, y)) {
        const double d = norm_inv_depth.at(x + 1, y) - norm_inv_depth.at(x, y);
        const double wgt = std::exp(-image_grad(x, y, 1, 0));
        terms.push_back(std::abs(d) * wgt);
        out.error_map.at(x, y) += std::abs(d) * wgt;
        const double s = sign_of(d);
        out.grad.at(x, y) -= s * wgt;
        out.grad.at(x + 1, y) += s * wgt;
        if (structure) structure->push_back(static_cast<long long>(s));
      }
      if (y + 1 < h && pixel_valid(x, y + 1)) {
        const double d = norm_inv_depth.at(x, y + 1) - norm_inv_depth.at(x, y);
        const double wgt = std::exp(-image_grad(x, y, 0, 1));
        terms.push_back(std::abs(d) * wgt);
        out.error_map.at(x, y) += std::abs(d) * wgt;
        const double s = sign_of(d);
        out.grad.at(x, y) -= s * wgt;
        out.grad.at(x, y + 1) += s * wgt;
        if (structure) structure->push_back(static_cast<long long>(s));
      }
    }
  }
  if (terms.empty() || mask_count == 0) {
    out.degenerate = true;
    return out;
  }
  const double inv_count = 1.0 / static_cast<double>(mask_count);
  out.value = pairwise_sum(terms) * inv_count;
  for (auto& g : out.grad.values()) g *= inv_count;
  for (auto& e : out.error_map.values()) e *= inv_count;
  return out;
}

}  // namespace depthopt
