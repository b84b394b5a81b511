#include "depthopt/optimizer.hpp"

#include <cmath>
#include <deque>
#include <stdexcept>

namespace depthopt {

DepthVariable DepthVariable::encode(const DepthField& depth) {
  DepthVariable var;
  var.log_depth = Grid<double>(depth.width(), depth.height(), 0.0);
  var.valid = depth.valid;
  for (std::size_t i = 0; i < depth.values.size(); ++i) {
    if (depth.valid[i]) var.log_depth[i] = std::log(depth.values[i]);
  }
  return var;
}

DepthField DepthVariable::decode() const {
  DepthField depth(width(), height());
  depth.valid = valid;
  for (std::size_t i = 0; i < log_depth.size(); ++i) {
    if (valid[i]) depth.values[i] = std::exp(log_depth[i]);
  }
  return depth;
}

TotalLoss total_loss(const FrameBundle& bundle, const DepthVariable& var,
                     std::span<const DepthVariable> neighbor_vars, const OptimizerConfig& cfg,
                     StructureLog* structure) {
  if (neighbor_vars.size() != bundle.neighbors.size()) {
    throw std::invalid_argument("total_loss: one depth variable per neighbor required");
  }
  const LossWeights& w = cfg.weights;
  const DepthField depth = var.decode();
  const int width = depth.width(), height = depth.height();

  TotalLoss out;
  Grid<double> grad_depth(width, height, 0.0);  // with respect to raw depth
  out.grad_neighbors.resize(bundle.neighbors.size());

  // Absolute-scale term on the sparse support.
  if (w.depth != 0.0) {
    const LossResult r = depth_loss(depth, bundle.sparse, structure);
    out.term_depth = r.value;
    out.degenerate |= r.degenerate;
    for (std::size_t i = 0; i < grad_depth.size(); ++i) grad_depth[i] += w.depth * r.grad[i];
  }

  // Photometric term over all neighbors at once (minimum reprojection).
  if (w.photometric != 0.0 && !bundle.neighbors.empty()) {
    std::vector<SourceFrame> sources;
    sources.reserve(bundle.neighbors.size());
    for (const NeighborFrame& nb : bundle.neighbors) {
      sources.push_back({nb.image, relative_pose(bundle.pose, nb.pose)});
    }
    const LossResult r =
        photometric_loss(bundle.image, sources, depth, bundle.K, cfg.photometric, structure);
    out.term_photometric = r.value;
    out.degenerate |= r.degenerate;
    for (std::size_t i = 0; i < grad_depth.size(); ++i) {
      grad_depth[i] += w.photometric * r.grad[i];
    }
  }

  const bool needs_inverse = (w.smoothness != 0.0 || w.flow_shape != 0.0);
  InverseDepthMap inv_t;
  if (needs_inverse) inv_t = mean_normalized_inverse_depth(depth);

  // Edge-aware smoothness over non-human pixels, chained through the
  // normalized inverse depth.
  if (w.smoothness != 0.0) {
    Grid<std::uint8_t> non_human(width, height, 0);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        non_human.at(x, y) = bundle.mask.ids.at(x, y) == 0 ? 1 : 0;
      }
    }
    const LossResult r =
        smoothness_loss(inv_t.values, &inv_t.valid, bundle.image, non_human, structure);
    out.term_smoothness = r.value;
    const Grid<double> g = chain_inverse_depth_grad(r.grad, depth, inv_t);
    for (std::size_t i = 0; i < grad_depth.size(); ++i) {
      grad_depth[i] += w.smoothness * g[i];
    }
  }

  // Flow-guided shape term, averaged over neighbors with a nonempty overlap.
  if (w.flow_shape != 0.0 && !bundle.neighbors.empty()) {
    Grid<double> grad_inv_total(width, height, 0.0);
    std::vector<std::pair<std::size_t, LossResult>> per_neighbor;
    std::vector<std::pair<std::size_t, InverseDepthMap>> neighbor_inv;
    for (std::size_t n = 0; n < bundle.neighbors.size(); ++n) {
      const NeighborFrame& nb = bundle.neighbors[n];
      const Grid<std::uint8_t> mask = overlap_mask(bundle.mask, nb.mask, nb.flow_to_neighbor);
      InverseDepthMap inv_n = mean_normalized_inverse_depth(neighbor_vars[n].decode());
      LossResult r =
          flow_shape_loss(inv_t, inv_n, nb.flow_to_neighbor, mask, structure);
      if (r.degenerate) continue;
      per_neighbor.emplace_back(n, std::move(r));
      neighbor_inv.emplace_back(n, std::move(inv_n));
    }
    if (per_neighbor.empty()) {
      out.degenerate = true;
    } else {
      const double scale = 1.0 / static_cast<double>(per_neighbor.size());
      for (std::size_t k = 0; k < per_neighbor.size(); ++k) {
        const auto& [n, r] = per_neighbor[k];
        out.term_flow_shape += scale * r.value;
        for (std::size_t i = 0; i < grad_inv_total.size(); ++i) {
          grad_inv_total[i] += scale * r.grad[i];
        }
        const DepthField nb_depth = neighbor_vars[n].decode();
        Grid<double> g_nb = chain_inverse_depth_grad(r.grad_other, nb_depth, neighbor_inv[k].second);
        Grid<double>& slot = out.grad_neighbors[n];
        if (slot.empty()) slot = Grid<double>(width, height, 0.0);
        for (std::size_t i = 0; i < slot.size(); ++i) {
          slot[i] += cfg.weights.flow_shape * scale * g_nb[i] * nb_depth.values[i];
        }
      }
      const Grid<double> g = chain_inverse_depth_grad(grad_inv_total, depth, inv_t);
      for (std::size_t i = 0; i < grad_depth.size(); ++i) {
        grad_depth[i] += w.flow_shape * g[i];
      }
    }
  }

  // Normal-guided scale term; the ground mask is recomputed from the current
  // depth estimate every evaluation.
  if (w.normal_scale != 0.0) {
    const NormalMap normals = surface_normals(depth, bundle.K);
    const Grid<std::uint8_t> ground =
        ground_mask(normals, cfg.ground_direction, cfg.ground_threshold_deg);
    NormalScaleOptions opts;
    opts.sample_ratio = cfg.sample_ratio;
    opts.patch_size = cfg.patch_size;
    opts.detach_anchor = cfg.detach_median;
    const LossResult r =
        normal_scale_loss(depth, bundle.mask, ground,
                          mix_seed(cfg.seed, static_cast<std::uint64_t>(bundle.frame_index)),
                          opts, structure);
    out.term_normal_scale = r.value;
    for (std::size_t i = 0; i < grad_depth.size(); ++i) {
      grad_depth[i] += w.normal_scale * r.grad[i];
    }
  }

  out.value = w.depth * out.term_depth + w.photometric * out.term_photometric +
              w.smoothness * out.term_smoothness + w.flow_shape * out.term_flow_shape +
              w.normal_scale * out.term_normal_scale;

  // Chain d depth / d s = depth for the exp parameterization.
  out.grad = Grid<double>(width, height, 0.0);
  for (std::size_t i = 0; i < grad_depth.size(); ++i) {
    if (var.valid[i]) out.grad[i] = grad_depth[i] * depth.values[i];
  }
  for (std::size_t n = 0; n < out.grad_neighbors.size(); ++n) {
    if (out.grad_neighbors[n].empty()) {
      out.grad_neighbors[n] = Grid<double>(width, height, 0.0);
    }
    for (std::size_t i = 0; i < out.grad_neighbors[n].size(); ++i) {
      if (!neighbor_vars[n].valid[i]) out.grad_neighbors[n][i] = 0.0;
    }
  }
  return out;
}

AdamState AdamState::init(const Grid<double>& params) {
  AdamState s;
  s.params = params;
  s.first_moment = Grid<double>(params.width(), params.height(), 0.0);
  s.second_moment = Grid<double>(params.width(), params.height(), 0.0);
  s.step = 0;
  return s;
}

AdamState adam_step(AdamState state, const Grid<double>& grad, double learning_rate,
                    double beta1, double beta2, double eps) {
  if (!state.params.same_size(grad)) {
    throw std::invalid_argument("adam_step: gradient dimensions differ from parameters");
  }
  state.step += 1;
  const double bias1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < state.params.size(); ++i) {
    const double g = grad[i];
    state.first_moment[i] = beta1 * state.first_moment[i] + (1.0 - beta1) * g;
    state.second_moment[i] = beta2 * state.second_moment[i] + (1.0 - beta2) * g * g;
    const double m_hat = state.first_moment[i] / bias1;
    const double v_hat = state.second_moment[i] / bias2;
    state.params[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + eps);
  }
  return state;
}

Grid<double> finite_diff_gradient(const std::function<double(const Grid<double>&)>& f,
                                  const Grid<double>& log_depth, double eps,
                                  std::span<const std::pair<int, int>> pixels) {
  Grid<double> grad(log_depth.width(), log_depth.height(), 0.0);
  Grid<double> probe = log_depth;
  for (const auto& [x, y] : pixels) {
    const double saved = probe.at(x, y);
    probe.at(x, y) = saved + eps;
    const double plus = f(probe);
    probe.at(x, y) = saved - eps;
    const double minus = f(probe);
    probe.at(x, y) = saved;
    grad.at(x, y) = (plus - minus) / (2.0 * eps);
  }
  return grad;
}

DepthField init_depth_from_sparse(const SparseDepth& sparse, double fallback_depth) {
  const int w = sparse.width(), h = sparse.height();
  DepthField out(w, h);
  out.valid.fill(1);
  if (sparse.count() == 0) {
    out.values.fill(fallback_depth);
    return out;
  }
  // Multi-source breadth-first fill: each pixel takes the value of the
  // nearest sparse sample (4-neighborhood distance, row-major tie order).
  Grid<std::uint8_t> seen(w, h, 0);
  std::deque<std::pair<int, int>> queue;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (sparse.valid.at(x, y)) {
        out.values.at(x, y) = sparse.values.at(x, y);
        seen.at(x, y) = 1;
        queue.emplace_back(x, y);
      }
    }
  }
  static constexpr int kSteps[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  while (!queue.empty()) {
    const auto [x, y] = queue.front();
    queue.pop_front();
    for (const auto& s : kSteps) {
      const int nx = x + s[0], ny = y + s[1];
      if (!seen.contains(nx, ny) || seen.at(nx, ny)) continue;
      seen.at(nx, ny) = 1;
      out.values.at(nx, ny) = out.values.at(x, y);
      queue.emplace_back(nx, ny);
    }
  }
  return out;
}

OptimizeResult optimize_frame(const FrameBundle& bundle, const DepthField& init,
                              const OptimizerConfig& cfg) {
  if (cfg.steps < 0 || !(cfg.learning_rate > 0.0) || cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 ||
      cfg.beta2 < 0.0 || cfg.beta2 >= 1.0) {
    throw std::invalid_argument("optimize_frame: bad optimizer configuration");
  }
  DepthVariable var = DepthVariable::encode(init);
  std::vector<DepthVariable> neighbor_vars;
  neighbor_vars.reserve(bundle.neighbors.size());
  for (const NeighborFrame& nb : bundle.neighbors) {
    neighbor_vars.push_back(DepthVariable::encode(init_depth_from_sparse(nb.sparse)));
  }

  AdamState state = AdamState::init(var.log_depth);
  std::vector<AdamState> neighbor_states;
  if (cfg.optimize_neighbors) {
    for (const DepthVariable& nv : neighbor_vars) {
      neighbor_states.push_back(AdamState::init(nv.log_depth));
    }
  }

  OptimizeResult result;
  result.trace.reserve(cfg.steps);
  for (int step = 0; step < cfg.steps; ++step) {
    var.log_depth = state.params;
    if (cfg.optimize_neighbors) {
      for (std::size_t n = 0; n < neighbor_vars.size(); ++n) {
        neighbor_vars[n].log_depth = neighbor_states[n].params;
      }
    }
    const TotalLoss loss = total_loss(bundle, var, neighbor_vars, cfg);
    if (!std::isfinite(loss.value)) {
      throw std::runtime_error("optimize_frame: non-finite loss at step " +
                               std::to_string(step));
    }
    result.trace.push_back({step, loss.value, loss.term_depth, loss.term_photometric,
                            loss.term_smoothness, loss.term_flow_shape,
                            loss.term_normal_scale});
    state = adam_step(std::move(state), loss.grad, cfg.learning_rate, cfg.beta1, cfg.beta2,
                      cfg.eps_adam);
    if (cfg.optimize_neighbors) {
      for (std::size_t n = 0; n < neighbor_states.size(); ++n) {
        neighbor_states[n] =
            adam_step(std::move(neighbor_states[n]), loss.grad_neighbors[n],
                      cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps_adam);
      }
    }
  }
  var.log_depth = state.params;
  if (cfg.optimize_neighbors) {
    for (std::size_t n = 0; n < neighbor_vars.size(); ++n) {
      neighbor_vars[n].log_depth = neighbor_states[n].params;
    }
  }
  result.depth = cfg.steps == 0 ? init : var.decode();
  for (const DepthVariable& nv : neighbor_vars) {
    result.neighbor_depths.push_back(nv.decode());
  }
  return result;
}

}  // namespace depthopt
