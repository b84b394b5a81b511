#include "depthopt/synth.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

#include <Eigen/Geometry>

#include "depthopt/geometry.hpp"

namespace depthopt {

namespace {

constexpr double kRayMin = 1e-9;

double to_unit(std::uint64_t word) { return static_cast<double>(word >> 11) * 0x1.0p-53; }

double lattice_hash(long long ix, long long iy, std::uint64_t salt) {
  std::uint64_t h = mix_seed(salt, static_cast<std::uint64_t>(ix) * 0x632be59bd9b4e019ULL ^
                                       static_cast<std::uint64_t>(iy));
  return to_unit(h);
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

double value_noise(double sx, double sy, std::uint64_t salt) {
  const double fx = std::floor(sx), fy = std::floor(sy);
  const long long ix = static_cast<long long>(fx), iy = static_cast<long long>(fy);
  const double u = smoothstep(sx - fx), v = smoothstep(sy - fy);
  const double h00 = lattice_hash(ix, iy, salt);
  const double h10 = lattice_hash(ix + 1, iy, salt);
  const double h01 = lattice_hash(ix, iy + 1, salt);
  const double h11 = lattice_hash(ix + 1, iy + 1, salt);
  return (1.0 - u) * (1.0 - v) * h00 + u * (1.0 - v) * h10 + (1.0 - u) * v * h01 + u * v * h11;
}

double surface_color(const SceneConfig& cfg, int surface_id, int channel,
                     const Eigen::Vector2d& local) {
  const std::uint64_t salt =
      mix_seed(cfg.seed, static_cast<std::uint64_t>(surface_id) * 4 + channel);
  const double s = cfg.texture_scale;
  const double n1 = value_noise(local.x() / s, local.y() / s, salt);
  const double n2 =
      value_noise(local.x() / (2.3 * s) + 17.31, local.y() / (2.3 * s) + 9.17,
                  mix_seed(salt, 0x5eedULL));
  const double n = 0.65 * n1 + 0.35 * n2;
  const double c = 0.5 + cfg.texture_amplitude * (n - 0.5);
  return std::clamp(c, 0.0, 1.0);
}

struct Box {
  Eigen::Vector3d min;
  Eigen::Vector3d max;
};

Box pedestrian_box(const PedestrianSpec& ped, int frame) {
  const Eigen::Vector2d c = ped.center_xz + static_cast<double>(frame) * ped.velocity_xz;
  Box b;
  b.min = {c.x() - ped.width / 2.0, -ped.height, c.y() - ped.depth / 2.0};
  b.max = {c.x() + ped.width / 2.0, 0.0, c.y() + ped.depth / 2.0};
  return b;
}

bool box_contains(const Box& b, const Eigen::Vector3d& p) {
  return p.x() > b.min.x() && p.x() < b.max.x() && p.y() > b.min.y() && p.y() < b.max.y() &&
         p.z() > b.min.z() && p.z() < b.max.z();
}

/// Slab intersection; returns the entry parameter and face, or a negative t.
struct BoxHit {
  double t = -1.0;
  int axis = 0;
  bool positive_side = false;
};

BoxHit intersect_box(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir, const Box& b) {
  double t_enter = kRayMin, t_exit = std::numeric_limits<double>::infinity();
  BoxHit hit;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir[a]) < 1e-15) {
      if (origin[a] < b.min[a] || origin[a] > b.max[a]) return {};
      continue;
    }
    double t1 = (b.min[a] - origin[a]) / dir[a];
    double t2 = (b.max[a] - origin[a]) / dir[a];
    bool enters_positive = dir[a] < 0.0;
    if (t1 > t2) std::swap(t1, t2);
    if (t1 > t_enter) {
      t_enter = t1;
      hit.axis = a;
      hit.positive_side = enters_positive;
    }
    t_exit = std::min(t_exit, t2);
    if (t_enter > t_exit) return {};
  }
  if (!(t_enter > kRayMin) || !std::isfinite(t_enter)) return {};
  hit.t = t_enter;
  return hit;
}

struct RoomFace {
  int id;
  int axis;
  double plane;
};

}  // namespace

Intrinsics make_default_intrinsics(int width, int height) {
  Intrinsics K;
  K.width = width;
  K.height = height;
  K.fx = 0.6 * width;
  K.fy = 0.6 * width;
  K.cx = (width - 1) / 2.0;
  K.cy = (height - 1) / 2.0;
  return K;
}

std::vector<PoseSE3> make_linear_trajectory(const Eigen::Vector3d& start,
                                            const Eigen::Vector3d& velocity_per_frame,
                                            double pitch_deg, int frames) {
  // Positive pitch tilts the optical axis toward -y (up, in the y-down world).
  const double a = pitch_deg * std::numbers::pi / 180.0;
  Eigen::Matrix3d rot;
  rot << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
  std::vector<PoseSE3> poses;
  poses.reserve(frames);
  for (int i = 0; i < frames; ++i) {
    poses.emplace_back(rot, start + static_cast<double>(i) * velocity_per_frame);
  }
  return poses;
}

RayHit trace_ray(const SceneConfig& cfg, int frame, double u, double v) {
  const PoseSE3& pose = cfg.trajectory.at(frame);
  const Eigen::Vector3d dir_cam((u - cfg.K.cx) / cfg.K.fx, (v - cfg.K.cy) / cfg.K.fy, 1.0);
  const Eigen::Vector3d origin = pose.translation();
  const Eigen::Vector3d dir = pose.rotation() * dir_cam;

  // Along this unnormalized ray the parameter t equals the camera-frame z.
  RayHit best;
  double best_t = std::numeric_limits<double>::infinity();

  const double hw = cfg.room_width / 2.0;
  const RoomFace faces[6] = {
      {0, 1, 0.0},                // floor
      {1, 1, -cfg.room_height},   // ceiling
      {2, 0, -hw},                // left wall
      {3, 0, hw},                 // right wall
      {4, 2, 0.0},                // near wall
      {5, 2, cfg.room_length},    // far wall
  };
  for (const RoomFace& f : faces) {
    const double denom = dir[f.axis];
    if (std::abs(denom) < 1e-15) continue;
    const double t = (f.plane - origin[f.axis]) / denom;
    if (!(t > kRayMin) || t >= best_t) continue;
    const Eigen::Vector3d p = origin + t * dir;
    const double tol = 1e-9;
    if (p.x() < -hw - tol || p.x() > hw + tol) continue;
    if (p.y() < -cfg.room_height - tol || p.y() > tol) continue;
    if (p.z() < -tol || p.z() > cfg.room_length + tol) continue;
    best_t = t;
    best.hit = true;
    best.surface_id = f.id;
    best.instance_id = 0;
    best.world_point = p;
  }
  for (std::size_t k = 0; k < cfg.pedestrians.size(); ++k) {
    const Box box = pedestrian_box(cfg.pedestrians[k], frame);
    const BoxHit bh = intersect_box(origin, dir, box);
    if (bh.t > 0.0 && bh.t < best_t) {
      best_t = bh.t;
      best.hit = true;
      best.surface_id = 100 + static_cast<int>(k) * 6 + bh.axis * 2 + (bh.positive_side ? 1 : 0);
      best.instance_id = static_cast<int>(k) + 1;
      best.world_point = origin + bh.t * dir;
    }
  }
  if (best.hit) best.depth = best_t;
  return best;
}

namespace {

Eigen::Vector2d face_local_coords(const SceneConfig& cfg, const RayHit& hit, int frame) {
  const Eigen::Vector3d& p = hit.world_point;
  if (hit.surface_id >= 100) {
    const int k = (hit.surface_id - 100) / 6;
    const int face = (hit.surface_id - 100) % 6;
    const int axis = face / 2;
    const Box box = pedestrian_box(cfg.pedestrians[k], frame);
    const Eigen::Vector3d local = p - box.min;  // texture rides with the box
    switch (axis) {
      case 0: return {local.z(), local.y()};
      case 1: return {local.x(), local.z()};
      default: return {local.x(), local.y()};
    }
  }
  switch (hit.surface_id) {
    case 0:
    case 1: return {p.x(), p.z()};
    case 2:
    case 3: return {p.z(), p.y()};
    default: return {p.x(), p.y()};
  }
}

FlowField flow_between(const SceneConfig& cfg, int frame, int other,
                       const std::vector<RayHit>& hits) {
  const int w = cfg.K.width, h = cfg.K.height;
  const PoseSE3& pose_other = cfg.trajectory.at(other);
  const Eigen::Matrix3d r_inv = pose_other.rotation().transpose();
  const Eigen::Vector3d c_other = pose_other.translation();
  FlowField flow(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const RayHit& hit = hits[static_cast<std::size_t>(y) * w + x];
      Eigen::Vector3d p = hit.world_point;
      if (hit.instance_id > 0) {
        const PedestrianSpec& ped = cfg.pedestrians[hit.instance_id - 1];
        const double dt = static_cast<double>(other - frame);
        p += Eigen::Vector3d(dt * ped.velocity_xz.x(), 0.0, dt * ped.velocity_xz.y());
      }
      const Eigen::Vector3d cam = r_inv * (p - c_other);
      if (cam.z() > kRayMin) {
        flow.du.at(x, y) = cfg.K.fx * cam.x() / cam.z() + cfg.K.cx - x;
        flow.dv.at(x, y) = cfg.K.fy * cam.y() / cam.z() + cfg.K.cy - y;
      } else {
        // Behind the neighbor camera: push the sample far out of bounds.
        flow.du.at(x, y) = 4.0 * w;
        flow.dv.at(x, y) = 4.0 * h;
      }
    }
  }
  return flow;
}

}  // namespace

std::vector<SyntheticFrame> generate_scene(const SceneConfig& cfg) {
  if (cfg.trajectory.empty()) {
    throw std::invalid_argument("generate_scene: empty trajectory");
  }
  if (!cfg.K.ok()) throw std::invalid_argument("generate_scene: bad intrinsics");
  const double hw = cfg.room_width / 2.0;
  const int frames = static_cast<int>(cfg.trajectory.size());
  for (int f = 0; f < frames; ++f) {
    const Eigen::Vector3d c = cfg.trajectory[f].translation();
    if (std::abs(c.x()) >= hw || c.y() >= 0.0 || c.y() <= -cfg.room_height || c.z() <= 0.0 ||
        c.z() >= cfg.room_length) {
      throw std::invalid_argument("generate_scene: camera outside the room at frame " +
                                  std::to_string(f));
    }
    for (const PedestrianSpec& ped : cfg.pedestrians) {
      if (box_contains(pedestrian_box(ped, f), c)) {
        throw std::invalid_argument("generate_scene: camera inside a pedestrian at frame " +
                                    std::to_string(f));
      }
    }
  }

  const int w = cfg.K.width, h = cfg.K.height;
  std::vector<std::vector<RayHit>> all_hits(frames);
  std::vector<SyntheticFrame> out(frames);
  for (int f = 0; f < frames; ++f) {
    all_hits[f].resize(static_cast<std::size_t>(w) * h);
    SyntheticFrame& fr = out[f];
    fr.image = ImageRGB(w, h);
    fr.depth = DepthField(w, h);
    fr.instances = InstanceMask(w, h);
    fr.pose = cfg.trajectory[f];
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const RayHit hit = trace_ray(cfg, f, x, y);
        if (!hit.hit) {
          throw std::runtime_error("generate_scene: ray escaped the room");
        }
        all_hits[f][static_cast<std::size_t>(y) * w + x] = hit;
        fr.depth.values.at(x, y) = hit.depth;
        fr.depth.valid.at(x, y) = 1;
        fr.instances.ids.at(x, y) = hit.instance_id;
        const Eigen::Vector2d local = face_local_coords(cfg, hit, f);
        for (int c = 0; c < 3; ++c) {
          fr.image.at(c, x, y) = surface_color(cfg, hit.surface_id, c, local);
        }
      }
    }
  }
  for (int f = 0; f < frames; ++f) {
    if (f > 0) out[f].flow_to_prev = flow_between(cfg, f, f - 1, all_hits[f]);
    if (f + 1 < frames) out[f].flow_to_next = flow_between(cfg, f, f + 1, all_hits[f]);
  }
  return out;
}

SparseDepth sparsify(const DepthField& dense, const ImageRGB& image,
                     const InstanceMask& instances, SparsifyMode mode, int max_n,
                     std::uint64_t seed) {
  if (max_n < 1) throw std::invalid_argument("sparsify: max_n must be >= 1");
  if (!dense.values.same_size(image.channel(0)) || !dense.values.same_size(instances.ids)) {
    throw std::invalid_argument("sparsify: dimension mismatch");
  }
  const int w = dense.width(), h = dense.height();
  std::vector<std::pair<int, int>> selected;

  if (mode == SparsifyMode::kUniform) {
    std::vector<std::pair<int, int>> candidates;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (dense.is_valid(x, y)) candidates.emplace_back(x, y);
      }
    }
    if (candidates.empty()) throw std::invalid_argument("sparsify: no valid dense pixel");
    std::mt19937_64 rng(seed);
    const std::size_t n = std::min<std::size_t>(max_n, candidates.size());
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t span = candidates.size() - i;
      std::uint64_t word;
      const std::uint64_t limit =
          std::numeric_limits<std::uint64_t>::max() -
          std::numeric_limits<std::uint64_t>::max() % span;
      do {
        word = rng();
      } while (word >= limit);
      std::swap(candidates[i], candidates[i + word % span]);
    }
    selected.assign(candidates.begin(), candidates.begin() + n);
  } else {
    // Feature proxy: gradient-magnitude maxima of the mean intensity.
    Grid<double> gray(w, h, 0.0);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        gray.at(x, y) = (image.at(0, x, y) + image.at(1, x, y) + image.at(2, x, y)) / 3.0;
      }
    }
    Grid<double> mag(w, h, 0.0);
    for (int y = 1; y < h - 1; ++y) {
      for (int x = 1; x < w - 1; ++x) {
        const double gx = (gray.at(x + 1, y) - gray.at(x - 1, y)) / 2.0;
        const double gy = (gray.at(x, y + 1) - gray.at(x, y - 1)) / 2.0;
        mag.at(x, y) = std::sqrt(gx * gx + gy * gy);
      }
    }
    // 3x3 non-max suppression with ties kept, so flat regions fall back to
    // row-major order.
    std::vector<std::pair<int, int>> survivors;
    bool any_valid = false;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!dense.is_valid(x, y)) continue;
        any_valid = true;
        bool is_max = true;
        for (int dy = -1; dy <= 1 && is_max; ++dy) {
          for (int dx = -1; dx <= 1 && is_max; ++dx) {
            const int nx = x + dx, ny = y + dy;
            if (!mag.contains(nx, ny)) continue;
            if (mag.at(nx, ny) > mag.at(x, y)) is_max = false;
          }
        }
        if (is_max) survivors.emplace_back(x, y);
      }
    }
    if (!any_valid) throw std::invalid_argument("sparsify: no valid dense pixel");
    std::stable_sort(survivors.begin(), survivors.end(),
                     [&](const auto& a, const auto& b) {
                       return mag.at(a.first, a.second) > mag.at(b.first, b.second);
                     });
    const std::size_t n = std::min<std::size_t>(max_n, survivors.size());
    selected.assign(survivors.begin(), survivors.begin() + n);
  }

  SparseDepth sparse(w, h);
  for (const auto& [x, y] : selected) {
    if (instances.is_human(x, y)) continue;  // removed after selection
    sparse.values.at(x, y) = dense.values.at(x, y);
    sparse.valid.at(x, y) = 1;
  }
  return sparse;
}

PoseSE3 perturb_pose(const PoseSE3& pose, double angle_deg, std::uint64_t seed) {
  if (angle_deg < 0.0) throw std::invalid_argument("perturb_pose: angle must be >= 0");
  if (angle_deg == 0.0) return pose;
  std::mt19937_64 rng(seed);
  Eigen::Vector3d axis;
  double norm2 = 0.0;
  do {
    axis = {2.0 * to_unit(rng()) - 1.0, 2.0 * to_unit(rng()) - 1.0, 2.0 * to_unit(rng()) - 1.0};
    norm2 = axis.squaredNorm();
  } while (norm2 > 1.0 || norm2 < 1e-12);
  axis /= std::sqrt(norm2);
  const double angle_rad = angle_deg * std::numbers::pi / 180.0;
  const Eigen::Matrix3d noise = Eigen::AngleAxisd(angle_rad, axis).toRotationMatrix();
  return PoseSE3(orthonormalize_rotation(noise * pose.rotation()), pose.translation(),
                 pose.convention());
}

SparseDepth reproject_sparse(const SparseDepth& sparse, const PoseSE3& true_pose,
                             const PoseSE3& noisy_pose, const Intrinsics& K) {
  SparseDepth out(sparse.width(), sparse.height());
  const Eigen::Matrix3d r_inv = noisy_pose.rotation().transpose();
  for (int y = 0; y < sparse.height(); ++y) {
    for (int x = 0; x < sparse.width(); ++x) {
      if (!sparse.valid.at(x, y)) continue;
      const Eigen::Vector3d world = true_pose.apply(
          backproject({double(x), double(y)}, sparse.values.at(x, y), K));
      const Eigen::Vector3d cam = r_inv * (world - noisy_pose.translation());
      const auto uv = project(cam, K);
      if (!uv) continue;
      const int u = static_cast<int>(std::lround(uv->u));
      const int v = static_cast<int>(std::lround(uv->v));
      if (u < 0 || u >= K.width || v < 0 || v >= K.height) continue;
      out.values.at(u, v) = cam.z();
      out.valid.at(u, v) = 1;
    }
  }
  return out;
}

FrameBundle make_frame_bundle(const SceneConfig& cfg, const std::vector<SyntheticFrame>& frames,
                              int frame, const std::vector<SparseDepth>& sparse) {
  const SyntheticFrame& fr = frames.at(frame);
  FrameBundle bundle;
  bundle.frame_index = frame;
  bundle.image = fr.image;
  bundle.sparse = sparse.at(frame);
  bundle.pose = fr.pose;
  bundle.K = cfg.K;
  bundle.mask = fr.instances;
  bundle.gt_depth = fr.depth;
  if (frame > 0 && fr.flow_to_prev) {
    const SyntheticFrame& nb = frames.at(frame - 1);
    bundle.neighbors.push_back({nb.image, sparse.at(frame - 1), nb.pose, nb.instances,
                                *fr.flow_to_prev});
  }
  if (frame + 1 < static_cast<int>(frames.size()) && fr.flow_to_next) {
    const SyntheticFrame& nb = frames.at(frame + 1);
    bundle.neighbors.push_back({nb.image, sparse.at(frame + 1), nb.pose, nb.instances,
                                *fr.flow_to_next});
  }
  if (bundle.neighbors.empty()) {
    throw std::invalid_argument("make_frame_bundle: frame has no temporal neighbor");
  }
  return bundle;
}

}  // namespace depthopt
