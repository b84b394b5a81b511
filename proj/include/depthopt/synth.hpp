#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "depthopt/camera.hpp"
#include "depthopt/image.hpp"
#include "depthopt/optimizer.hpp"

namespace depthopt {

/// Axis-aligned textured box standing on the floor, translating rigidly by
/// `velocity_xz` meters per frame. Boxes are all the dynamic constraints
/// need from a person: a mask, flow, and a ground contact.
struct PedestrianSpec {
  Eigen::Vector2d center_xz = Eigen::Vector2d::Zero();  // initial footprint center
  double width = 0.5;
  double height = 1.7;
  double depth = 0.4;
  Eigen::Vector2d velocity_xz = Eigen::Vector2d::Zero();  // meters per frame
};

/// Analytic room: world is y-down, the floor is the plane y = 0, the ceiling
/// y = -room_height, walls at x = +-room_width/2 and z in {0, room_length}.
/// Surfaces carry seeded value-noise texture; pedestrian texture rides with
/// the box.
struct SceneConfig {
  Intrinsics K;
  double room_width = 8.0;
  double room_height = 3.0;
  double room_length = 12.0;
  std::vector<PoseSE3> trajectory;  // camera-to-world, one per frame
  std::vector<PedestrianSpec> pedestrians;
  std::uint64_t seed = 1;
  double texture_scale = 2.5;       // lattice spacing of the value noise, meters
  double texture_amplitude = 0.5;   // peak-to-peak around mid-gray
};

Intrinsics make_default_intrinsics(int width, int height);

/// Straight-line trajectory with a constant pitch (degrees, positive pitches
/// the camera up toward the ceiling).
std::vector<PoseSE3> make_linear_trajectory(const Eigen::Vector3d& start,
                                            const Eigen::Vector3d& velocity_per_frame,
                                            double pitch_deg, int frames);

struct SyntheticFrame {
  ImageRGB image;
  DepthField depth;           // groundtruth
  InstanceMask instances;
  PoseSE3 pose;               // camera-to-world
  std::optional<FlowField> flow_to_prev;  // samples frame t-1 from this frame's grid
  std::optional<FlowField> flow_to_next;
};

struct RayHit {
  bool hit = false;
  int surface_id = -1;   // 0..5 room faces, 100 + 6*k + face for pedestrian k
  int instance_id = 0;   // 0 background, k+1 for pedestrian k
  double depth = 0.0;    // camera-frame z
  Eigen::Vector3d world_point = Eigen::Vector3d::Zero();
};

/// First intersection of the ray through sub-pixel (u,v) of the given frame.
RayHit trace_ray(const SceneConfig& cfg, int frame, double u, double v);

/// Renders all frames: ray-cast depth, textured image, instance masks and
/// groundtruth flow to both temporal neighbors. Flow composes camera motion
/// with pedestrian motion. Throws when the camera starts inside a pedestrian
/// or outside the room.
std::vector<SyntheticFrame> generate_scene(const SceneConfig& cfg);

enum class SparsifyMode { kUniform, kFeature };

/// Keeps at most max_n depth samples. Feature mode takes the strongest
/// image-gradient pixels (3 px non-max suppression, row-major tie order);
/// uniform mode draws seeded samples without replacement. Pixels inside
/// instance masks are removed after selection, so fewer than max_n points o
/// may survive. Throws when the dense map has no valid pixel.
SparseDepth sparsify(const DepthField& dense, const ImageRGB& image,
                     const InstanceMask& instances, SparsifyMode mode, int max_n,
                     std::uint64_t seed);

/// Composes the pose's rotation with a rotation of exactly `angle_deg` about
/// a seeded uniformly random axis; translation unchanged.
PoseSE3 perturb_pose(const PoseSE3& pose, double angle_deg, std::uint64_t seed);

/// Re-projects sparse samples through a mis-estimated pose: each sample's
/// world point is lifted with the true pose and dropped back through the
/// noisy one, displacing both its pixel and its depth the way a localization
/// error displaces a projected model. Samples leaving the image are lost.
SparseDepth reproject_sparse(const SparseDepth& sparse, const PoseSE3& true_pose,
                             const PoseSE3& noisy_pose, const Intrinsics& K);

/// Assembles the optimizer input for one frame of a generated scene (frame
/// must have at least one temporal neighbor).
FrameBundle make_frame_bundle(const SceneConfig& cfg, const std::vector<SyntheticFrame>& frames,
                              int frame, const std::vector<SparseDepth>& sparse);

}  // namespace depthopt
