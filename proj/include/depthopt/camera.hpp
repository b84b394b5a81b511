#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace depthopt {

/// Pinhole intrinsics. Convention: +x right, +y down, +z forward, so image
/// coordinates and camera axes agree and the ground lies toward +y.
struct Intrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  bool ok() const {
    return fx > 0.0 && fy > 0.0 && cx > 0.0 && cx < width && cy > 0.0 && cy < height;
  }
};

enum class PoseConvention { kCameraToWorld, kRelative };

/// Rigid transform with an orthonormal rotation (checked on construction).
class PoseSE3 {
 public:
  PoseSE3()
      : rotation_(Eigen::Matrix3d::Identity()), translation_(Eigen::Vector3d::Zero()) {}

  PoseSE3(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation,
          PoseConvention convention = PoseConvention::kCameraToWorld);

  static PoseSE3 identity() { return PoseSE3(); }

  const Eigen::Matrix3d& rotation() const { return rotation_; }
  const Eigen::Vector3d& translation() const { return translation_; }
  PoseConvention convention() const { return convention_; }

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
    return rotation_ * p + translation_;
  }

  PoseSE3 inverse() const;
  PoseSE3 operator*(const PoseSE3& rhs) const;

  Eigen::Matrix4d matrix() const;

 private:
  Eigen::Matrix3d rotation_;
  Eigen::Vector3d translation_;
  PoseConvention convention_ = PoseConvention::kCameraToWorld;
};

/// Largest deviation of R from a proper rotation (orthogonality residual and
/// determinant offset combined).
double rotation_error(const Eigen::Matrix3d& rotation);

/// Nearest proper rotation in the Frobenius sense.
Eigen::Matrix3d orthonormalize_rotation(const Eigen::Matrix3d& rotation);

/// Transform mapping camera-frame-t points into camera-frame-t'. Both inputs
/// must be camera-to-world poses.
PoseSE3 relative_pose(const PoseSE3& pose_t, const PoseSE3& pose_t_prime);

}  // namespace depthopt
