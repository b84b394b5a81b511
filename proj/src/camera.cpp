#include "depthopt/camera.hpp"

#include <stdexcept>

#include <Eigen/SVD>

namespace depthopt {

namespace {
constexpr double kRotationTolerance = 1e-9;
}

double rotation_error(const Eigen::Matrix3d& rotation) {
  const Eigen::Matrix3d residual =
      rotation.transpose() * rotation - Eigen::Matrix3d::Identity();
  double err = residual.cwiseAbs().maxCoeff();
  err = std::max(err, std::abs(rotation.determinant() - 1.0));
  return err;
}

Eigen::Matrix3d orthonormalize_rotation(const Eigen::Matrix3d& rotation) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(rotation,
                                        Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
    flip(2, 2) = -1.0;
    r = svd.matrixU() * flip * svd.matrixV().transpose();
  }
  return r;
}

PoseSE3::PoseSE3(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation,
                 PoseConvention convention)
    : rotation_(rotation), translation_(translation), convention_(convention) {
  if (rotation_error(rotation) > kRotationTolerance) {
    throw std::invalid_argument("PoseSE3: rotation is not orthonormal");
  }
}

PoseSE3 PoseSE3::inverse() const {
  PoseSE3 out;
  out.rotation_ = rotation_.transpose();
  out.translation_ = -(rotation_.transpose() * translation_);
  out.convention_ = convention_;
  return out;
}

PoseSE3 PoseSE3::operator*(const PoseSE3& rhs) const {
  PoseSE3 out;
  out.rotation_ = rotation_ * rhs.rotation_;
  out.translation_ = rotation_ * rhs.translation_ + translation_;
  out.convention_ = convention_;
  return out;
}

Eigen::Matrix4d PoseSE3::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.block<3, 3>(0, 0) = rotation_;
  m.block<3, 1>(0, 3) = translation_;
  return m;
}

PoseSE3 relative_pose(const PoseSE3& pose_t, const PoseSE3& pose_t_prime) {
  if (pose_t.convention() != PoseConvention::kCameraToWorld ||
      pose_t_prime.convention() != PoseConvention::kCameraToWorld) {
    throw std::invalid_argument("relative_pose: inputs must be camera-to-world poses");
  }
  // Identical poses compose to the identity exactly, not just within rounding.
  if (pose_t.rotation() == pose_t_prime.rotation() &&
      pose_t.translation() == pose_t_prime.translation()) {
    return PoseSE3(Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero(),
                   PoseConvention::kRelative);
  }
  const PoseSE3 rel = pose_t_prime.inverse() * pose_t;
  return PoseSE3(rel.rotation(), rel.translation(), PoseConvention::kRelative);
}

}  // namespace depthopt
