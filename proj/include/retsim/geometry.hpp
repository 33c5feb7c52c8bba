#pragma once

#include <Eigen/Dense>

namespace retsim {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;

// Pose of a frame: x_parent = rotation * x_child + translation.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }
  static RigidTransform from_translation(const Vec3& p) { return {Mat3::Identity(), p}; }

  RigidTransform operator*(const RigidTransform& rhs) const {
    return {rotation * rhs.rotation, rotation * rhs.translation + translation};
  }
  Vec3 apply(const Vec3& x) const { return rotation * x + translation; }
  RigidTransform inverse() const {
    const Mat3 rt = rotation.transpose();
    return {rt, -(rt * translation)};
  }
};

// 6-D velocity, stacked as [linear; angular].
struct Twist {
  Vec3 linear = Vec3::Zero();
  Vec3 angular = Vec3::Zero();

  static Twist zero() { return {}; }
  static Twist from_vector(const Vec6& v) { return {v.head<3>(), v.tail<3>()}; }
  Vec6 vector() const {
    Vec6 v;
    v << linear, angular;
    return v;
  }
  bool finite() const { return linear.allFinite() && angular.allFinite(); }
};

// 6-D force, stacked as [force; torque].
struct Wrench {
  Vec3 force = Vec3::Zero();
  Vec3 torque = Vec3::Zero();

  static Wrench from_vector(const Vec6& v) { return {v.head<3>(), v.tail<3>()}; }
  Vec6 vector() const {
    Vec6 v;
    v << force, torque;
    return v;
  }
};

// Lateral/axial projectors for the hybrid control law.
struct MotionSpec {
  Mat6 lateral = Mat6::Identity();
  Mat6 axial = Mat6::Zero();
  Mat3 normal_rotation = Mat3::Identity();

  // Unit vector of the axial (tissue-normal) direction in the base frame.
  Vec3 axial_unit() const { return normal_rotation.row(2).transpose(); }
};

Mat3 skew(const Vec3& v);

// Block form [[R, skew(p) R], [0, R]] mapping [v; w] twists from the child
// frame of T into its parent frame.
Mat6 adjoint(const RigidTransform& T);

Mat3 rotation_exp(const Vec3& rotation_vector);

// Axis-angle vector of R with angle in [0, pi]. At exactly pi the axis sign
// is chosen so that its first nonzero component is positive.
// Throws Error if R is not a proper rotation.
Vec3 rotation_log(const Mat3& R);

bool is_rotation(const Mat3& R, double tol = 1e-9);

// R whose third row is the (normalized) tissue normal; the first two rows
// complete a right-handed orthonormal frame.
Mat3 normal_rotation_from_normal(const Vec3& normal);

// K_lat = blockdiag(R^T Sc R, I), K_ax = blockdiag(R^T Sa R, 0) with
// Sc = diag(1,1,0) and Sa = diag(0,0,1).
MotionSpec motion_spec(const Mat3& normal_rotation);

}  // namespace retsim
