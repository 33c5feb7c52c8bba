#include "retsim/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "retsim/error.hpp"

namespace retsim {

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

Mat6 adjoint(const RigidTransform& T) {
  Mat6 ad = Mat6::Zero();
  ad.topLeftCorner<3, 3>() = T.rotation;
  ad.topRightCorner<3, 3>() = skew(T.translation) * T.rotation;
  ad.bottomRightCorner<3, 3>() = T.rotation;
  return ad;
}

Mat3 rotation_exp(const Vec3& w) {
  const double theta = w.norm();
  const Mat3 K = skew(w);
  if (theta < 1e-12) {
    return Mat3::Identity() + K;
  }
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + a * K + b * K * K;
}

bool is_rotation(const Mat3& R, double tol) {
  if (!R.allFinite()) return false;
  if ((R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(R.determinant() - 1.0) <= tol;
}

Vec3 rotation_log(const Mat3& R) {
  if (!is_rotation(R)) {
    throw Error("rotation_log: matrix is not a proper rotation");
  }
  const double c = std::clamp((R.trace() - 1.0) * 0.5, -1.0, 1.0);
  const double theta = std::acos(c);
  const Vec3 vee(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));

  if (theta < 1e-6) {
    // First-order expansion; the vee part is exact to O(theta^3).
    return 0.5 * vee;
  }
  if (M_PI - theta > 1e-4) {
    return vee * (theta / (2.0 * std::sin(theta)));
  }

  // Near pi the antisymmetric part vanishes; recover the axis from the
  // symmetric part R + I = 2 a a^T (up to O(pi - theta)).
  const Mat3 S = 0.5 * (R + Mat3::Identity());
  int k = 0;
  S.diagonal().maxCoeff(&k);
  Vec3 axis = S.col(k) / std::sqrt(std::max(S(k, k), 1e-300));
  axis.normalize();
  if (theta < M_PI && axis.dot(vee) < 0.0) {
    axis = -axis;
  }
  if (theta >= M_PI) {
    for (int i = 0; i < 3; ++i) {
      if (std::abs(axis[i]) > 1e-12) {
        if (axis[i] < 0.0) axis = -axis;
        break;
      }
    }
  }
  return axis * theta;
}

Mat3 normal_rotation_from_normal(const Vec3& normal) {
  const double len = normal.norm();
  if (!(len > 0.0) || !normal.allFinite()) {
    throw Error("normal_rotation_from_normal: degenerate normal");
  }
  const Vec3 n = normal / len;
  // Project base x onto the tangent plane; fall back to base y when n ~ x.
  Vec3 t1 = Vec3::UnitX() - n.x() * n;
  if (t1.norm() < 1e-6) t1 = Vec3::UnitY() - n.y() * n;
  t1.normalize();
  const Vec3 t2 = n.cross(t1);
  Mat3 R;
  R.row(0) = t1.transpose();
  R.row(1) = t2.transpose();
  R.row(2) = n.transpose();
  return R;
}

MotionSpec motion_spec(const Mat3& normal_rotation) {
  if (!is_rotation(normal_rotation)) {
    throw Error("motion_spec: normal rotation is not orthonormal");
  }
  const Mat3& R = normal_rotation;
  const Mat3 sigma_c = Eigen::Vector3d(1.0, 1.0, 0.0).asDiagonal();
  const Mat3 sigma_a = Eigen::Vector3d(0.0, 0.0, 1.0).asDiagonal();

  MotionSpec spec;
  spec.normal_rotation = R;
  spec.lateral.setZero();
  spec.lateral.topLeftCorner<3, 3>() = R.transpose() * sigma_c * R;
  spec.lateral.bottomRightCorner<3, 3>().setIdentity();
  spec.axial.setZero();
  spec.axial.topLeftCorner<3, 3>() = R.transpose() * sigma_a * R;
  return spec;
}

}  // namespace retsim
