#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "retsim/error.hpp"
#include "retsim/geometry.hpp"

using namespace retsim;

namespace {

Vec3 random_vec(std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return {u(rng), u(rng), u(rng)};
}

Mat3 random_rotation(std::mt19937_64& rng) {
  return rotation_exp(random_vec(rng, 3.0));
}

}  // namespace

TEST_CASE("skew matches the cross product") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    const Vec3 a = random_vec(rng), b = random_vec(rng);
    CHECK((skew(a) * b - a.cross(b)).norm() < 1e-15);
  }
}

TEST_CASE("rotation_exp and rotation_log invert each other") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> angle(0.0, M_PI - 1e-3);
  for (int i = 0; i < 200; ++i) {
    const Vec3 axis = random_vec(rng).normalized();
    const Vec3 w = axis * angle(rng);
    const Mat3 R = rotation_exp(w);
    CHECK(is_rotation(R));
    CHECK((rotation_log(R) - w).norm() < 1e-9);
  }
  CHECK(rotation_log(Mat3::Identity()).norm() == 0.0);
}

TEST_CASE("rotation_log at pi picks the positive axis") {
  const Mat3 R = rotation_exp(Vec3(0.0, -M_PI, 0.0));
  const Vec3 w = rotation_log(R);
  CHECK(w.norm() == doctest::Approx(M_PI));
  CHECK(w.y() > 0.0);
}

TEST_CASE("rotation_log rejects non-rotations") {
  Mat3 M = Mat3::Identity();
  M(0, 0) = -1.0;  // reflection
  CHECK_THROWS_AS(rotation_log(M), Error);
  CHECK_THROWS_AS(rotation_log(2.0 * Mat3::Identity()), Error);
}

TEST_CASE("adjoint maps twists like a finite rigid motion") {
  // Velocity of a point fixed in the child frame, computed two ways.
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    RigidTransform T{random_rotation(rng), random_vec(rng, 0.1)};
    const Twist child{random_vec(rng), random_vec(rng)};
    const Twist parent = Twist::from_vector(adjoint(T) * child.vector());
    // Oracle: differentiate T * exp(child * h) at the child origin.
    const double h = 1e-7;
    RigidTransform step{rotation_exp(child.angular * h), child.linear * h};
    const RigidTransform moved = T * step;
    const Vec3 v_origin = (moved.translation - T.translation) / h;
    // The parent twist is referred to the parent origin: v_point = v + w x p.
    const Vec3 v_expected = parent.linear + parent.angular.cross(T.translation);
    CHECK((v_origin - v_expected).norm() < 1e-5);
    CHECK((parent.angular - T.rotation * child.angular).norm() < 1e-12);
  }
}

TEST_CASE("rigid transform inverse") {
  std::mt19937_64 rng(4);
  RigidTransform T{random_rotation(rng), random_vec(rng)};
  const RigidTransform I = T * T.inverse();
  CHECK((I.rotation - Mat3::Identity()).norm() < 1e-12);
  CHECK(I.translation.norm() < 1e-12);
}

TEST_CASE("normal frame has the normal as its third row") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 100; ++i) {
    const Vec3 n = random_vec(rng).normalized();
    const Mat3 R = normal_rotation_from_normal(n * 3.0);
    CHECK(is_rotation(R));
    CHECK((R.row(2).transpose() - n).norm() < 1e-12);
  }
  // Normal along x exercises the fallback tangent.
  CHECK(is_rotation(normal_rotation_from_normal(Vec3::UnitX())));
  CHECK_THROWS_AS(normal_rotation_from_normal(Vec3::Zero()), Error);
}

TEST_CASE("motion spec projectors split translation and keep rotation lateral") {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 50; ++i) {
    const Mat3 R = normal_rotation_from_normal(random_vec(rng));
    const MotionSpec s = motion_spec(R);
    // Idempotent, complementary on the translational block.
    CHECK((s.lateral * s.lateral - s.lateral).norm() < 1e-12);
    CHECK((s.axial * s.axial - s.axial).norm() < 1e-12);
    CHECK((s.lateral * s.axial).norm() < 1e-12);
    const Mat3 sum = s.lateral.topLeftCorner<3, 3>() + s.axial.topLeftCorner<3, 3>();
    CHECK((sum - Mat3::Identity()).norm() < 1e-12);
    CHECK((s.lateral.bottomRightCorner<3, 3>() - Mat3::Identity()).norm() == 0.0);
    CHECK(s.axial.bottomRightCorner<3, 3>().norm() == 0.0);
    // The axial block projects onto the normal.
    const Vec3 n = s.axial_unit();
    CHECK((s.axial.topLeftCorner<3, 3>() - n * n.transpose()).norm() < 1e-12);
  }
}

TEST_CASE("vertical normal gives the plain z split") {
  const MotionSpec s = motion_spec(Mat3::Identity());
  Vec6 v;
  v << 1, 2, 3, 4, 5, 6;
  Vec6 lat;
  lat << 1, 2, 0, 4, 5, 6;
  Vec6 ax;
  ax << 0, 0, 3, 0, 0, 0;
  CHECK((s.lateral * v - lat).norm() == 0.0);
  CHECK((s.axial * v - ax).norm() == 0.0);
}
