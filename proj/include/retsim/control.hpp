#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "retsim/geometry.hpp"

namespace retsim {

// Xdot = K_lat * xdot_lateral + K_ax * xdot_axial.
Twist hybrid_combine(const MotionSpec& spec, const Twist& xdot_lateral, const Twist& xdot_axial);

// Cooperative lateral channel: xdot_ee = alpha * F_ee, mapped to the base.
Twist admittance(const Wrench& f_ee, double alpha, const RigidTransform& T_base_ee);

struct TeleopState {
  RigidTransform mtm_initial;
  RigidTransform sher_initial;
  Mat3 base_map = Mat3::Identity();  // MTM base expressed in the robot base
  double beta = 0.015;

  void validate() const;
};

struct TeleopError {
  Vec3 epsilon = Vec3::Zero();  // translation error, m
  Vec3 theta = Vec3::Zero();    // rotation error, rad
};

TeleopError teleop_error(const TeleopState& state, const RigidTransform& mtm_now,
                         const RigidTransform& sher_now);
Twist teleop_lateral(const Vec3& epsilon, const Vec3& theta, double dt);

enum class SignLaw { text_gradient, paper_listing };

struct AutoFocusConfig {
  double T1 = 0.10;
  double T2 = 0.47;
  double gain_g = 50e-6;           // meters per unit of missing score
  double robot_resolution = 1e-6;
  SignLaw sign_law = SignLaw::text_gradient;

  void validate() const;
};

struct AutoFocusState {
  // Starts at 1 so the first in-band frame at rest reads as a score drop and
  // triggers the away-from-retina exploration step.
  double q_prev = 1.0;
  Vec3 x_probe_prev = Vec3::Zero();
  double dx_prev = 0.0;
  bool model_reached = false;  // F_M

  static AutoFocusState at(const Vec3& x_probe);
};

struct AxialStep {
  double dx = 0.0;  // displacement along the axial unit, positive away from tissue
  AutoFocusState state;
  bool handover = false;  // score below T1: dx is the user's own axial motion
};

// Image optimizer. user_cmd is the operator's own desired twist; below T1 its
// axial component over dt is handed back unchanged.
AxialStep autofocus_step(const AutoFocusConfig& cfg, const AutoFocusState& st, double q,
                         const Vec3& x_probe, const Vec3& axial_unit, const Twist& user_cmd,
                         double dt);

struct ScanSample {
  Vec2 lateral;
  double z;
  double score;
};

// z = a x^2 + b y^2 + c xy + d x + e y + f over a convex lateral region.
class PriorModel {
 public:
  using Coefficients = Eigen::Matrix<double, 6, 1>;

  PriorModel() = default;
  PriorModel(Coefficients coefficients, std::vector<Vec2> region, int sample_count);

  const Coefficients& coefficients() const { return coef_; }
  const std::vector<Vec2>& region() const { return region_; }
  int sample_count() const { return sample_count_; }

  double evaluate(const Vec2& xy) const;
  // Inclusive test against the (counter-clockwise) region polygon. An empty
  // region contains nothing.
  bool contains(const Vec2& xy) const;

 private:
  Coefficients coef_ = Coefficients::Zero();
  std::vector<Vec2> region_;
  int sample_count_ = 0;
};

// Least-squares quadratic through the given points (at least 6).
PriorModel::Coefficients fit_quadratic(const std::vector<Vec2>& xy, const std::vector<double>& z);

// Counter-clockwise convex hull without collinear points.
std::vector<Vec2> convex_hull(std::vector<Vec2> points);

// Deterministic farthest-point subsampling; returns indices into points.
std::vector<std::size_t> farthest_point_sample(const std::vector<Vec2>& points, std::size_t count);

// Fits the prior surface from a registration scan. Throws Error
// ("registration incomplete") when fewer than sample_target samples score at
// least T2.
PriorModel register_prior(const std::vector<ScanSample>& scan, double T2, int sample_target = 20);

// Image optimizer combined with the prior model. Falls back to
// autofocus_step outside the model region, or once the model height has been
// reached and the probe is laterally still.
AxialStep autofocus_with_model(const AutoFocusConfig& cfg, const AutoFocusState& st,
                               const PriorModel* model, double q, const Vec3& x_probe,
                               const MotionSpec& spec, const Twist& user_cmd, double dt);

struct HapticConfig {
  double k_p = 50.0;  // N/m
  double k_R = 0.1;   // N m/rad
  double b = 5.0;     // N/(m/s)

  void validate() const;
};

// F_p = k_p eps + b V, F_R = k_R theta.
Wrench compliance_wrench(const HapticConfig& cfg, const Vec3& epsilon, const Vec3& theta,
                         const Vec3& velocity);

// Statics mapping tau = J^T W (gravity compensation is zero in simulation).
Eigen::VectorXd wrench_to_joint_torques(const Eigen::MatrixXd& J, const Wrench& w);

}  // namespace retsim
