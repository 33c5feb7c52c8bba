#pragma once

#include <Eigen/Dense>

#include "retsim/geometry.hpp"

namespace retsim {

inline constexpr int kJointCount = 5;
using JointVector = Eigen::Matrix<double, kJointCount, 1>;
using Jacobian = Eigen::Matrix<double, 6, kJointCount>;

// Probe holder: prismatic x, y, z stage, then revolute about x and about y,
// then a fixed tool offset to the probe tip.
struct RobotModel {
  RigidTransform tool_offset = RigidTransform::from_translation(Vec3(0.0, 0.0, -0.03));
  JointVector q_lower;
  JointVector q_upper;
  JointVector qd_lower;
  JointVector qd_upper;
  double resolution = 1e-6;              // prismatic position resolution, meters
  double tracking_time_constant = 0.01;  // low-level velocity tracking, seconds
  bool orientation_locked = true;        // freeze the revolute joints

  static RobotModel default_model();
  static bool is_prismatic(int joint) { return joint < 3; }
  void validate() const;
  bool within_limits(const JointVector& q, double tol = 1e-12) const;
};

struct JointState {
  JointVector positions = JointVector::Zero();   // measured, quantized
  JointVector velocities = JointVector::Zero();
  JointVector servo = JointVector::Zero();       // continuous plant position

  static JointState at_rest(const JointVector& q);
};

// Throws Error when q is outside the joint limits.
RigidTransform forward_kinematics(const RobotModel& model, const JointVector& q);
Jacobian jacobian(const RobotModel& model, const JointVector& q);

struct BoxLsqResult {
  Eigen::VectorXd x;
  int iterations = 0;
};

// Minimizes ||A x - b||^2 subject to lower <= x <= upper with a primal
// active-set method; exact at termination. Throws LimitError when some
// lower bound exceeds its upper bound.
BoxLsqResult solve_box_lsq(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                           const Eigen::VectorXd& lower, const Eigen::VectorXd& upper);

// Joint-velocity box combining velocity limits with the position limits
// reachable within dt. Revolute joints get a zero box when orientation is
// locked.
std::pair<JointVector, JointVector> velocity_box(const RobotModel& model, const JointVector& q,
                                                 double dt);

// Joint velocities minimizing ||J qd - xdot_des|| inside velocity_box().
JointVector mid_level_optimize(const RobotModel& model, const JointVector& q,
                               const Twist& xdot_des, double dt);

// First-order velocity tracking, integration, saturation at the position
// limits and quantization of the measured prismatic positions.
JointState low_level_step(const RobotModel& model, const JointState& state,
                          const JointVector& qd_des, double dt);

}  // namespace retsim
