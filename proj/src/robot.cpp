#include "retsim/robot.hpp"

#include <cmath>
#include <vector>

#include "retsim/error.hpp"

namespace retsim {

namespace {

Mat3 rot_x(double a) { return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix(); }
Mat3 rot_y(double a) { return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix(); }

void require_limits(const RobotModel& model, const JointVector& q) {
  if (!q.allFinite() || !model.within_limits(q, 1e-9)) {
    throw Error("joint configuration outside limits");
  }
}

}  // namespace

RobotModel RobotModel::default_model() {
  RobotModel m;
  const double p = 0.05;
  const double r = 30.0 * M_PI / 180.0;
  m.q_lower << -p, -p, -p, -r, -r;
  m.q_upper << p, p, p, r, r;
  m.qd_lower << -5e-3, -5e-3, -5e-3, -0.5, -0.5;
  m.qd_upper << 5e-3, 5e-3, 5e-3, 0.5, 0.5;
  return m;
}

void RobotModel::validate() const {
  if (!(q_lower.array() < q_upper.array()).all()) throw Error("robot: need q_lower < q_upper");
  if (!(qd_lower.array() < qd_upper.array()).all()) throw Error("robot: need qd_lower < qd_upper");
  if (!(resolution > 0.0)) throw Error("robot: resolution must be positive");
  if (!(tracking_time_constant > 0.0)) throw Error("robot: tracking time constant must be positive");
  if (!is_rotation(tool_offset.rotation)) throw Error("robot: tool offset rotation invalid");
}

bool RobotModel::within_limits(const JointVector& q, double tol) const {
  return ((q.array() >= q_lower.array() - tol) && (q.array() <= q_upper.array() + tol)).all();
}

JointState JointState::at_rest(const JointVector& q) {
  JointState s;
  s.positions = q;
  s.servo = q;
  return s;
}

RigidTransform forward_kinematics(const RobotModel& model, const JointVector& q) {
  require_limits(model, q);
  const RigidTransform stage = RigidTransform::from_translation(q.head<3>());
  const RigidTransform wrist{rot_x(q[3]) * rot_y(q[4]), Vec3::Zero()};
  return stage * wrist * model.tool_offset;
}

Jacobian jacobian(const RobotModel& model, const JointVector& q) {
  const RigidTransform tip = forward_kinematics(model, q);
  const Vec3 pivot = q.head<3>();
  const Vec3 r = tip.translation - pivot;
  const Vec3 axis_x = Vec3::UnitX();
  const Vec3 axis_y = rot_x(q[3]) * Vec3::UnitY();

  Jacobian J = Jacobian::Zero();
  J.block<3, 3>(0, 0).setIdentity();
  J.block<3, 1>(0, 3) = axis_x.cross(r);
  J.block<3, 1>(3, 3) = axis_x;
  J.block<3, 1>(0, 4) = axis_y.cross(r);
  J.block<3, 1>(3, 4) = axis_y;
  return J;
}

BoxLsqResult solve_box_lsq(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                           const Eigen::VectorXd& lower, const Eigen::VectorXd& upper) {
  const Eigen::Index n = A.cols();
  if (lower.size() != n || upper.size() != n || b.size() != A.rows()) {
    throw Error("box lsq: dimension mismatch");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(lower[i] <= upper[i])) throw LimitError("box lsq: empty feasible box");
  }

  const Eigen::MatrixXd H = A.transpose() * A;
  const Eigen::VectorXd c = A.transpose() * b;
  // Scale-aware tolerance for multiplier signs.
  const double gtol = 1e-14 * (1.0 + H.cwiseAbs().maxCoeff()) * (1.0 + c.cwiseAbs().maxCoeff());

  enum class Bound { free, lower, upper };
  std::vector<Bound> state(n, Bound::free);
  Eigen::VectorXd x(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x[i] = std::clamp(0.0, lower[i], upper[i]);
    if (lower[i] == upper[i] || x[i] == lower[i]) {
      state[i] = Bound::lower;
    } else if (x[i] == upper[i]) {
      state[i] = Bound::upper;
    }
  }

  BoxLsqResult result;
  for (int iter = 0; iter < 500; ++iter) {
    result.iterations = iter + 1;
    std::vector<Eigen::Index> free;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (state[i] == Bound::free) free.push_back(i);
    }

    Eigen::VectorXd target = x;
    if (!free.empty()) {
      const auto m = static_cast<Eigen::Index>(free.size());
      Eigen::MatrixXd Hff(m, m);
      Eigen::VectorXd rhs(m);
      for (Eigen::Index a = 0; a < m; ++a) {
        rhs[a] = c[free[a]];
        for (Eigen::Index k = 0; k < n; ++k) {
          if (state[k] != Bound::free) rhs[a] -= H(free[a], k) * x[k];
        }
        for (Eigen::Index bb = 0; bb < m; ++bb) Hff(a, bb) = H(free[a], free[bb]);
      }
      const Eigen::VectorXd sol = Hff.ldlt().solve(rhs);
      for (Eigen::Index a = 0; a < m; ++a) target[free[a]] = sol[a];
    }

    // Walk toward the subspace optimum, stopping at the first bound hit.
    double step = 1.0;
    Eigen::Index blocking = -1;
    for (Eigen::Index i : free) {
      const double d = target[i] - x[i];
      if (target[i] < lower[i] && d < 0.0) {
        const double s = (lower[i] - x[i]) / d;
        if (s < step) { step = s; blocking = i; }
      } else if (target[i] > upper[i] && d > 0.0) {
        const double s = (upper[i] - x[i]) / d;
        if (s < step) { step = s; blocking = i; }
      }
    }
    for (Eigen::Index i : free) x[i] += step * (target[i] - x[i]);
    if (blocking >= 0) {
      const bool hits_lower = target[blocking] < lower[blocking];
      x[blocking] = hits_lower ? lower[blocking] : upper[blocking];
      state[blocking] = hits_lower ? Bound::lower : Bound::upper;
      continue;
    }

    // Subspace optimum is feasible: check the multipliers of bound variables.
    const Eigen::VectorXd grad = H * x - c;
    Eigen::Index worst = -1;
    double worst_val = gtol;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (lower[i] == upper[i]) continue;
      if (state[i] == Bound::lower && -grad[i] > worst_val) {
        worst = i;
        worst_val = -grad[i];
      } else if (state[i] == Bound::upper && grad[i] > worst_val) {
        worst = i;
        worst_val = grad[i];
      }
    }
    if (worst < 0) break;
    state[worst] = Bound::free;
  }
  result.x = x;
  return result;
}

std::pair<JointVector, JointVector> velocity_box(const RobotModel& model, const JointVector& q,
                                                 double dt) {
  if (!(dt > 0.0)) throw Error("velocity_box: dt must be positive");
  JointVector lo = model.qd_lower.cwiseMax((model.q_lower - q) / dt);
  JointVector hi = model.qd_upper.cwiseMin((model.q_upper - q) / dt);
  if (model.orientation_locked) {
    for (int j = 3; j < kJointCount; ++j) {
      lo[j] = 0.0;
      hi[j] = 0.0;
    }
  }
  return {lo, hi};
}

JointVector mid_level_optimize(const RobotModel& model, const JointVector& q,
                               const Twist& xdot_des, double dt) {
  require_limits(model, q);
  if (!xdot_des.finite()) throw Error("mid_level_optimize: non-finite twist");
  const auto [lo, hi] = velocity_box(model, q, dt);
  for (int j = 0; j < kJointCount; ++j) {
    if (!(lo[j] <= hi[j])) {
      throw LimitError("mid_level_optimize: joint " + std::to_string(j) +
                       " has an empty velocity box");
    }
  }
  const Jacobian J = jacobian(model, q);
  const auto res = solve_box_lsq(J, xdot_des.vector(), lo, hi);
  JointVector qd = res.x;
  // Guard against round-off at active bounds.
  return qd.cwiseMax(lo).cwiseMin(hi);
}

JointState low_level_step(const RobotModel& model, const JointState& state,
                          const JointVector& qd_des, double dt) {
  if (!(dt > 0.0)) throw Error("low_level_step: dt must be positive");
  JointState next = state;
  const double a = 1.0 - std::exp(-dt / model.tracking_time_constant);
  next.velocities = state.velocities + a * (qd_des - state.velocities);
  next.servo = state.servo + next.velocities * dt;
  for (int j = 0; j < kJointCount; ++j) {
    if (next.servo[j] < model.q_lower[j]) {
      next.servo[j] = model.q_lower[j];
      next.velocities[j] = 0.0;
    } else if (next.servo[j] > model.q_upper[j]) {
      next.servo[j] = model.q_upper[j];
      next.velocities[j] = 0.0;
    }
    if (RobotModel::is_prismatic(j)) {
      const double quantized = std::round(next.servo[j] / model.resolution) * model.resolution;
      next.positions[j] = std::clamp(quantized, model.q_lower[j], model.q_upper[j]);
    } else {
      next.positions[j] = next.servo[j];
    }
  }
  return next;
}

}  // namespace retsim
