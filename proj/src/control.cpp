#include "retsim/control.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "retsim/error.hpp"

namespace retsim {

namespace {

double sign(double v) { return (v > 0.0) - (v < 0.0); }

double cross2(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

Vec3 linear_part(const Mat6& K, const Vec3& x) {
  Vec6 v = Vec6::Zero();
  v.head<3>() = x;
  return (K * v).head<3>();
}

}  // namespace

Twist hybrid_combine(const MotionSpec& spec, const Twist& xdot_lateral, const Twist& xdot_axial) {
  return Twist::from_vector(spec.lateral * xdot_lateral.vector() +
                            spec.axial * xdot_axial.vector());
}

Twist admittance(const Wrench& f_ee, double alpha, const RigidTransform& T_base_ee) {
  if (!(alpha > 0.0)) throw Error("admittance: alpha must be positive");
  return Twist::from_vector(adjoint(T_base_ee) * (alpha * f_ee.vector()));
}

void TeleopState::validate() const {
  if (!(beta > 0.0)) throw Error("teleop: beta must be positive");
  if (!is_rotation(base_map)) throw Error("teleop: base map is not a rotation");
}

TeleopError teleop_error(const TeleopState& state, const RigidTransform& mtm_now,
                         const RigidTransform& sher_now) {
  const Mat3 map_inv = state.base_map.transpose();
  TeleopError e;
  e.epsilon = state.beta * map_inv * (mtm_now.translation - state.mtm_initial.translation) -
              (sher_now.translation - state.sher_initial.translation);
  e.theta = rotation_log(sher_now.rotation.transpose() * map_inv * mtm_now.rotation);
  return e;
}

Twist teleop_lateral(const Vec3& epsilon, const Vec3& theta, double dt) {
  if (!(dt > 0.0)) throw Error("teleop_lateral: dt must be positive");
  return {epsilon / dt, theta / dt};
}

void AutoFocusConfig::validate() const {
  if (!(T1 >= 0.0 && T1 < T2 && T2 <= 1.0)) throw Error("autofocus: need 0 <= T1 < T2 <= 1");
  if (!(gain_g > 0.0)) throw Error("autofocus: gain must be positive");
  if (!(robot_resolution > 0.0)) throw Error("autofocus: resolution must be positive");
}

AutoFocusState AutoFocusState::at(const Vec3& x_probe) {
  AutoFocusState s;
  s.x_probe_prev = x_probe;
  return s;
}

AxialStep autofocus_step(const AutoFocusConfig& cfg, const AutoFocusState& st, double q,
                         const Vec3& x_probe, const Vec3& axial_unit, const Twist& user_cmd,
                         double dt) {
  const double dq = q - st.q_prev;
  const double dx_probe = axial_unit.dot(x_probe - st.x_probe_prev);

  double dx = 0.0;
  if (q < cfg.T1) {
    dx = axial_unit.dot(user_cmd.linear) * dt;
  } else if (q < cfg.T2) {
    const double magnitude = cfg.gain_g * (1.0 - q);
    if (std::abs(dx_probe) < cfg.robot_resolution && dq < 0.0) {
      dx = magnitude;
    } else if (std::abs(dx_probe) < cfg.robot_resolution && dq > 0.0) {
      dx = st.dx_prev;
    } else if (cfg.sign_law == SignLaw::text_gradient) {
      dx = magnitude * sign(dq * dx_probe);
    } else {
      dx = magnitude * sign(dx_probe * dq) * sign(dx_probe);
    }
  }

  AxialStep out{dx, st, q < cfg.T1};
  out.state.q_prev = q;
  out.state.x_probe_prev = x_probe;
  out.state.dx_prev = dx;
  return out;
}

PriorModel::PriorModel(Coefficients coefficients, std::vector<Vec2> region, int sample_count)
    : coef_(std::move(coefficients)), region_(std::move(region)), sample_count_(sample_count) {}

double PriorModel::evaluate(const Vec2& xy) const {
  const double x = xy.x();
  const double y = xy.y();
  return coef_[0] * x * x + coef_[1] * y * y + coef_[2] * x * y + coef_[3] * x + coef_[4] * y +
         coef_[5];
}

bool PriorModel::contains(const Vec2& xy) const {
  if (region_.size() < 3) return false;
  for (std::size_t i = 0; i < region_.size(); ++i) {
    const Vec2& a = region_[i];
    const Vec2& b = region_[(i + 1) % region_.size()];
    if (cross2(a, b, xy) < 0.0) return false;
  }
  return true;
}

PriorModel::Coefficients fit_quadratic(const std::vector<Vec2>& xy, const std::vector<double>& z) {
  if (xy.size() != z.size()) throw Error("fit_quadratic: size mismatch");
  if (xy.size() < 6) throw Error("fit_quadratic: need at least 6 samples");

  // Fit in centered, scaled coordinates, then expand back.
  Vec2 center = Vec2::Zero();
  for (const auto& p : xy) center += p;
  center /= static_cast<double>(xy.size());
  double scale = 0.0;
  for (const auto& p : xy) scale = std::max(scale, (p - center).cwiseAbs().maxCoeff());
  if (scale == 0.0) throw Error("fit_quadratic: samples are coincident");

  const auto n = static_cast<Eigen::Index>(xy.size());
  Eigen::MatrixXd A(n, 6);
  Eigen::VectorXd rhs(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec2 p = (xy[i] - center) / scale;
    A.row(i) << p.x() * p.x(), p.y() * p.y(), p.x() * p.y(), p.x(), p.y(), 1.0;
    rhs[i] = z[i];
  }
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  if (qr.rank() < 6) throw Error("fit_quadratic: samples do not determine a quadratic");
  const Eigen::VectorXd u = qr.solve(rhs);

  const double s2 = scale * scale;
  const double cx = center.x();
  const double cy = center.y();
  PriorModel::Coefficients c;
  c[0] = u[0] / s2;
  c[1] = u[1] / s2;
  c[2] = u[2] / s2;
  c[3] = u[3] / scale - 2.0 * c[0] * cx - c[2] * cy;
  c[4] = u[4] / scale - 2.0 * c[1] * cy - c[2] * cx;
  c[5] = u[5] - (u[3] * cx + u[4] * cy) / scale + c[0] * cx * cx + c[1] * cy * cy +
         c[2] * cx * cy;
  return c;
}

std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;

  std::vector<Vec2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross2(hull[k - 2], hull[k - 1], p) <= 0.0) --k;
    hull[k++] = p;
  }
  const std::size_t lower = k + 1;
  for (auto it = pts.rbegin() + 1; it != pts.rend(); ++it) {
    while (k >= lower && cross2(hull[k - 2], hull[k - 1], *it) <= 0.0) --k;
    hull[k++] = *it;
  }
  hull.resize(k - 1);
  return hull;
}

std::vector<std::size_t> farthest_point_sample(const std::vector<Vec2>& points,
                                               std::size_t count) {
  std::vector<std::size_t> picked;
  if (points.empty() || count == 0) return picked;
  count = std::min(count, points.size());
  std::vector<double> nearest(points.size(), std::numeric_limits<double>::infinity());
  std::size_t next = 0;
  while (picked.size() < count) {
    picked.push_back(next);
    for (std::size_t i = 0; i < points.size(); ++i) {
      nearest[i] = std::min(nearest[i], (points[i] - points[next]).squaredNorm());
    }
    double best = -1.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (nearest[i] > best) {
        best = nearest[i];
        next = i;
      }
    }
  }
  return picked;
}

PriorModel register_prior(const std::vector<ScanSample>& scan, double T2, int sample_target) {
  if (sample_target < 6) throw Error("register_prior: need at least 6 samples for the fit");
  std::vector<Vec2> lateral;
  std::vector<double> z;
  for (const auto& s : scan) {
    if (s.score >= T2) {
      lateral.push_back(s.lateral);
      z.push_back(s.z);
    }
  }
  if (lateral.size() < static_cast<std::size_t>(sample_target)) {
    throw Error("registration incomplete: " + std::to_string(lateral.size()) + " of " +
                std::to_string(sample_target) + " in-focus samples");
  }
  const auto idx = farthest_point_sample(lateral, static_cast<std::size_t>(sample_target));
  std::vector<Vec2> fit_xy;
  std::vector<double> fit_z;
  for (auto i : idx) {
    fit_xy.push_back(lateral[i]);
    fit_z.push_back(z[i]);
  }
  return PriorModel(fit_quadratic(fit_xy, fit_z), convex_hull(lateral),
                    static_cast<int>(idx.size()));
}

AxialStep autofocus_with_model(const AutoFocusConfig& cfg, const AutoFocusState& st,
                               const PriorModel* model, double q, const Vec3& x_probe,
                               const MotionSpec& spec, const Twist& user_cmd, double dt) {
  const Vec3 axial_unit = spec.axial_unit();
  const Vec3 lateral = linear_part(spec.lateral, x_probe);
  if (model == nullptr || !model->contains(lateral.head<2>())) {
    return autofocus_step(cfg, st, q, x_probe, axial_unit, user_cmd, dt);
  }

  const double lateral_motion = linear_part(spec.lateral, x_probe - st.x_probe_prev).norm();
  if (q < cfg.T2 && st.model_reached && lateral_motion < cfg.robot_resolution) {
    return autofocus_step(cfg, st, q, x_probe, axial_unit, user_cmd, dt);
  }

  AxialStep out{0.0, st, false};
  if (q < cfg.T2) {
    const Vec3 axial = linear_part(spec.axial, x_probe);
    out.dx = model->evaluate(lateral.head<2>()) - axial_unit.dot(axial);
    out.state.model_reached = std::abs(out.dx) < cfg.robot_resolution;
  }
  out.state.q_prev = q;
  out.state.x_probe_prev = x_probe;
  out.state.dx_prev = out.dx;
  return out;
}

void HapticConfig::validate() const {
  if (!(k_p >= 0.0 && k_R >= 0.0 && b >= 0.0)) throw Error("haptic gains must be non-negative");
}

Wrench compliance_wrench(const HapticConfig& cfg, const Vec3& epsilon, const Vec3& theta,
                         const Vec3& velocity) {
  return {cfg.k_p * epsilon + cfg.b * velocity, cfg.k_R * theta};
}

Eigen::VectorXd wrench_to_joint_torques(const Eigen::MatrixXd& J, const Wrench& w) {
  if (J.rows() != 6) throw Error("wrench_to_joint_torques: Jacobian must have 6 rows");
  return J.transpose() * w.vector();
}

}  // namespace retsim
