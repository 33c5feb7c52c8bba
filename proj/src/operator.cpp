#include "retsim/operator.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "retsim/error.hpp"

namespace retsim {

void TremorConfig::validate() const {
  if (!(amplitude >= 0.0)) throw Error("tremor: amplitude must be non-negative");
  if (!(band_low_hz > 0.0 && band_low_hz <= band_high_hz && band_high_hz <= 30.0)) {
    throw Error("tremor: band must lie within (0, 30] Hz");
  }
}

Tremor::Tremor(const TremorConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (auto& axis : axes_) {
    double total = 0.0;
    for (int k = 0; k < kComponents; ++k) {
      axis.freq[k] = cfg.band_low_hz + (cfg.band_high_hz - cfg.band_low_hz) * unit(rng);
      axis.phase[k] = 2.0 * M_PI * unit(rng);
      axis.weight[k] = 0.5 + 0.5 * unit(rng);
      total += axis.weight[k];
    }
    for (double& w : axis.weight) w /= total;
  }
}

Vec3 Tremor::sample(double t) const {
  Vec3 out = Vec3::Zero();
  if (cfg_.amplitude == 0.0) return out;
  for (int a = 0; a < 3; ++a) {
    double s = 0.0;
    for (int k = 0; k < kComponents; ++k) {
      s += axes_[a].weight[k] * std::sin(2.0 * M_PI * axes_[a].freq[k] * t + axes_[a].phase[k]);
    }
    out[a] = cfg_.amplitude * s;
  }
  return out;
}

std::vector<Vec2> triangle_path(const Vec2& center, double side) {
  if (!(side > 0.0)) throw Error("triangle side must be positive");
  const double r = side / std::sqrt(3.0);
  std::vector<Vec2> pts;
  for (int k = 0; k < 3; ++k) {
    const double a = M_PI / 2.0 + 2.0 * M_PI * k / 3.0;
    pts.push_back(center + r * Vec2(std::cos(a), std::sin(a)));
  }
  pts.push_back(pts.front());
  return pts;
}

std::vector<Vec2> subdivide_path(const std::vector<Vec2>& pts, double max_len) {
  if (!(max_len > 0.0) || pts.size() < 2) return pts;
  std::vector<Vec2> out{pts.front()};
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const Vec2 d = pts[i] - pts[i - 1];
    const int n = std::max(1, static_cast<int>(std::ceil(d.norm() / max_len - 1e-9)));
    for (int k = 1; k <= n; ++k) out.push_back(pts[i - 1] + d * (static_cast<double>(k) / n));
  }
  return out;
}

TimedPath::TimedPath(std::vector<Vec2> waypoints, double speed, double dwell)
    : waypoints_(std::move(waypoints)), speed_(speed), dwell_(dwell) {
  if (waypoints_.empty()) throw Error("path: no waypoints");
  if (!(speed_ > 0.0)) throw Error("path: speed must be positive");
  if (!(dwell_ >= 0.0)) throw Error("path: dwell must be non-negative");
  knots_.push_back(0.0);
  for (std::size_t i = 1; i < waypoints_.size(); ++i) {
    knots_.push_back(knots_.back() + (waypoints_[i] - waypoints_[i - 1]).norm() / speed_);
    knots_.push_back(knots_.back() + (i + 1 < waypoints_.size() ? dwell_ : 0.0));
  }
}

std::size_t TimedPath::phase_of(double s) const {
  const auto it = std::upper_bound(knots_.begin(), knots_.end(), s);
  if (it == knots_.begin()) return 0;
  return std::min<std::size_t>(static_cast<std::size_t>(it - knots_.begin()) - 1,
                               knots_.size() - 2);
}

Vec2 TimedPath::position(double s) const {
  if (waypoints_.size() == 1 || s <= 0.0) return waypoints_.front();
  if (s >= duration()) return waypoints_.back();
  const std::size_t phase = phase_of(s);
  const std::size_t seg = phase / 2;
  if (phase % 2 == 1) return waypoints_[seg + 1];
  const double len = knots_[phase + 1] - knots_[phase];
  const double u = len > 0.0 ? (s - knots_[phase]) / len : 1.0;
  return waypoints_[seg] + u * (waypoints_[seg + 1] - waypoints_[seg]);
}

Vec2 TimedPath::velocity(double s) const {
  if (waypoints_.size() == 1 || s < 0.0 || s >= duration()) return Vec2::Zero();
  const std::size_t phase = phase_of(s);
  if (phase % 2 == 1) return Vec2::Zero();
  const std::size_t seg = phase / 2;
  const Vec2 d = waypoints_[seg + 1] - waypoints_[seg];
  const double n = d.norm();
  return n > 0.0 ? Vec2(d * (speed_ / n)) : Vec2::Zero();
}

void OperatorScript::validate() const {
  if (waypoints.empty()) throw Error("operator: waypoints must be non-empty");
  if (!(speed > 0.0)) throw Error("operator: speed must be positive");
  if (!(dwell >= 0.0 && stroke >= 0.0 && capture_radius > 0.0 && force_cap > 0.0 && nav_gain >= 0.0 &&
        hand_stiffness >= 0.0 && lag_limit > 0.0 && reaction_delay >= 0.0 &&
        axial_speed >= 0.0 && flip_margin >= 0.0)) {
    throw Error("operator: parameters out of range");
  }
}

void advance_operator(const OperatorScript& script, const TimedPath& path, double t,
                      const Vec2& probe_lateral, OperatorState& state) {
  const double dt = std::max(0.0, t - state.last_t);
  state.last_t = t;
  if (state.finished()) return;

  // The operator waits for a lagging probe instead of running ahead.
  const double lag = (path.position(state.clock) - probe_lateral).norm();
  if (lag < script.lag_limit) state.clock = std::min(state.clock + dt, path.duration());

  const auto& wps = path.waypoints();
  if (state.waypoint >= wps.size()) {
    state.finish_time = t;
    return;
  }
  if ((wps[state.waypoint] - probe_lateral).norm() < script.capture_radius) {
    // A waypoint counts once the path clock has actually brought the hand there.
    if (state.clock >= path.arrival_time(state.waypoint)) {
      ++state.waypoint;
      if (state.waypoint >= wps.size()) state.finish_time = t;
    }
  }
}

Wrench operator_force(const OperatorScript& script, const TimedPath& path, const Tremor& tremor,
                      double t, const Vec3& probe_tip, const OperatorState& state, double alpha) {
  if (script.mode != OperatorMode::cooperative_force) {
    throw Error("operator_force: script is not cooperative");
  }
  if (!(alpha > 0.0)) throw Error("operator_force: alpha must be positive");
  Vec2 lateral = Vec2::Zero();
  if (!state.finished()) {
    const Vec2 target = path.position(state.clock);
    lateral = path.velocity(state.clock) / alpha +
              script.nav_gain * (target - probe_tip.head<2>());
    const double n = lateral.norm();
    if (n > script.force_cap) lateral *= script.force_cap / n;
  }
  Wrench w;
  w.force.head<2>() = lateral;
  w.force += script.hand_stiffness * tremor.sample(t);
  return w;
}

RigidTransform operator_mtm_motion(const OperatorScript& script, const TimedPath& path,
                                   const Tremor& tremor, double t, double path_time,
                                   const RigidTransform& mtm_initial, double beta) {
  if (script.mode != OperatorMode::teleop_pose) {
    throw Error("operator_mtm_motion: script is not teleoperated");
  }
  if (!(beta > 0.0)) throw Error("operator_mtm_motion: beta must be positive");
  Vec3 offset = Vec3::Zero();
  offset.head<2>() = (path.position(path_time) - path.position(0.0)) / beta;
  RigidTransform pose = mtm_initial;
  pose.translation += offset + tremor.sample(t) - tremor.sample(0.0);
  return pose;
}

NaiveFocusPolicy::NaiveFocusPolicy(NaiveFocusConfig cfg)
    : cfg_(cfg), direction_(cfg.initial_direction >= 0 ? 1 : -1) {}

double NaiveFocusPolicy::update(double t, std::optional<double> frame_score) {
  if (frame_score) pending_.emplace_back(t, *frame_score);
  bool fresh = false;
  while (!pending_.empty() && pending_.front().first <= t - cfg_.reaction_delay + 1e-12) {
    perceived_ = pending_.front().second;
    pending_.pop_front();
    fresh = true;
  }
  if (!perceived_) return 0.0;
  const double q = *perceived_;

  if (q >= cfg_.T2) {
    best_ = q;
    worse_since_.reset();
    return 0.0;
  }
  if (fresh) {
    if (q > best_) {
      best_ = q;
      worse_since_.reset();
    } else if (q < best_ - cfg_.margin) {
      if (!worse_since_) worse_since_ = t;
    } else {
      worse_since_.reset();
    }
  }
  if (worse_since_ && t - *worse_since_ >= cfg_.reaction_delay) {
    direction_ = -direction_;
    best_ = q;
    worse_since_.reset();
  }
  return direction_ * cfg_.speed;
}

}  // namespace retsim
