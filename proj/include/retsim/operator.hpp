#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <vector>

#include "retsim/geometry.hpp"

namespace retsim {

struct TremorConfig {
  double amplitude = 200e-6;  // peak per axis, meters
  double band_low_hz = 6.0;
  double band_high_hz = 12.0;
  std::uint64_t seed = 21;

  void validate() const;
};

// Physiological hand tremor: per axis, a seeded sum of 8 sinusoids inside the
// band whose weights sum to one, so |component| never exceeds the amplitude.
class Tremor {
 public:
  static constexpr int kComponents = 8;

  explicit Tremor(const TremorConfig& cfg);
  Vec3 sample(double t) const;
  const TremorConfig& config() const { return cfg_; }

 private:
  struct Axis {
    std::array<double, kComponents> freq{};
    std::array<double, kComponents> phase{};
    std::array<double, kComponents> weight{};
  };
  TremorConfig cfg_;
  std::array<Axis, 3> axes_;
};

inline Vec3 tremor_sample(const Tremor& tremor, double t) { return tremor.sample(t); }

// Closed triangle through three corners, starting and ending at the first.
std::vector<Vec2> triangle_path(const Vec2& center, double side);
// Inserts evenly spaced points so that no segment is longer than max_len.
std::vector<Vec2> subdivide_path(const std::vector<Vec2>& pts, double max_len);

// Constant-speed walk along a polyline with an optional pause after reaching
// each interior waypoint.
class TimedPath {
 public:
  TimedPath(std::vector<Vec2> waypoints, double speed, double dwell = 0.0);

  Vec2 position(double s) const;
  Vec2 velocity(double s) const;
  double duration() const { return knots_.back(); }
  // Path time at which waypoint i (i >= 1) is reached.
  double arrival_time(std::size_t i) const { return i == 0 ? 0.0 : knots_[2 * i - 1]; }
  const std::vector<Vec2>& waypoints() const { return waypoints_; }

 private:
  // Index of the phase containing s; phases alternate move, dwell.
  std::size_t phase_of(double s) const;

  std::vector<Vec2> waypoints_;
  double speed_;
  double dwell_;
  std::vector<double> knots_;  // phase boundaries, starting at 0
};

enum class OperatorMode { cooperative_force, teleop_pose };
enum class AxialPolicy { hold, naive_focus_attempt };

struct OperatorScript {
  std::vector<Vec2> waypoints;
  double speed = 150e-6;        // m/s along the path
  double dwell = 0.0;           // s paused at each interior waypoint
  double stroke = 0.0;          // m; sides are cut into strokes this long (0: whole sides)
  OperatorMode mode = OperatorMode::cooperative_force;
  AxialPolicy axial_policy = AxialPolicy::naive_focus_attempt;
  double capture_radius = 0.5e-3;
  double force_cap = 20.0;      // N, lateral navigation force
  double nav_gain = 2000.0;     // N/m on the lateral path error
  double hand_stiffness = 5000.0;  // N/m, tremor displacement to hand force
  double lag_limit = 0.3e-3;    // path clock waits while the probe lags this far
  double reaction_delay = 0.3;  // s
  double axial_speed = 100e-6;  // m/s, naive focusing speed
  double flip_margin = 0.02;    // score drop that counts as getting worse

  void validate() const;
};

// Progress through a script. Owned by the simulation loop.
struct OperatorState {
  double clock = 0.0;           // path time actually consumed
  double last_t = 0.0;
  std::size_t waypoint = 1;     // next waypoint to capture
  std::optional<double> finish_time;
  bool finished() const { return finish_time.has_value(); }
};

// Advances the path clock and waypoint index for the probe's lateral position.
void advance_operator(const OperatorScript& script, const TimedPath& path, double t,
                      const Vec2& probe_lateral, OperatorState& state);

// Hand force on the end-effector in cooperative mode: feed-forward for the
// path velocity plus proportional correction toward the path, capped, and a
// tremor component. alpha is the admittance the operator feels.
Wrench operator_force(const OperatorScript& script, const TimedPath& path, const Tremor& tremor,
                      double t, const Vec3& probe_tip, const OperatorState& state, double alpha);

// MTM pose in teleoperation: the path scaled up by 1/beta plus unscaled
// tremor, orientation fixed at the initial pose.
RigidTransform operator_mtm_motion(const OperatorScript& script, const TimedPath& path,
                                   const Tremor& tremor, double t, double path_time,
                                   const RigidTransform& mtm_initial, double beta);

struct NaiveFocusConfig {
  double T2 = 0.47;
  double reaction_delay = 0.3;
  double speed = 100e-6;
  double margin = 0.02;
  int initial_direction = -1;  // -1 toward the tissue
};

// A deliberately imperfect human focusing attempt: bang-bang along the probe
// axis on delayed perception of the score, reversing when the picture has
// been getting worse for longer than the reaction delay.
class NaiveFocusPolicy {
 public:
  explicit NaiveFocusPolicy(NaiveFocusConfig cfg = {});

  // Feeds a new frame score (if any) and returns the axial velocity,
  // positive away from the tissue.
  double update(double t, std::optional<double> frame_score);
  int direction() const { return direction_; }

 private:
  NaiveFocusConfig cfg_;
  std::deque<std::pair<double, double>> pending_;
  std::optional<double> perceived_;
  double best_ = 0.0;
  std::optional<double> worse_since_;
  int direction_;
};

}  // namespace retsim
