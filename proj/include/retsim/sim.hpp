#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "retsim/control.hpp"
#include "retsim/imaging.hpp"
#include "retsim/operator.hpp"
#include "retsim/phantom.hpp"
#include "retsim/robot.hpp"

namespace retsim {

enum class Mode { manual, cooperative, hybrid_cooperative, teleoperated, hybrid_teleoperated };
enum class AxialController { optimizer, model, combined };
enum class NormalSource { vertical, surface };

bool is_hybrid(Mode m);
bool is_cooperative(Mode m);
bool is_teleoperated(Mode m);
std::string to_string(Mode m);
std::string to_string(AxialController a);
std::string to_string(NormalSource n);
Mode parse_mode(const std::string& s);
AxialController parse_axial_controller(const std::string& s);
NormalSource parse_normal_source(const std::string& s);

struct TaskConfig {
  Vec2 center = Vec2::Zero();
  double side = 3e-3;
  // Height of the probe above the tissue at the start of the run.
  double start_distance = 1.0e-3;
};

// Autonomous perimeter scan that collects samples for the prior model.
struct RegistrationConfig {
  bool enabled = true;
  double margin = 0.3e-3;   // perimeter offset outside the task triangle
  double speed = 300e-6;    // m/s
  int sample_target = 20;
};

struct TeleopConfig {
  double beta = 0.015;
  Mat3 base_map = Mat3::Identity();
  HapticConfig haptic;
};

struct SimConfig {
  double control_rate = 240.0;
  double pcle_rate = 60.0;
  double duration = 300.0;  // upper bound on simulated time, s
  Mode mode = Mode::hybrid_cooperative;
  std::uint64_t seed = 1;
  bool safety_strict = true;
  bool stop_on_completion = true;

  TextureConfig texture;
  FocusProfile focus;
  RendererConfig renderer;
  PhantomConfig phantom;
  RobotModel robot = RobotModel::default_model();

  AutoFocusConfig autofocus;
  AxialController axial_controller = AxialController::combined;
  NormalSource normal_source = NormalSource::vertical;
  double max_axial_step = 200e-6;

  double alpha = 10e-6;  // m/s per N
  TeleopConfig teleop;

  OperatorScript operator_script;  // waypoints come from the task
  TremorConfig tremor;
  TaskConfig task;
  RegistrationConfig registration;

  // Throws Error naming the offending setting.
  void validate() const;
  int ticks_per_frame() const;
  double dt() const { return 1.0 / control_rate; }
  bool uses_registration() const;
};

// What the human (scripted or live) is doing at this tick.
struct HumanInput {
  bool pedal = false;
  Wrench force;                       // cooperative: hand force on the end-effector
  std::optional<RigidTransform> mtm;  // teleoperation: MTM pose
  std::optional<Vec3> hand_tip;       // manual: where the hand holds the probe tip
};

enum class Phase { registration, task };
std::string to_string(Phase p);

namespace event {
inline constexpr std::uint32_t contact = 1u << 0;
inline constexpr std::uint32_t limit_hit = 1u << 1;
inline constexpr std::uint32_t registration_done = 1u << 2;
inline constexpr std::uint32_t frame = 1u << 3;
inline constexpr std::uint32_t waypoint = 1u << 4;
inline constexpr std::uint32_t task_done = 1u << 5;
inline constexpr std::uint32_t registration_failed = 1u << 6;
}  // namespace event

std::vector<std::string> event_names(std::uint32_t events);

struct TickRecord {
  double t = 0.0;
  Phase phase = Phase::task;
  Vec3 tip = Vec3::Zero();             // continuous plant pose
  JointVector q = JointVector::Zero(); // measured joints
  Twist command;                       // combined desired twist
  double axial_command = 0.0;          // axial velocity along the axial unit, m/s
  std::optional<double> cr;            // score of the latest completed frame
  double distance = 0.0;               // true probe-to-tissue distance
  std::uint32_t events = 0;
};

struct FrameRecord {
  double t = 0.0;
  Phase phase = Phase::task;
  Vec3 tip = Vec3::Zero();
  double cr = 0.0;
  double intensity = 0.0;
  double distance = 0.0;
};

struct RunLog {
  std::vector<TickRecord> ticks;
  std::vector<FrameRecord> frames;
};

enum class RunStatus { completed, timeout, contact, limit, registration_failed };
std::string to_string(RunStatus s);

struct RunMetrics {
  double mean_cr = 0.0;
  double in_focus_fraction = 0.0;
  std::optional<double> completion_time;   // task phase only
  std::optional<double> registration_time;
  double motion_smoothness = 0.0;          // task phase
  double min_distance = 0.0;
  int contact_ticks = 0;
  int frame_count = 0;
};

struct RunResult {
  RunStatus status = RunStatus::timeout;
  std::string message;
  RunLog log;
  RunMetrics metrics;
  std::optional<PriorModel> prior;
  double task_start = 0.0;
};

// Mean of per-sample Euclidean jerk norms with the (1, -3, 3, -1) / dt^3
// stencil. Throws Error for fewer than 4 samples or dt <= 0.
double motion_smoothness(const std::vector<Vec3>& traj, double dt);

// Over task-phase frames. Throw Error when there are none.
double mean_cr(const RunLog& log);
double in_focus_fraction(const RunLog& log, double T2);
// Time from task start to the task_done event, if it happened.
std::optional<double> completion_time(const RunLog& log);

RunMetrics compute_metrics(const RunLog& log, double T2, double dt);

// Scripted human for headless runs.
class ScriptedDriver {
 public:
  ScriptedDriver(const SimConfig& cfg);

  // Called once the task phase starts, with the probe pose at that moment.
  void begin_task(double t, const Vec3& tip);
  HumanInput input(double t, const Vec3& tip, std::optional<double> new_score);
  bool finished() const { return state_.finished(); }
  std::size_t waypoint() const { return state_.waypoint; }
  const TimedPath& path() const { return path_; }

 private:
  SimConfig cfg_;
  OperatorScript script_;
  TimedPath path_;
  Tremor tremor_;
  OperatorState state_;
  NaiveFocusPolicy naive_;
  bool naive_enabled_;
  bool started_ = false;
  double t0_ = 0.0;
  double last_t_ = 0.0;
  double axial_offset_ = 0.0;  // integrated human axial motion at the probe
  Vec3 start_tip_ = Vec3::Zero();
  RigidTransform mtm_initial_;
};

// Deterministic fixed-step engine. One call to step() is one control tick.
class Simulation {
 public:
  explicit Simulation(const SimConfig& cfg);
  // Reuses a prior model from an earlier registration instead of scanning.
  Simulation(const SimConfig& cfg, std::optional<PriorModel> prior);

  const SimConfig& config() const { return cfg_; }
  double time() const { return tick_ * cfg_.dt(); }
  long tick() const { return tick_; }
  Phase phase() const { return phase_; }
  Mode mode() const { return mode_; }
  bool stopped() const { return status_.has_value(); }
  std::optional<RunStatus> status() const { return status_; }
  const RunLog& log() const { return log_; }
  const std::optional<PriorModel>& prior() const { return prior_; }
  const JointState& joints() const { return joints_; }
  Vec3 tip() const;
  const TickRecord& last_record() const { return log_.ticks.back(); }
  const std::optional<PcleFrame>& latest_frame() const { return latest_frame_; }
  double task_start() const { return task_start_; }
  const TissueModel& tissue() const { return tissue_; }
  const FrameRenderer& renderer() const { return *renderer_; }

  // New score if a frame completed at the current tick (before step()).
  bool frame_due() const;

  // Advances one tick with the given human input.
  void step(const HumanInput& input);

  // Interactive controls; mode changes reset the lateral channel state.
  void set_mode(Mode m);
  void start_registration();
  void mark_task_done();
  void stop(RunStatus s, std::string message);

  // Runs the scripted operator to completion or timeout.
  static RunResult run(const SimConfig& cfg, std::optional<PriorModel> prior = std::nullopt);

 private:
  struct Frame {
    double score;
    Vec3 tip;
  };

  void begin_task();
  Twist user_twist(const HumanInput& input, const RigidTransform& measured);
  double axial_update(const Frame& frame, const Twist& user, const MotionSpec& spec);
  MotionSpec current_spec(const Vec3& tip) const;
  Frame capture(std::uint32_t& events);
  void finish_registration(std::uint32_t& events);

  SimConfig cfg_;
  Mode mode_;
  TissueModel tissue_;
  std::shared_ptr<const FrameRenderer> renderer_;
  JointState joints_;
  long tick_ = 0;
  Phase phase_ = Phase::task;
  double task_start_ = 0.0;
  std::optional<double> registration_end_;
  std::optional<RunStatus> status_;
  std::string message_;
  RunLog log_;

  std::optional<PcleFrame> latest_frame_;
  std::optional<double> latest_score_;
  long frame_index_ = 0;

  AutoFocusState af_state_;
  double axial_velocity_ = 0.0;
  bool axial_handover_ = false;
  std::optional<PriorModel> prior_;
  bool prior_given_ = false;

  // Registration route following.
  std::optional<TimedPath> reg_path_;
  OperatorState reg_state_;
  std::vector<ScanSample> scan_;

  std::optional<TeleopState> teleop_;
  Vec3 haptic_force_ = Vec3::Zero();

  friend class SimulationTestAccess;
};

std::shared_ptr<const FrameRenderer> shared_renderer(const TextureConfig& tex,
                                                     const FocusProfile& profile,
                                                     const RendererConfig& cfg);

// The task triangle dilated outward by margin (closed polygon).
std::vector<Vec2> registration_route(const TaskConfig& task, double margin);

}  // namespace retsim
