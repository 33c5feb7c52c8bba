#include "retsim/sim.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <tuple>

#include "retsim/error.hpp"

namespace retsim {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

Vec3 tip_from_joints(const SimConfig& cfg, const JointVector& q) {
  return forward_kinematics(cfg.robot, q).translation;
}

}  // namespace

bool is_hybrid(Mode m) { return m == Mode::hybrid_cooperative || m == Mode::hybrid_teleoperated; }
bool is_cooperative(Mode m) { return m == Mode::cooperative || m == Mode::hybrid_cooperative; }
bool is_teleoperated(Mode m) {
  return m == Mode::teleoperated || m == Mode::hybrid_teleoperated;
}

std::string to_string(Mode m) {
  switch (m) {
    case Mode::manual: return "manual";
    case Mode::cooperative: return "cooperative";
    case Mode::hybrid_cooperative: return "hybrid_cooperative";
    case Mode::teleoperated: return "teleoperated";
    case Mode::hybrid_teleoperated: return "hybrid_teleoperated";
  }
  return "?";
}

std::string to_string(AxialController a) {
  switch (a) {
    case AxialController::optimizer: return "optimizer";
    case AxialController::model: return "model";
    case AxialController::combined: return "combined";
  }
  return "?";
}

std::string to_string(NormalSource n) { return n == NormalSource::vertical ? "vertical" : "surface"; }
std::string to_string(Phase p) { return p == Phase::registration ? "registration" : "task"; }

std::string to_string(RunStatus s) {
  switch (s) {
    case RunStatus::completed: return "completed";
    case RunStatus::timeout: return "timeout";
    case RunStatus::contact: return "contact";
    case RunStatus::limit: return "limit";
    case RunStatus::registration_failed: return "registration_failed";
  }
  return "?";
}

Mode parse_mode(const std::string& s) {
  for (Mode m : {Mode::manual, Mode::cooperative, Mode::hybrid_cooperative, Mode::teleoperated,
                 Mode::hybrid_teleoperated}) {
    if (to_string(m) == s) return m;
  }
  throw Error("unknown mode '" + s + "'");
}

AxialController parse_axial_controller(const std::string& s) {
  for (auto a : {AxialController::optimizer, AxialController::model, AxialController::combined}) {
    if (to_string(a) == s) return a;
  }
  throw Error("unknown axial controller '" + s + "'");
}

NormalSource parse_normal_source(const std::string& s) {
  if (s == "vertical") return NormalSource::vertical;
  if (s == "surface") return NormalSource::surface;
  throw Error("unknown normal source '" + s + "'");
}

std::vector<std::string> event_names(std::uint32_t events) {
  static const std::pair<std::uint32_t, const char*> names[] = {
      {event::contact, "contact"},
      {event::limit_hit, "limit_hit"},
      {event::registration_done, "registration_done"},
      {event::frame, "frame"},
      {event::waypoint, "waypoint"},
      {event::task_done, "task_done"},
      {event::registration_failed, "registration_failed"},
  };
  std::vector<std::string> out;
  for (const auto& [bit, name] : names) {
    if (events & bit) out.emplace_back(name);
  }
  return out;
}

void SimConfig::validate() const {
  if (!(control_rate > 0.0 && pcle_rate > 0.0)) throw Error("sim.control_rate_hz: rates must be positive");
  if (control_rate < pcle_rate) throw Error("sim.control_rate_hz: must be at least pcle_rate_hz");
  const double ratio = control_rate / pcle_rate;
  if (std::abs(ratio - std::round(ratio)) > 1e-9) {
    throw Error("sim.control_rate_hz: control_rate / pcle_rate must be an integer");
  }
  if (!(duration > 0.0)) throw Error("sim.duration_s: must be positive");
  if (!(max_axial_step > 0.0)) throw Error("control.max_axial_step_um: must be positive");

  if (!(alpha > 0.0)) throw Error("control.alpha_um_s_per_n: must be positive");
  if (!(task.side > 0.0)) throw Error("operator.path_side_mm: must be positive");
  if (!(task.start_distance > 0.0)) throw Error("sim.start_distance_um: must be positive");
  if (!(registration.margin >= 0.0 && registration.speed > 0.0)) {
    throw Error("registration: margin must be non-negative and speed positive");
  }
  if (registration.sample_target < 6) throw Error("registration.sample_count: must be at least 6");
  focus.validate();
  phantom.validate();
  robot.validate();
  autofocus.validate();
  tremor.validate();
  teleop.haptic.validate();
  TeleopState{RigidTransform{}, RigidTransform{}, teleop.base_map, teleop.beta}.validate();
  OperatorScript script = operator_script;
  script.waypoints = {Vec2::Zero()};
  script.validate();
  TissueModel tissue(phantom);
  for (const Vec2& p : registration_route(task, registration.margin)) {
    if (!tissue.in_disc(p)) throw Error("operator.path_side_mm: path leaves the scannable disc");
  }
}

int SimConfig::ticks_per_frame() const {
  return static_cast<int>(std::lround(control_rate / pcle_rate));
}

bool SimConfig::uses_registration() const {
  return is_hybrid(mode) && axial_controller != AxialController::optimizer && registration.enabled;
}

double motion_smoothness(const std::vector<Vec3>& traj, double dt) {
  if (traj.size() < 4) throw Error("motion_smoothness: need at least 4 samples");
  if (!(dt > 0.0)) throw Error("motion_smoothness: dt must be positive");
  const double scale = 1.0 / (dt * dt * dt);
  double sum = 0.0;
  for (std::size_t i = 3; i < traj.size(); ++i) {
    const Vec3 jerk = (traj[i] - 3.0 * traj[i - 1] + 3.0 * traj[i - 2] - traj[i - 3]) * scale;
    sum += jerk.norm();
  }
  return sum / static_cast<double>(traj.size() - 3);
}

namespace {

std::vector<const FrameRecord*> task_frames(const RunLog& log) {
  std::vector<const FrameRecord*> out;
  for (const auto& f : log.frames) {
    if (f.phase == Phase::task) out.push_back(&f);
  }
  if (out.empty()) throw Error("no task-phase frames in log");
  return out;
}

}  // namespace

double mean_cr(const RunLog& log) {
  const auto frames = task_frames(log);
  double s = 0.0;
  for (const auto* f : frames) s += f->cr;
  return s / static_cast<double>(frames.size());
}

double in_focus_fraction(const RunLog& log, double T2) {
  const auto frames = task_frames(log);
  std::size_t n = 0;
  for (const auto* f : frames) n += f->cr >= T2;
  return static_cast<double>(n) / static_cast<double>(frames.size());
}

std::optional<double> completion_time(const RunLog& log) {
  std::optional<double> start;
  for (const auto& r : log.ticks) {
    if (r.phase == Phase::task && !start) start = r.t;
    if (r.events & event::task_done) return r.t - start.value_or(0.0);
  }
  return std::nullopt;
}

RunMetrics compute_metrics(const RunLog& log, double T2, double dt) {
  RunMetrics m;
  m.frame_count = 0;
  for (const auto& f : log.frames) m.frame_count += f.phase == Phase::task;
  if (m.frame_count > 0) {
    m.mean_cr = mean_cr(log);
    m.in_focus_fraction = in_focus_fraction(log, T2);
  }
  m.completion_time = completion_time(log);
  std::vector<Vec3> traj;
  m.min_distance = log.ticks.empty() ? 0.0 : log.ticks.front().distance;
  for (const auto& r : log.ticks) {
    if (r.phase == Phase::task) traj.push_back(r.tip);
    if (r.phase == Phase::registration && (r.events & event::registration_done)) {
      m.registration_time = r.t;
    }
    m.min_distance = std::min(m.min_distance, r.distance);
    m.contact_ticks += (r.events & event::contact) != 0;
  }
  if (traj.size() >= 4) m.motion_smoothness = motion_smoothness(traj, dt);
  return m;
}

std::shared_ptr<const FrameRenderer> shared_renderer(const TextureConfig& tex,
                                                     const FocusProfile& profile,
                                                     const RendererConfig& cfg) {
  using Key = std::tuple<double, double, double, double, std::uint64_t, double, double, double,
                         double, double, int, int, double, double, int, double>;
  static std::mutex mu;
  static std::map<Key, std::shared_ptr<const FrameRenderer>> cache;
  const Key key{tex.pixel_pitch, tex.extent, tex.origin.x(), tex.origin.y(), tex.seed,
                profile.optimal_distance, profile.focus_band, profile.out_of_range_distance,
                profile.peak_cr, profile.floor_cr, cfg.frame_size, cfg.cr_filter_length,
                cfg.band_edge_score, cfg.noise_std, cfg.noise_spacing, cfg.gain_span};
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(key);
  if (it == cache.end()) {
    auto r = std::make_shared<const FrameRenderer>(Texture::shared(tex), profile, cfg);
    it = cache.emplace(key, std::move(r)).first;
  }
  return it->second;
}

std::vector<Vec2> registration_route(const TaskConfig& task, double margin) {
  // Offsetting the sides of an equilateral triangle by m moves each corner
  // 2m away from the center.
  auto pts = triangle_path(task.center, task.side);
  for (auto& p : pts) {
    const Vec2 d = p - task.center;
    p = task.center + d * ((d.norm() + 2.0 * margin) / d.norm());
  }
  return pts;
}

// --- Scripted operator ---------------------------------------------------------

ScriptedDriver::ScriptedDriver(const SimConfig& cfg)
    : cfg_(cfg),
      script_([&] {
        OperatorScript s = cfg.operator_script;
        s.waypoints = subdivide_path(triangle_path(cfg.task.center, cfg.task.side), s.stroke);
        s.mode = is_teleoperated(cfg.mode) ? OperatorMode::teleop_pose
                                           : OperatorMode::cooperative_force;
        s.axial_policy = is_hybrid(cfg.mode) ? AxialPolicy::hold : AxialPolicy::naive_focus_attempt;
        return s;
      }()),
      path_(script_.waypoints, script_.speed, script_.dwell),
      tremor_([&] {
        TremorConfig t = cfg.tremor;
        t.seed = mix_seed(cfg.tremor.seed, cfg.seed);
        return t;
      }()),
      naive_(NaiveFocusConfig{cfg.autofocus.T2, script_.reaction_delay, script_.axial_speed,
                              script_.flip_margin, -1}),
      naive_enabled_(script_.axial_policy == AxialPolicy::naive_focus_attempt) {
  script_.validate();
}

void ScriptedDriver::begin_task(double t, const Vec3& tip) {
  started_ = true;
  t0_ = t;
  last_t_ = t;
  start_tip_ = tip;
  state_ = OperatorState{};
  axial_offset_ = 0.0;
}

HumanInput ScriptedDriver::input(double t, const Vec3& tip, std::optional<double> new_score) {
  HumanInput in;
  if (!started_) return in;
  const double tt = t - t0_;
  const double dt = std::max(0.0, t - last_t_);
  last_t_ = t;

  advance_operator(script_, path_, tt, tip.head<2>(), state_);
  if (state_.finished()) return in;
  in.pedal = true;

  const double v_axial = naive_enabled_ ? naive_.update(tt, new_score) : 0.0;
  axial_offset_ += v_axial * dt;

  switch (cfg_.mode) {
    case Mode::manual: {
      Vec3 hand;
      hand << path_.position(state_.clock), start_tip_.z() + axial_offset_;
      in.hand_tip = hand + tremor_.sample(tt) - tremor_.sample(0.0);
      break;
    }
    case Mode::cooperative:
    case Mode::hybrid_cooperative: {
      in.force = operator_force(script_, path_, tremor_, tt, tip, state_, cfg_.alpha);
      in.force.force.z() += v_axial / cfg_.alpha;
      break;
    }
    case Mode::teleoperated:
    case Mode::hybrid_teleoperated: {
      RigidTransform mtm = operator_mtm_motion(script_, path_, tremor_, tt, state_.clock,
                                               mtm_initial_, cfg_.teleop.beta);
      mtm.translation.z() += axial_offset_ / cfg_.teleop.beta;
      in.mtm = mtm;
      break;
    }
  }
  return in;
}

// --- Engine --------------------------------------------------------------------

Simulation::Simulation(const SimConfig& cfg) : Simulation(cfg, std::nullopt) {}

Simulation::Simulation(const SimConfig& cfg, std::optional<PriorModel> prior)
    : cfg_(cfg),
      mode_(cfg.mode),
      tissue_(cfg.phantom),
      renderer_(shared_renderer(cfg.texture, cfg.focus, cfg.renderer)),
      prior_(std::move(prior)) {
  cfg_.validate();
  prior_given_ = prior_.has_value();

  const Vec2 start = triangle_path(cfg_.task.center, cfg_.task.side).front();
  Vec3 tip;
  tip << start, tissue_.surface_height(start, 0.0) + cfg_.task.start_distance;
  JointVector q = JointVector::Zero();
  q.head<3>() = tip - cfg_.robot.tool_offset.translation;
  for (int j = 0; j < 3; ++j) q[j] = std::round(q[j] / cfg_.robot.resolution) * cfg_.robot.resolution;
  joints_ = JointState::at_rest(q);
  af_state_ = AutoFocusState::at(this->tip());

  if (cfg_.uses_registration() && !prior_given_) {
    start_registration();
  } else {
    begin_task();
  }
}

Vec3 Simulation::tip() const { return tip_from_joints(cfg_, joints_.servo); }

bool Simulation::frame_due() const { return tick_ % cfg_.ticks_per_frame() == 0; }

void Simulation::begin_task() {
  phase_ = Phase::task;
  task_start_ = time();
  teleop_.reset();
}

void Simulation::start_registration() {
  phase_ = Phase::registration;
  prior_.reset();
  scan_.clear();
  std::vector<Vec2> route{tip().head<2>()};
  for (const Vec2& p : registration_route(cfg_.task, cfg_.registration.margin)) route.push_back(p);
  route.push_back(triangle_path(cfg_.task.center, cfg_.task.side).front());
  reg_path_.emplace(route, cfg_.registration.speed);
  reg_state_ = OperatorState{};
  reg_state_.last_t = time();
  reg_state_.clock = 0.0;
}

void Simulation::set_mode(Mode m) {
  mode_ = m;
  cfg_.mode = m;
  teleop_.reset();
  axial_velocity_ = 0.0;
  axial_handover_ = false;
}

void Simulation::mark_task_done() {
  if (log_.ticks.empty()) return;
  log_.ticks.back().events |= event::task_done;
  if (cfg_.stop_on_completion) stop(RunStatus::completed, "task completed");
}

void Simulation::stop(RunStatus s, std::string message) {
  if (status_) return;
  status_ = s;
  message_ = std::move(message);
}

MotionSpec Simulation::current_spec(const Vec3& tip) const {
  if (cfg_.normal_source == NormalSource::vertical) return motion_spec(Mat3::Identity());
  return motion_spec(normal_rotation_from_normal(tissue_.surface_normal(tip.head<2>(), time())));
}

Simulation::Frame Simulation::capture(std::uint32_t& events) {
  const Vec3 truth = tip();
  const double t = time();
  const double distance = std::max(0.0, tissue_.probe_distance(truth, t));
  PcleFrame frame = renderer_->render(truth.head<2>(), distance,
                                      mix_seed(cfg_.seed, static_cast<std::uint64_t>(frame_index_)), t);
  ++frame_index_;
  const double score = cr_score(frame, cfg_.renderer.cr_filter_length);
  log_.frames.push_back(FrameRecord{t, phase_, truth, score, intensity(frame), distance});
  latest_frame_ = std::move(frame);
  latest_score_ = score;
  events |= event::frame;
  return Frame{score, tip_from_joints(cfg_, joints_.positions)};
}

Twist Simulation::user_twist(const HumanInput& input, const RigidTransform& measured) {
  haptic_force_.setZero();
  if (!input.pedal) {
    teleop_.reset();
    return Twist::zero();
  }
  if (is_cooperative(mode_)) {
    return admittance(input.force, cfg_.alpha, measured);
  }
  if (is_teleoperated(mode_) && input.mtm) {
    if (!teleop_) {
      teleop_ = TeleopState{*input.mtm, measured, cfg_.teleop.base_map, cfg_.teleop.beta};
    }
    const TeleopError e = teleop_error(*teleop_, *input.mtm, measured);
    haptic_force_ = compliance_wrench(cfg_.teleop.haptic, e.epsilon, e.theta,
                                      joints_.velocities.head<3>())
                        .force;
    return teleop_lateral(e.epsilon, e.theta, cfg_.dt());
  }
  return Twist::zero();
}

double Simulation::axial_update(const Frame& frame, const Twist& user, const MotionSpec& spec) {
  const double frame_dt = cfg_.ticks_per_frame() * cfg_.dt();
  const Vec3 axial_unit = spec.axial_unit();
  AxialStep step;
  const bool model_only =
      cfg_.axial_controller == AxialController::model && phase_ == Phase::task;
  if (model_only) {
    step.state = af_state_;
    const Vec2 xy = frame.tip.head<2>();
    if (prior_ && prior_->contains(xy)) step.dx = prior_->evaluate(xy) - axial_unit.dot(frame.tip);
    step.state.q_prev = frame.score;
    step.state.x_probe_prev = frame.tip;
    step.state.dx_prev = step.dx;
  } else if (cfg_.axial_controller == AxialController::optimizer) {
    step = autofocus_step(cfg_.autofocus, af_state_, frame.score, frame.tip, axial_unit, user,
                          frame_dt);
  } else {
    step = autofocus_with_model(cfg_.autofocus, af_state_, prior_ ? &*prior_ : nullptr,
                                frame.score, frame.tip, spec, user, frame_dt);
  }
  af_state_ = step.state;
  axial_handover_ = step.handover;
  const double dx = std::clamp(step.dx, -cfg_.max_axial_step, cfg_.max_axial_step);
  return dx / frame_dt;
}

void Simulation::finish_registration(std::uint32_t& events) {
  try {
    prior_ = register_prior(scan_, cfg_.autofocus.T2, cfg_.registration.sample_target);
  } catch (const Error& e) {
    events |= event::registration_failed;
    stop(RunStatus::registration_failed, e.what());
    return;
  }
  events |= event::registration_done;
  registration_end_ = time() + cfg_.dt();
  reg_path_.reset();
}

void Simulation::step(const HumanInput& input_in) {
  if (status_) throw Error("simulation already stopped");
  const double dt = cfg_.dt();
  const double t = time();
  std::uint32_t events = 0;

  std::optional<Frame> frame;
  if (frame_due()) frame = capture(events);

  const bool registering = phase_ == Phase::registration;
  HumanInput input = registering ? HumanInput{} : input_in;
  const RigidTransform measured = forward_kinematics(cfg_.robot, joints_.servo);

  Twist user = user_twist(input, measured);
  if (registering && reg_path_) {
    const Vec2 tip_xy = measured.translation.head<2>();
    const Vec2 target = reg_path_->position(reg_state_.clock);
    Vec2 v = reg_path_->velocity(reg_state_.clock) + 4.0 * (target - tip_xy);
    const double cap = 2e-3;
    if (v.norm() > cap) v *= cap / v.norm();
    user = Twist::zero();
    user.linear.head<2>() = v;
  }
  if (registering && frame && reg_path_) {
    scan_.push_back(ScanSample{frame->tip.head<2>(), frame->tip.z(), frame->score});
  }

  const MotionSpec spec = current_spec(measured.translation);
  Twist command = user;
  double axial_cmd = 0.0;
  if (is_hybrid(mode_) || registering) {
    if (frame) axial_velocity_ = axial_update(*frame, user, spec);
    const Vec3 unit = spec.axial_unit();
    axial_cmd = axial_handover_ ? unit.dot(user.linear) : axial_velocity_;
    Twist axial;
    axial.linear = axial_cmd * unit;
    command = hybrid_combine(spec, user, axial);
  } else {
    axial_cmd = spec.axial_unit().dot(user.linear);
  }

  if (mode_ == Mode::manual && !registering) {
    if (input.hand_tip) {
      JointVector q = joints_.servo;
      q.head<3>() = *input.hand_tip - cfg_.robot.tool_offset.translation;
      q = q.cwiseMax(cfg_.robot.q_lower).cwiseMin(cfg_.robot.q_upper);
      JointState next = joints_;
      next.velocities = (q - joints_.servo) / dt;
      next.servo = q;
      next.positions = q;
      for (int j = 0; j < 3; ++j) {
        next.positions[j] = std::round(q[j] / cfg_.robot.resolution) * cfg_.robot.resolution;
      }
      joints_ = next;
      command.linear = next.velocities.head<3>();
    } else {
      joints_.velocities.setZero();
      command = Twist::zero();
    }
  } else {
    try {
      const JointVector qd = mid_level_optimize(cfg_.robot, joints_.positions, command, dt);
      joints_ = low_level_step(cfg_.robot, joints_, qd, dt);
    } catch (const LimitError& e) {
      events |= event::limit_hit;
      stop(RunStatus::limit, e.what());
    }
  }
  for (int j = 0; j < 3; ++j) {
    if (joints_.servo[j] <= cfg_.robot.q_lower[j] || joints_.servo[j] >= cfg_.robot.q_upper[j]) {
      events |= event::limit_hit;
    }
  }

  const double t_next = t + dt;
  const Vec3 truth = tip();
  const double distance = tissue_.probe_distance(truth, t_next);
  if (distance <= 0.0) {
    events |= event::contact;
    if (cfg_.safety_strict) stop(RunStatus::contact, "probe touched the tissue");
  }

  if (registering && reg_path_ && !status_) {
    const std::size_t before = reg_state_.waypoint;
    OperatorScript follow;
    follow.waypoints = reg_path_->waypoints();
    follow.capture_radius = 50e-6;
    follow.lag_limit = 0.2e-3;
    advance_operator(follow, *reg_path_, t_next,
                     tip_from_joints(cfg_, joints_.positions).head<2>(), reg_state_);
    if (reg_state_.waypoint != before) events |= event::waypoint;
    if (reg_state_.finished()) finish_registration(events);
  }

  TickRecord rec;
  rec.t = t_next;
  rec.phase = phase_;
  rec.tip = truth;
  rec.q = joints_.positions;
  rec.command = command;
  rec.axial_command = axial_cmd;
  rec.cr = latest_score_;
  rec.distance = distance;
  rec.events = events;
  log_.ticks.push_back(rec);

  ++tick_;
  if (phase_ == Phase::registration && (events & event::registration_done)) begin_task();
  if (!status_ && time() >= cfg_.duration - 1e-12) stop(RunStatus::timeout, "duration reached");
}

RunResult Simulation::run(const SimConfig& cfg, std::optional<PriorModel> prior) {
  Simulation sim(cfg, std::move(prior));
  ScriptedDriver driver(sim.config());
  bool started = false;
  std::optional<double> seen;  // frame score from the previous tick
  while (!sim.stopped()) {
    if (!started && sim.phase() == Phase::task) {
      driver.begin_task(sim.time(), sim.tip());
      started = true;
    }
    const std::size_t waypoint_before = driver.waypoint();
    const HumanInput input = driver.input(sim.time(), sim.tip(), started ? seen : std::nullopt);
    const bool advanced = started && driver.waypoint() != waypoint_before;
    sim.step(input);
    const TickRecord& rec = sim.log_.ticks.back();
    seen = (rec.events & event::frame) ? rec.cr : std::nullopt;
    if (advanced) sim.log_.ticks.back().events |= event::waypoint;
    if (started && driver.finished()) sim.mark_task_done();
  }

  RunResult result;
  result.status = *sim.status_;
  result.message = sim.message_;
  result.prior = sim.prior_;
  result.task_start = sim.task_start_;
  result.metrics = compute_metrics(sim.log_, cfg.autofocus.T2, cfg.dt());
  result.log = std::move(sim.log_);
  return result;
}

}  // namespace retsim
