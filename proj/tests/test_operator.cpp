#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "retsim/error.hpp"
#include "retsim/operator.hpp"

using namespace retsim;

TEST_CASE("tremor stays within amplitude and is not negligible") {
  const Tremor tr(TremorConfig{});
  const double amp = tr.config().amplitude;
  Vec3 peak = Vec3::Zero(), sq = Vec3::Zero();
  const int n = 60 * 1000;
  for (int i = 0; i < n; ++i) {
    const Vec3 s = tr.sample(i * 1e-3);
    peak = peak.cwiseMax(s.cwiseAbs());
    sq += s.cwiseProduct(s);
  }
  for (int a = 0; a < 3; ++a) {
    CHECK(peak[a] <= amp + 1e-15);
    CHECK(std::sqrt(sq[a] / n) >= 30e-6);
  }
  TremorConfig off;
  off.amplitude = 0.0;
  CHECK(Tremor(off).sample(0.37).norm() == 0.0);
  TremorConfig bad;
  bad.band_low_hz = 15.0;
  CHECK_THROWS_AS(Tremor{bad}, Error);
}

TEST_CASE("tremor energy sits in its band") {
  // Discrete Fourier power of one axis over 10 s: out-of-band bins are small.
  const Tremor tr(TremorConfig{});
  const int n = 4000;
  const double fs = 400.0;
  std::vector<double> x(n);
  for (int i = 0; i < n; ++i) x[i] = tr.sample(i / fs).x();
  double in_band = 0.0, total = 0.0;
  for (int k = 1; k < n / 2; ++k) {
    double re = 0.0, im = 0.0;
    for (int i = 0; i < n; ++i) {
      re += x[i] * std::cos(2 * M_PI * k * i / n);
      im -= x[i] * std::sin(2 * M_PI * k * i / n);
    }
    const double p = re * re + im * im;
    const double f = k * fs / n;
    total += p;
    if (f >= 5.5 && f <= 12.5) in_band += p;
  }
  CHECK(in_band / total > 0.95);
}

TEST_CASE("triangle path is closed and equilateral") {
  const auto pts = triangle_path(Vec2(1e-3, 0.0), 3e-3);
  REQUIRE(pts.size() == 4);
  CHECK(pts.front() == pts.back());
  for (int i = 0; i < 3; ++i) CHECK((pts[i + 1] - pts[i]).norm() == doctest::Approx(3e-3));
  const Vec2 c = (pts[0] + pts[1] + pts[2]) / 3.0;
  CHECK((c - Vec2(1e-3, 0.0)).norm() < 1e-15);
  CHECK_THROWS_AS(triangle_path(Vec2::Zero(), 0.0), Error);
}

TEST_CASE("subdivided path keeps the corners and bounds segment length") {
  const auto pts = triangle_path(Vec2::Zero(), 3e-3);
  const auto sub = subdivide_path(pts, 0.5e-3);
  CHECK(sub.size() == 1 + 3 * 6);
  for (std::size_t i = 1; i < sub.size(); ++i) CHECK((sub[i] - sub[i - 1]).norm() <= 0.5e-3 + 1e-15);
  CHECK((sub[6] - pts[1]).norm() < 1e-15);
  CHECK(subdivide_path(pts, 0.0).size() == pts.size());
}

TEST_CASE("timed path walks at constant speed and pauses at interior waypoints") {
  const std::vector<Vec2> wps{{0, 0}, {1e-3, 0}, {1e-3, 2e-3}};
  const TimedPath p(wps, 1e-3, 0.5);
  CHECK(p.duration() == doctest::Approx(1.0 + 0.5 + 2.0));
  CHECK((p.position(0.5) - Vec2(0.5e-3, 0)).norm() < 1e-15);
  CHECK((p.position(1.2) - wps[1]).norm() < 1e-15);
  CHECK(p.velocity(1.2).norm() == 0.0);
  CHECK((p.velocity(2.0) - Vec2(0, 1e-3)).norm() < 1e-15);
  CHECK((p.position(10.0) - wps[2]).norm() == 0.0);
  CHECK(p.arrival_time(1) == doctest::Approx(1.0));
  CHECK(p.arrival_time(2) == doctest::Approx(3.5));
  CHECK_THROWS_AS(TimedPath({}, 1.0), Error);
  CHECK_THROWS_AS(TimedPath(wps, 0.0), Error);
}

TEST_CASE("scripted operator captures waypoints only after reaching them in time") {
  OperatorScript s;
  s.waypoints = {{0, 0}, {1e-3, 0}};
  const TimedPath p(s.waypoints, s.speed);
  OperatorState st;
  // Probe already at the end but the path clock has not got there yet.
  advance_operator(s, p, 0.1, Vec2(1e-3, 0), st);
  CHECK(st.waypoint == 1);
  double t = 0.1;
  for (int i = 0; i < 2000 && !st.finished(); ++i) {
    t += 0.01;
    advance_operator(s, p, t, p.position(st.clock), st);
  }
  REQUIRE(st.finished());
  CHECK(*st.finish_time >= p.arrival_time(1) - s.capture_radius / s.speed);
}

TEST_CASE("cooperative hand force is capped and feeds forward the path speed") {
  OperatorScript s;
  s.waypoints = {{0, 0}, {1e-3, 0}};
  TremorConfig quiet;
  quiet.amplitude = 0.0;
  const Tremor tr(quiet);
  const TimedPath p(s.waypoints, s.speed);
  OperatorState st;
  st.clock = 1.0;
  const Vec3 on_path(p.position(1.0).x(), 0.0, -0.03);
  Wrench w = operator_force(s, p, tr, 1.0, on_path, st, 10e-6);
  CHECK(w.force.x() == doctest::Approx(s.speed / 10e-6));
  w = operator_force(s, p, tr, 1.0, Vec3(0, 20e-3, -0.03), st, 10e-6);
  CHECK(w.force.norm() == doctest::Approx(s.force_cap));
  s.mode = OperatorMode::teleop_pose;
  CHECK_THROWS_AS(operator_force(s, p, tr, 1.0, on_path, st, 10e-6), Error);
}

TEST_CASE("master motion is the path scaled by one over beta") {
  OperatorScript s;
  s.mode = OperatorMode::teleop_pose;
  s.waypoints = {{0, 0}, {1e-3, 0}};
  TremorConfig quiet;
  quiet.amplitude = 0.0;
  const TimedPath p(s.waypoints, s.speed);
  const RigidTransform T =
      operator_mtm_motion(s, p, Tremor(quiet), 2.0, 2.0, RigidTransform{}, 0.015);
  CHECK(T.translation.x() == doctest::Approx(p.position(2.0).x() / 0.015));
}

TEST_CASE("naive focusing reacts late and reverses on a worsening picture") {
  NaiveFocusConfig c;
  NaiveFocusPolicy pol(c);
  CHECK(pol.update(0.0, 0.2) == 0.0);  // nothing perceived yet
  double v = pol.update(0.31, std::nullopt);
  CHECK(v == doctest::Approx(-c.speed));
  // Score keeps falling: the direction flips, but not before the drop has
  // been perceived and has persisted for a reaction delay.
  double t = 0.31;
  double q = 0.2;
  double first_flip = -1.0;
  for (int i = 0; i < 100 && first_flip < 0.0; ++i) {
    t += 1.0 / 60.0;
    q -= 0.002;
    v = pol.update(t, q);
    if (pol.direction() == 1) first_flip = t;
  }
  REQUIRE(first_flip > 0.0);
  CHECK(v == doctest::Approx(c.speed));
  // Worse than the margin after ten frames, seen a delay later, acted on a delay after that.
  CHECK(first_flip >= 0.31 + 10.0 / 60.0 + 2 * c.reaction_delay - 1.0 / 60.0);
  // In focus: stop.
  for (int i = 0; i < 40; ++i) {
    t += 1.0 / 60.0;
    v = pol.update(t, 0.6);
  }
  CHECK(v == 0.0);
}
