#include "retsim/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "retsim/error.hpp"

namespace retsim {

namespace {
constexpr double kNormalStep = 10e-6;
constexpr int kWalkKnots = 4096;
}  // namespace

void PhantomConfig::validate() const {
  if (!(outer_diameter > 2 * wall_thickness && wall_thickness >= 0.0)) {
    throw Error("phantom: wall thickness must be below the radius");
  }
  if (!(opening_diameter > 0.0 && opening_diameter < outer_diameter - 2 * wall_thickness)) {
    throw Error("phantom: opening must fit inside the sphere");
  }
  if (bump_count < 0 || bump_amplitude < 0.0) throw Error("phantom: bad bump config");
  if (bump_count > 0 && !(bump_amplitude < 0.5 * focus_band)) {
    throw Error("phantom: bump amplitude must stay below half the focus band");
  }
  if (bump_count > 0 && !(bump_width_min > 0.0 && bump_width_min <= bump_width_max)) {
    throw Error("phantom: bump widths must satisfy 0 < min <= max");
  }
  if (patient_motion.amplitude < 0.0 || patient_motion.frequency_hz < 0.0 ||
      patient_motion.walk_fraction < 0.0 || patient_motion.walk_fraction > 1.0) {
    throw Error("phantom: bad patient motion config");
  }
}

TissueModel::TissueModel(const PhantomConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double rd = disc_radius();
  for (int i = 0; i < cfg_.bump_count; ++i) {
    const double r = rd * std::sqrt(unit(rng));
    const double a = 2.0 * M_PI * unit(rng);
    GaussianBump b;
    b.center = cfg_.apex.head<2>() + r * Vec2(std::cos(a), std::sin(a));
    b.height = cfg_.bump_amplitude * (2.0 * unit(rng) - 1.0);
    b.width = cfg_.bump_width_min + (cfg_.bump_width_max - cfg_.bump_width_min) * unit(rng);
    bumps_.push_back(b);
  }

  // Registration is allowed anywhere inside the disc less one probe radius.
  const double rr = rd - 0.5e-3;
  for (int i = 0; i < 32; ++i) {
    const double a = 2.0 * M_PI * i / 32.0;
    region_.push_back(cfg_.apex.head<2>() + rr * Vec2(std::cos(a), std::sin(a)));
  }

  std::mt19937_64 walk_rng(cfg_.patient_motion.seed);
  std::normal_distribution<double> step(0.0, 0.3);
  walk_.resize(kWalkKnots);
  double w = 0.0;
  for (double& k : walk_) {
    k = w;
    w += step(walk_rng);
    // Reflect into [-1, 1].
    while (w > 1.0 || w < -1.0) w = w > 1.0 ? 2.0 - w : -2.0 - w;
  }
}

bool TissueModel::in_disc(const Vec2& xy) const {
  return (xy - cfg_.apex.head<2>()).norm() <= disc_radius();
}

void TissueModel::require_in_disc(const Vec2& xy) const {
  if (!xy.allFinite() || !in_disc(xy)) {
    throw Error("phantom: lateral position outside the scannable disc");
  }
}

double TissueModel::base_height(const Vec2& xy) const {
  if (cfg_.surface == SurfaceKind::plane) return cfg_.apex.z();
  const double R = inner_radius();
  const double r2 = std::min((xy - cfg_.apex.head<2>()).squaredNorm(), R * R);
  return cfg_.apex.z() + R - std::sqrt(R * R - r2);
}

double TissueModel::bump_height(const Vec2& xy) const {
  double h = 0.0;
  for (const auto& b : bumps_) {
    h += b.height * std::exp(-0.5 * (xy - b.center).squaredNorm() / (b.width * b.width));
  }
  return h;
}

double TissueModel::patient_offset(double t) const {
  const auto& pm = cfg_.patient_motion;
  if (!pm.enabled || pm.amplitude == 0.0) return 0.0;
  const double sine = std::sin(2.0 * M_PI * pm.frequency_hz * t);
  const double tc = std::clamp(t, 0.0, static_cast<double>(kWalkKnots - 1));
  const int i = std::min(static_cast<int>(tc), kWalkKnots - 2);
  const double f = tc - i;
  const double walk = (1.0 - f) * walk_[i] + f * walk_[i + 1];
  return pm.amplitude * ((1.0 - pm.walk_fraction) * sine + pm.walk_fraction * walk);
}

double TissueModel::height_unchecked(const Vec2& xy, double t) const {
  return base_height(xy) + bump_height(xy) + patient_offset(t);
}

Vec3 TissueModel::normal_unchecked(const Vec2& xy, double t) const {
  const double h = kNormalStep;
  const double dx = (height_unchecked(xy + Vec2(h, 0.0), t) - height_unchecked(xy - Vec2(h, 0.0), t)) / (2 * h);
  const double dy = (height_unchecked(xy + Vec2(0.0, h), t) - height_unchecked(xy - Vec2(0.0, h), t)) / (2 * h);
  return Vec3(-dx, -dy, 1.0).normalized();
}

double TissueModel::surface_height(const Vec2& xy, double t) const {
  require_in_disc(xy);
  return height_unchecked(xy, t);
}

Vec3 TissueModel::surface_normal(const Vec2& xy, double t) const {
  require_in_disc(xy);
  return normal_unchecked(xy, t);
}

double TissueModel::probe_distance(const Vec3& tip, double t) const {
  require_in_disc(tip.head<2>());
  // Fixed-point iteration for the foot point whose normal passes through the
  // tip; converges quickly for the gentle slopes inside the opening.
  Vec2 foot = tip.head<2>();
  double d = 0.0;
  for (int it = 0; it < 50; ++it) {
    const Vec3 p(foot.x(), foot.y(), height_unchecked(foot, t));
    const Vec3 n = normal_unchecked(foot, t);
    d = (tip - p).dot(n);
    const Vec2 next = (tip - d * n).head<2>();
    if ((next - foot).norm() < 1e-12) {
      foot = next;
      break;
    }
    foot = next;
  }
  const Vec3 p(foot.x(), foot.y(), height_unchecked(foot, t));
  const double dist = (tip - p).norm();
  return d >= 0.0 ? dist : -dist;
}

}  // namespace retsim
