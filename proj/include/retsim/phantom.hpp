#pragma once

#include <cstdint>
#include <vector>

#include "retsim/geometry.hpp"

namespace retsim {

enum class SurfaceKind { sphere, plane };

struct GaussianBump {
  Vec2 center;
  double height;  // signed peak height, meters
  double width;   // standard deviation, meters
};

// Vertical disturbance: a sinusoid plus a bounded seeded random walk.
struct PatientMotionConfig {
  bool enabled = false;
  double amplitude = 100e-6;   // bound on |offset|
  double frequency_hz = 0.2;
  double walk_fraction = 0.3;  // share of the amplitude given to the random walk
  std::uint64_t seed = 11;
};

struct PhantomConfig {
  SurfaceKind surface = SurfaceKind::sphere;
  // Lowest point of the inner retina surface, in the robot base frame.
  Vec3 apex = Vec3(0.0, 0.0, -0.032);
  double outer_diameter = 30e-3;
  double wall_thickness = 1e-3;
  double opening_diameter = 10e-3;
  int bump_count = 20;
  double bump_amplitude = 50e-6;
  double bump_width_min = 0.5e-3;
  double bump_width_max = 2e-3;
  std::uint64_t seed = 3;
  PatientMotionConfig patient_motion;
  // Bound checked against bump_amplitude (half the probe's focus band).
  double focus_band = 200e-6;

  void validate() const;
};

// Retina surface inside the eyeball phantom: z = S(x, y) + bumps + offset(t).
class TissueModel {
 public:
  explicit TissueModel(const PhantomConfig& cfg);

  const PhantomConfig& config() const { return cfg_; }
  const std::vector<GaussianBump>& bumps() const { return bumps_; }
  const std::vector<Vec2>& registration_region() const { return region_; }

  double inner_radius() const { return 0.5 * cfg_.outer_diameter - cfg_.wall_thickness; }
  // Scannable lateral disc: the opening footprint around the apex.
  double disc_radius() const { return 0.5 * cfg_.opening_diameter; }
  bool in_disc(const Vec2& xy) const;

  // Smooth base surface without bumps or motion (sphere cap or plane).
  double base_height(const Vec2& xy) const;
  double bump_height(const Vec2& xy) const;
  double patient_offset(double t) const;

  // Throw Error outside the scannable disc.
  double surface_height(const Vec2& xy, double t) const;
  Vec3 surface_normal(const Vec2& xy, double t) const;
  // Signed distance from the tip to the surface along the local normal;
  // negative means the tip is below the surface (contact).
  double probe_distance(const Vec3& tip, double t) const;

 private:
  double height_unchecked(const Vec2& xy, double t) const;
  Vec3 normal_unchecked(const Vec2& xy, double t) const;
  void require_in_disc(const Vec2& xy) const;

  PhantomConfig cfg_;
  std::vector<GaussianBump> bumps_;
  std::vector<Vec2> region_;
  std::vector<double> walk_;  // random-walk knots at 1 s spacing, in [-1, 1]
};

}  // namespace retsim
