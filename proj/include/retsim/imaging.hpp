#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "retsim/geometry.hpp"

namespace retsim {

// Grayscale image, row-major, pixel (row, col); x runs along columns.
using Image = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kMinFrameSize = 16;

struct PcleFrame {
  Image pixels;
  double timestamp = 0.0;
  // Ground-truth render distance; absent for external images.
  std::optional<double> truth_distance;
};

// Throws Error unless the frame is at least 16x16 with all values in [0, 1].
void validate_frame(const PcleFrame& frame);

// Shape of the probe's focus response.
struct FocusProfile {
  double optimal_distance = 690e-6;
  double focus_band = 200e-6;  // full width of the in-focus region
  double out_of_range_distance = 1.8e-3;
  double peak_cr = 0.61;
  double floor_cr = 0.05;

  void validate() const;
};

// Horizontal (filter along x) and vertical averaging filters with replicated
// borders.
Image box_filter_x(const Image& img, int length);
Image box_filter_y(const Image& img, int length);

// Separable 2-D averaging filter (x pass then y pass).
Image lowpass(const Image& img, int length = 9);

// Crete-Roffet no-reference blur metric, in [0, 1]; higher is sharper.
//
// Backward differences along each axis are compared before and after an
// averaging filter applied along that same axis. Sums skip the first
// row/column where the backward difference is undefined. An axis with no
// variation carries no blur information and is ignored; a constant image
// scores 0. Throws Error when the image is smaller than the filter.
double cr_score(const Image& img, int filter_length = 9);
double cr_score(const PcleFrame& frame, int filter_length = 9);

// Mean pixel value.
double intensity(const Image& img);
double intensity(const PcleFrame& frame);

// Binary 8-bit PGM (P5) import/export. Values are scaled by 255 / maxval.
void write_pgm(const std::filesystem::path& path, const Image& img);
Image read_pgm(const std::filesystem::path& path);

// Downscale by integer-factor block averaging (used for telemetry thumbnails).
Image downscale(const Image& img, int rows, int cols);

struct TextureConfig {
  double pixel_pitch = 4e-6;  // meters per texture pixel (= frame pixel)
  double extent = 11e-3;      // side of the square texture, centered on origin
  Vec2 origin = Vec2::Zero(); // lateral position of the texture center
  std::uint64_t seed = 7;
};

// Ground-truth tissue reflectance over a square lateral patch. Immutable once
// generated; share it between renderers.
class Texture {
 public:
  static std::shared_ptr<const Texture> generate(const TextureConfig& cfg);
  // Cached by configuration; repeated calls return the same instance.
  static std::shared_ptr<const Texture> shared(const TextureConfig& cfg);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  double pixel_pitch() const { return cfg_.pixel_pitch; }
  const TextureConfig& config() const { return cfg_; }

  float at(int row, int col) const { return data_[static_cast<std::size_t>(row) * cols_ + col]; }
  // Pixel indices containing a lateral position (nearest pixel).
  std::pair<int, int> pixel_of(const Vec2& lateral) const;
  bool contains(const Vec2& lateral, double margin = 0.0) const;

 private:
  TextureConfig cfg_;
  int rows_ = 0;
  int cols_ = 0;
  std::vector<float> data_;
};

struct RendererConfig {
  int frame_size = 128;
  int cr_filter_length = 9;
  // Score at which the rendered curve crosses out of the focus band.
  double band_edge_score = 0.47;
  // Additive noise: Gaussian lattice values bilinearly interpolated.
  double noise_std = 0.006;
  int noise_spacing = 16;
  // Brightness gain varies linearly with defocus, from 1 + span (touching)
  // to 1 - span (at and beyond the out-of-range distance).
  double gain_span = 0.25;
};

// Synthetic pCLE camera. Blur grows linearly with defocus,
// sigma = sigma_min + slope * |d - d_opt|, clamped at the out-of-range
// distance. sigma_min and slope are calibrated at construction so that the
// mean score over reference windows is peak_cr at d_opt and band_edge_score
// at d_opt +- focus_band / 2.
class FrameRenderer {
 public:
  FrameRenderer(std::shared_ptr<const Texture> texture, FocusProfile profile,
                RendererConfig cfg = {});

  PcleFrame render(const Vec2& lateral, double distance, std::uint64_t noise_seed,
                   double timestamp = 0.0) const;

  double sigma_px(double distance) const;
  double gain(double distance) const;
  double sigma_min_px() const { return sigma_min_; }
  double sigma_slope_px_per_m() const { return slope_; }

  const FocusProfile& profile() const { return profile_; }
  const RendererConfig& config() const { return cfg_; }
  const Texture& texture() const { return *texture_; }

  // Unclamped, noise-free render at a given blur; used by calibration.
  Image render_sigma(const Vec2& lateral, double sigma, double gain,
                     std::optional<std::uint64_t> noise_seed) const;

 private:
  void calibrate();

  std::shared_ptr<const Texture> texture_;
  FocusProfile profile_;
  RendererConfig cfg_;
  double sigma_min_ = 1.0;
  double slope_ = 0.0;
};

struct FocusSample {
  double distance;
  double cr;
  double intensity;
};

// Renders and scores each distance at a fixed lateral position. Distances must
// be non-empty and sorted ascending.
std::vector<FocusSample> focus_sweep(const FrameRenderer& renderer, const Vec2& lateral,
                                     const std::vector<double>& distances,
                                     std::uint64_t noise_seed = 1);

// Convenience wrapper over a cached renderer.
PcleFrame render_frame(std::shared_ptr<const Texture> texture, const Vec2& lateral,
                       double distance, const FocusProfile& profile, std::uint64_t noise_seed);

}  // namespace retsim
