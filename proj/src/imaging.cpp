#include "retsim/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <tuple>

#include "retsim/error.hpp"

namespace retsim {

namespace {

int clamp_index(int i, int n) { return std::clamp(i, 0, n - 1); }

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[i + radius] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable Gaussian on a flat row-major buffer with replicated borders.
std::vector<double> gaussian_blur(const std::vector<double>& src, int rows, int cols,
                                  double sigma) {
  if (sigma < 1e-3) return src;
  const auto k = gaussian_kernel(sigma);
  const int radius = static_cast<int>(k.size() / 2);
  std::vector<double> tmp(src.size());
  for (int r = 0; r < rows; ++r) {
    const double* row = &src[static_cast<std::size_t>(r) * cols];
    for (int c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * row[clamp_index(c + i, cols)];
      tmp[static_cast<std::size_t>(r) * cols + c] = acc;
    }
  }
  std::vector<double> out(src.size());
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        acc += k[i + radius] * tmp[static_cast<std::size_t>(clamp_index(r + i, rows)) * cols + c];
      }
      out[static_cast<std::size_t>(r) * cols + c] = acc;
    }
  }
  return out;
}

// Bilinear upsampling of a coarse lattice; lattice node (i, j) sits at fine
// pixel (i * factor, j * factor).
std::vector<double> upsample(const std::vector<double>& coarse, int crows, int ccols, int factor,
                             int rows, int cols) {
  std::vector<double> out(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    const double fr = static_cast<double>(r) / factor;
    const int r0 = std::min(static_cast<int>(fr), crows - 2);
    const double wr = fr - r0;
    for (int c = 0; c < cols; ++c) {
      const double fc = static_cast<double>(c) / factor;
      const int c0 = std::min(static_cast<int>(fc), ccols - 2);
      const double wc = fc - c0;
      const double a = coarse[static_cast<std::size_t>(r0) * ccols + c0];
      const double b = coarse[static_cast<std::size_t>(r0) * ccols + c0 + 1];
      const double d = coarse[static_cast<std::size_t>(r0 + 1) * ccols + c0];
      const double e = coarse[static_cast<std::size_t>(r0 + 1) * ccols + c0 + 1];
      out[static_cast<std::size_t>(r) * cols + c] =
          (1 - wr) * ((1 - wc) * a + wc * b) + wr * ((1 - wc) * d + wc * e);
    }
  }
  return out;
}

void normalize_std(std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / static_cast<double>(v.size()));
  for (double& x : v) x = (x - mean) / sd;
}

std::vector<double> noise_layer(std::mt19937_64& rng, int rows, int cols, int factor,
                                double sigma) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const int crows = rows / factor + 2;
  const int ccols = cols / factor + 2;
  std::vector<double> coarse(static_cast<std::size_t>(crows) * ccols);
  for (double& x : coarse) x = normal(rng);
  coarse = gaussian_blur(coarse, crows, ccols, sigma);
  std::vector<double> out =
      factor == 1 ? coarse : upsample(coarse, crows, ccols, factor, rows, cols);
  if (factor == 1) {
    // Drop the lattice padding.
    std::vector<double> trimmed(static_cast<std::size_t>(rows) * cols);
    for (int r = 0; r < rows; ++r) {
      std::copy_n(&out[static_cast<std::size_t>(r) * ccols], cols,
                  &trimmed[static_cast<std::size_t>(r) * cols]);
    }
    out = std::move(trimmed);
  }
  normalize_std(out);
  return out;
}

}  // namespace

void validate_frame(const PcleFrame& frame) {
  const auto& p = frame.pixels;
  if (p.rows() < kMinFrameSize || p.cols() < kMinFrameSize) {
    throw Error("frame must be at least 16x16");
  }
  if (!p.allFinite() || p.minCoeff() < 0.0 || p.maxCoeff() > 1.0) {
    throw Error("frame pixel values must lie in [0, 1]");
  }
}

void FocusProfile::validate() const {
  if (!(focus_band > 0.0 && focus_band < out_of_range_distance)) {
    throw Error("focus profile: need 0 < focus_band < out_of_range_distance");
  }
  if (!(floor_cr < peak_cr && peak_cr <= 1.0)) {
    throw Error("focus profile: need floor_cr < peak_cr <= 1");
  }
  if (!(optimal_distance > 0.0 && optimal_distance < out_of_range_distance)) {
    throw Error("focus profile: optimal distance must be positive and in range");
  }
}

Image box_filter_x(const Image& img, int length) {
  const int h = length / 2;
  const int rows = static_cast<int>(img.rows());
  const int cols = static_cast<int>(img.cols());
  Image out(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (int k = -h; k <= h; ++k) acc += img(r, clamp_index(c + k, cols));
      out(r, c) = acc / length;
    }
  }
  return out;
}

Image box_filter_y(const Image& img, int length) {
  const int h = length / 2;
  const int rows = static_cast<int>(img.rows());
  const int cols = static_cast<int>(img.cols());
  Image out(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (int k = -h; k <= h; ++k) acc += img(clamp_index(r + k, rows), c);
      out(r, c) = acc / length;
    }
  }
  return out;
}

Image lowpass(const Image& img, int length) { return box_filter_y(box_filter_x(img, length), length); }

double cr_score(const Image& img, int filter_length) {
  if (filter_length < 1 || filter_length % 2 == 0) {
    throw Error("cr_score: filter length must be odd and positive");
  }
  if (img.rows() < filter_length || img.cols() < filter_length) {
    throw Error("cr_score: image smaller than filter support");
  }
  const Image bx = box_filter_x(img, filter_length);
  const Image by = box_filter_y(img, filter_length);
  const Eigen::Index rows = img.rows();
  const Eigen::Index cols = img.cols();

  double d_ix = 0.0, d_ibx = 0.0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 1; c < cols; ++c) {
      const double di = std::abs(img(r, c) - img(r, c - 1));
      const double db = std::abs(bx(r, c) - bx(r, c - 1));
      d_ix += di;
      d_ibx += std::max(0.0, di - db);
    }
  }
  double d_iy = 0.0, d_iby = 0.0;
  for (Eigen::Index r = 1; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      const double di = std::abs(img(r, c) - img(r - 1, c));
      const double db = std::abs(by(r, c) - by(r - 1, c));
      d_iy += di;
      d_iby += std::max(0.0, di - db);
    }
  }

  if (d_ix == 0.0 && d_iy == 0.0) return 0.0;
  double blur = 0.0;
  if (d_ix > 0.0) blur = std::max(blur, (d_ix - d_ibx) / d_ix);
  if (d_iy > 0.0) blur = std::max(blur, (d_iy - d_iby) / d_iy);
  return std::clamp(1.0 - blur, 0.0, 1.0);
}

double cr_score(const PcleFrame& frame, int filter_length) {
  validate_frame(frame);
  return cr_score(frame.pixels, filter_length);
}

double intensity(const Image& img) { return img.mean(); }
double intensity(const PcleFrame& frame) { return intensity(frame.pixels); }

void write_pgm(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << "P5\n" << img.cols() << " " << img.rows() << "\n255\n";
  for (Eigen::Index r = 0; r < img.rows(); ++r) {
    for (Eigen::Index c = 0; c < img.cols(); ++c) {
      const double v = std::clamp(img(r, c), 0.0, 1.0);
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  }
  if (!out) throw Error("failed writing " + path.string());
}

Image read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  auto next_token = [&in]() {
    std::string tok;
    while (in) {
      const int ch = in.peek();
      if (ch == '#') {
        std::string skip;
        std::getline(in, skip);
      } else if (std::isspace(ch)) {
        in.get();
      } else {
        break;
      }
    }
    in >> tok;
    return tok;
  };
  if (next_token() != "P5") throw Error("not a binary PGM (P5): " + path.string());
  const int cols = std::stoi(next_token());
  const int rows = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (cols <= 0 || rows <= 0 || maxval <= 0 || maxval > 255) {
    throw Error("unsupported PGM header in " + path.string());
  }
  in.get();  // single whitespace before raster
  Image img(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const int ch = in.get();
      if (ch == EOF) throw Error("truncated PGM raster in " + path.string());
      img(r, c) = static_cast<double>(ch) / maxval;
    }
  }
  return img;
}

Image downscale(const Image& img, int rows, int cols) {
  if (rows <= 0 || cols <= 0 || img.rows() % rows != 0 || img.cols() % cols != 0) {
    throw Error("downscale: target size must divide the source size");
  }
  const int fr = static_cast<int>(img.rows() / rows);
  const int fc = static_cast<int>(img.cols() / cols);
  Image out(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      out(r, c) = img.block(r * fr, c * fc, fr, fc).mean();
    }
  }
  return out;
}

// --- Texture ---------------------------------------------------------------

std::shared_ptr<const Texture> Texture::generate(const TextureConfig& cfg) {
  if (!(cfg.pixel_pitch > 0.0) || !(cfg.extent > 64 * cfg.pixel_pitch)) {
    throw Error("texture: invalid pitch/extent");
  }
  auto tex = std::shared_ptr<Texture>(new Texture());
  tex->cfg_ = cfg;
  tex->rows_ = tex->cols_ = static_cast<int>(std::ceil(cfg.extent / cfg.pixel_pitch));
  const int n = tex->rows_;

  // Three octaves of smoothed noise: cell-scale detail (~1 px), mid-scale
  // structure (~4 px) and slow reflectance variation (~16 px).
  std::mt19937_64 rng(cfg.seed);
  const auto fine = noise_layer(rng, n, n, 1, 1.0);
  const auto mid = noise_layer(rng, n, n, 2, 2.0);
  const auto coarse = noise_layer(rng, n, n, 8, 2.0);
  std::vector<double> sum(fine.size());
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = fine[i] + 0.6 * mid[i] + 0.5 * coarse[i];
  normalize_std(sum);

  tex->data_.resize(sum.size());
  for (std::size_t i = 0; i < sum.size(); ++i) {
    tex->data_[i] = static_cast<float>(std::clamp(0.5 + 0.15 * sum[i], 0.0, 1.0));
  }
  return tex;
}

std::shared_ptr<const Texture> Texture::shared(const TextureConfig& cfg) {
  using Key = std::tuple<double, double, double, double, std::uint64_t>;
  static std::mutex mu;
  static std::map<Key, std::shared_ptr<const Texture>> cache;
  const Key key{cfg.pixel_pitch, cfg.extent, cfg.origin.x(), cfg.origin.y(), cfg.seed};
  std::lock_guard lock(mu);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  auto tex = generate(cfg);
  cache.emplace(key, tex);
  return tex;
}

std::pair<int, int> Texture::pixel_of(const Vec2& lateral) const {
  const Vec2 rel = (lateral - cfg_.origin) / cfg_.pixel_pitch;
  const int col = static_cast<int>(std::lround(rel.x())) + cols_ / 2;
  const int row = static_cast<int>(std::lround(rel.y())) + rows_ / 2;
  return {row, col};
}

bool Texture::contains(const Vec2& lateral, double margin) const {
  const double half = 0.5 * cols_ * cfg_.pixel_pitch - margin;
  const Vec2 rel = lateral - cfg_.origin;
  return std::abs(rel.x()) <= half && std::abs(rel.y()) <= half;
}

// --- Renderer ----------------------------------------------------------------

FrameRenderer::FrameRenderer(std::shared_ptr<const Texture> texture, FocusProfile profile,
                             RendererConfig cfg)
    : texture_(std::move(texture)), profile_(profile), cfg_(cfg) {
  if (!texture_) throw Error("renderer: missing texture");
  profile_.validate();
  if (cfg_.frame_size < kMinFrameSize) throw Error("renderer: frame size below 16");
  if (cfg_.noise_spacing < 1 || cfg_.noise_std < 0.0) throw Error("renderer: bad noise config");
  if (!(cfg_.band_edge_score < profile_.peak_cr)) {
    throw Error("renderer: band edge score must be below the peak score");
  }
  calibrate();
}

Image FrameRenderer::render_sigma(const Vec2& lateral, double sigma, double gain,
                                  std::optional<std::uint64_t> noise_seed) const {
  const int n = cfg_.frame_size;
  const double half_fov = 0.5 * n * texture_->pixel_pitch();
  if (!texture_->contains(lateral, half_fov)) {
    throw Error("render: lateral position outside the tissue texture");
  }
  const int pad = sigma < 1e-3 ? 0 : std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  const int w = n + 2 * pad;
  const auto [crow, ccol] = texture_->pixel_of(lateral);
  const int r0 = crow - n / 2 - pad;
  const int c0 = ccol - n / 2 - pad;

  std::vector<double> window(static_cast<std::size_t>(w) * w);
  for (int r = 0; r < w; ++r) {
    const int tr = clamp_index(r0 + r, texture_->rows());
    for (int c = 0; c < w; ++c) {
      window[static_cast<std::size_t>(r) * w + c] = texture_->at(tr, clamp_index(c0 + c, texture_->cols()));
    }
  }
  // The window is padded by the kernel radius, so both passes only produce
  // the n x n interior and never touch a border.
  Image img(n, n);
  if (pad == 0) {
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < n; ++c) img(r, c) = gain * window[static_cast<std::size_t>(r) * w + c];
    }
  } else {
    const auto k = gaussian_kernel(sigma);
    const int taps = static_cast<int>(k.size());
    std::vector<double> tmp(static_cast<std::size_t>(w) * n);
    for (int r = 0; r < w; ++r) {
      const double* src = &window[static_cast<std::size_t>(r) * w];
      double* dst = &tmp[static_cast<std::size_t>(r) * n];
      for (int c = 0; c < n; ++c) {
        double acc = 0.0;
        for (int i = 0; i < taps; ++i) acc += k[i] * src[c + i];
        dst[c] = acc;
      }
    }
    std::vector<double> acc(n);
    for (int r = 0; r < n; ++r) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int i = 0; i < taps; ++i) {
        const double* src = &tmp[static_cast<std::size_t>(r + i) * n];
        const double ki = k[i];
        for (int c = 0; c < n; ++c) acc[c] += ki * src[c];
      }
      for (int c = 0; c < n; ++c) img(r, c) = gain * acc[c];
    }
  }

  if (noise_seed && cfg_.noise_std > 0.0) {
    std::mt19937_64 rng(*noise_seed);
    std::normal_distribution<double> normal(0.0, cfg_.noise_std);
    const int s = cfg_.noise_spacing;
    const int cn = n / s + 2;
    std::vector<double> lattice(static_cast<std::size_t>(cn) * cn);
    for (double& x : lattice) x = normal(rng);
    const auto field = upsample(lattice, cn, cn, s, n, n);
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < n; ++c) img(r, c) += field[static_cast<std::size_t>(r) * n + c];
    }
  }
  return img;
}

void FrameRenderer::calibrate() {
  // Reference windows on a ring around the texture center.
  std::vector<Vec2> refs;
  const double ring = std::min(1e-3, 0.25 * texture_->cols() * texture_->pixel_pitch());
  for (int i = 0; i < 8; ++i) {
    const double a = 2.0 * M_PI * i / 8.0;
    refs.push_back(texture_->config().origin + ring * Vec2(std::cos(a), std::sin(a)));
  }
  auto mean_score = [&](double sigma) {
    double acc = 0.0;
    for (std::size_t i = 0; i < refs.size(); ++i) {
      Image img = render_sigma(refs[i], sigma, 1.0, 1000 + i);
      img = img.min(1.0).max(0.0);
      acc += cr_score(img, cfg_.cr_filter_length);
    }
    return acc / static_cast<double>(refs.size());
  };
  // Score falls monotonically with sigma; bisect for the target crossings.
  auto solve = [&](double target) {
    double lo = 0.2, hi = 40.0;
    if (mean_score(lo) < target) {
      throw Error("renderer calibration: texture too smooth for the requested peak score");
    }
    for (int it = 0; it < 40; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (mean_score(mid) > target) lo = mid; else hi = mid;
    }
    return 0.5 * (lo + hi);
  };
  sigma_min_ = solve(profile_.peak_cr);
  const double sigma_edge = solve(cfg_.band_edge_score);
  slope_ = (sigma_edge - sigma_min_) / (0.5 * profile_.focus_band);
}

double FrameRenderer::sigma_px(double distance) const {
  const double max_defocus = profile_.out_of_range_distance - profile_.optimal_distance;
  const double defocus = std::min(std::abs(distance - profile_.optimal_distance), max_defocus);
  return sigma_min_ + slope_ * defocus;
}

double FrameRenderer::gain(double distance) const {
  const double d_opt = profile_.optimal_distance;
  double u = 0.0;
  if (distance >= d_opt) {
    u = std::min(1.0, (distance - d_opt) / (profile_.out_of_range_distance - d_opt));
  } else {
    u = std::max(-1.0, (distance - d_opt) / d_opt);
  }
  return 1.0 - cfg_.gain_span * u;
}

PcleFrame FrameRenderer::render(const Vec2& lateral, double distance, std::uint64_t noise_seed,
                                double timestamp) const {
  if (!(distance >= 0.0)) throw Error("render: distance must be non-negative");
  Image img = render_sigma(lateral, sigma_px(distance), gain(distance), noise_seed);
  img = img.min(1.0).max(0.0);
  return PcleFrame{std::move(img), timestamp, distance};
}

std::vector<FocusSample> focus_sweep(const FrameRenderer& renderer, const Vec2& lateral,
                                     const std::vector<double>& distances,
                                     std::uint64_t noise_seed) {
  if (distances.empty()) throw Error("focus_sweep: empty distance list");
  if (!std::is_sorted(distances.begin(), distances.end())) {
    throw Error("focus_sweep: distances must be sorted ascending");
  }
  std::vector<FocusSample> out;
  out.reserve(distances.size());
  for (std::size_t i = 0; i < distances.size(); ++i) {
    const PcleFrame frame = renderer.render(lateral, distances[i], noise_seed + i);
    out.push_back({distances[i], cr_score(frame.pixels, renderer.config().cr_filter_length),
                   intensity(frame.pixels)});
  }
  return out;
}

PcleFrame render_frame(std::shared_ptr<const Texture> texture, const Vec2& lateral,
                       double distance, const FocusProfile& profile, std::uint64_t noise_seed) {
  static std::mutex mu;
  static std::map<std::tuple<const Texture*, double, double, double, double, double>,
                  std::shared_ptr<const FrameRenderer>>
      cache;
  std::shared_ptr<const FrameRenderer> renderer;
  {
    std::lock_guard lock(mu);
    const auto key = std::make_tuple(texture.get(), profile.optimal_distance, profile.focus_band,
                                     profile.out_of_range_distance, profile.peak_cr,
                                     profile.floor_cr);
    auto it = cache.find(key);
    if (it == cache.end()) {
      it = cache.emplace(key, std::make_shared<FrameRenderer>(texture, profile)).first;
    }
    renderer = it->second;
  }
  return renderer->render(lateral, distance, noise_seed);
}

}  // namespace retsim
