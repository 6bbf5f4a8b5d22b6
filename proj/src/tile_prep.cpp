#include "milreg/tile_prep.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <sstream>

#include "milreg/common.hpp"
#include "milreg/kernels.hpp"

namespace milreg {

namespace {

constexpr double kLumaR = 0.299, kLumaG = 0.587, kLumaB = 0.114;
constexpr std::size_t kPatchPixels = std::size_t{kTilePx} * kTilePx;

std::vector<double> luminance(const ImageU8& img) {
  std::vector<double> lum(static_cast<std::size_t>(img.width) * img.height);
  for (std::size_t i = 0; i < lum.size(); ++i) {
    const std::uint8_t* p = img.pixels.data() + 3 * i;
    lum[i] = kLumaR * p[0] + kLumaG * p[1] + kLumaB * p[2];
  }
  return lum;
}

}  // namespace

void Patch::validate() const {
  if (pixels.width != kTilePx || pixels.height != kTilePx ||
      pixels.pixels.size() != kPatchPixels * 3)
    throw std::invalid_argument("patch must be 224 x 224 x 3");
  if (!(source_mpp > 0.0)) throw std::invalid_argument("patch needs a positive MPP");
}

TileGrid build_tile_grid(int raster_w, int raster_h, double source_mpp) {
  if (!(source_mpp > 0.0)) throw std::invalid_argument("source_mpp must be positive");
  TileGrid grid;
  grid.source_extent_px = static_cast<int>(std::llround(kTileEdgeUm / source_mpp));
  if (grid.source_extent_px < 1) grid.source_extent_px = 1;
  const int nx = raster_w / grid.source_extent_px;
  const int ny = raster_h / grid.source_extent_px;
  for (int y = 0; y < ny; ++y)
    for (int x = 0; x < nx; ++x) grid.positions.emplace_back(x, y);
  return grid;
}

Patch extract_tile(const ImageU8& raster, const TileGrid& grid, std::pair<int, int> pos,
                   double source_mpp) {
  const int extent = grid.source_extent_px;
  const int x0 = pos.first * extent, y0 = pos.second * extent;
  if (x0 < 0 || y0 < 0 || x0 + extent > raster.width || y0 + extent > raster.height)
    throw std::invalid_argument("tile position outside the raster");

  Patch patch;
  patch.grid_pos = pos;
  patch.source_mpp = source_mpp;
  patch.pixels.width = kTilePx;
  patch.pixels.height = kTilePx;
  patch.pixels.pixels.resize(kPatchPixels * 3);

  const double scale = static_cast<double>(extent) / kTilePx;
  for (int oy = 0; oy < kTilePx; ++oy) {
    for (int ox = 0; ox < kTilePx; ++ox) {
      const double sx = x0 + (ox + 0.5) * scale - 0.5;
      const double sy = y0 + (oy + 0.5) * scale - 0.5;
      const int ix = static_cast<int>(std::floor(sx));
      const int iy = static_cast<int>(std::floor(sy));
      const double fx = sx - ix, fy = sy - iy;
      auto clampx = [&](int v) { return std::clamp(v, 0, raster.width - 1); };
      auto clampy = [&](int v) { return std::clamp(v, 0, raster.height - 1); };
      const std::uint8_t* p00 = raster.at(clampx(ix), clampy(iy));
      const std::uint8_t* p10 = raster.at(clampx(ix + 1), clampy(iy));
      const std::uint8_t* p01 = raster.at(clampx(ix), clampy(iy + 1));
      const std::uint8_t* p11 = raster.at(clampx(ix + 1), clampy(iy + 1));
      std::uint8_t* out = patch.pixels.at(ox, oy);
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - fx) * (1 - fy) * p00[c] + fx * (1 - fy) * p10[c] +
                         (1 - fx) * fy * p01[c] + fx * fy * p11[c];
        out[c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0l, 255l));
      }
    }
  }
  return patch;
}

// ---------------------------------------------------------------------------
// Edge-segment rejection
// ---------------------------------------------------------------------------

int count_edge_segments(const Patch& p, const CannyConfig& cfg) {
  p.validate();
  const int w = kTilePx, h = kTilePx;
  std::vector<double> gray = luminance(p.pixels);
  std::vector<double> blurred;
  kernels::gaussian_blur(gray, w, h, cfg.sigma, blurred);
  std::vector<double> gx, gy;
  kernels::sobel(blurred, w, h, gx, gy);

  // ridge thinning compares raw magnitudes; the hysteresis thresholds act
  // on the 8-bit-clamped magnitude
  std::vector<double> raw(gray.size()), mag(gray.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    raw[i] = std::hypot(gx[i], gy[i]);
    mag[i] = std::min(255.0, raw[i]);
  }

  auto at = [&](int x, int y) {
    x = std::clamp(x, 0, w - 1);
    y = std::clamp(y, 0, h - 1);
    return raw[y * w + x];
  };

  // non-maximum suppression along the quantized gradient direction
  std::vector<std::uint8_t> nms(gray.size(), 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      if (mag[i] < cfg.low) continue;
      double angle = std::atan2(gy[i], gx[i]) * 180.0 / M_PI;
      if (angle < 0) angle += 180.0;
      double n1, n2;
      if (angle < 22.5 || angle >= 157.5) {
        n1 = at(x - 1, y);
        n2 = at(x + 1, y);
      } else if (angle < 67.5) {
        n1 = at(x + 1, y - 1);
        n2 = at(x - 1, y + 1);
      } else if (angle < 112.5) {
        n1 = at(x, y - 1);
        n2 = at(x, y + 1);
      } else {
        n1 = at(x - 1, y - 1);
        n2 = at(x + 1, y + 1);
      }
      if (raw[i] >= n1 && raw[i] >= n2) nms[i] = mag[i] >= cfg.high ? 2 : 1;  // strong / weak
    }
  }

  // hysteresis: weak pixels survive only when 8-connected to a strong one
  std::vector<std::uint8_t> edge(gray.size(), 0);
  std::deque<std::size_t> queue;
  for (std::size_t i = 0; i < nms.size(); ++i)
    if (nms[i] == 2) {
      edge[i] = 1;
      queue.push_back(i);
    }
  while (!queue.empty()) {
    const std::size_t i = queue.front();
    queue.pop_front();
    const int x = static_cast<int>(i % w), y = static_cast<int>(i / w);
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int nx2 = x + dx, ny2 = y + dy;
        if (nx2 < 0 || ny2 < 0 || nx2 >= w || ny2 >= h) continue;
        const std::size_t j = ny2 * w + nx2;
        if (nms[j] >= 1 && !edge[j]) {
          edge[j] = 1;
          queue.push_back(j);
        }
      }
  }

  // 8-connected components of at least min_segment_len pixels
  int segments = 0;
  std::vector<std::uint8_t> seen(gray.size(), 0);
  for (std::size_t start = 0; start < edge.size(); ++start) {
    if (!edge[start] || seen[start]) continue;
    int size = 0;
    queue.push_back(start);
    seen[start] = 1;
    while (!queue.empty()) {
      const std::size_t i = queue.front();
      queue.pop_front();
      ++size;
      const int x = static_cast<int>(i % w), y = static_cast<int>(i / w);
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx2 = x + dx, ny2 = y + dy;
          if (nx2 < 0 || ny2 < 0 || nx2 >= w || ny2 >= h) continue;
          const std::size_t j = ny2 * w + nx2;
          if (edge[j] && !seen[j]) {
            seen[j] = 1;
            queue.push_back(j);
          }
        }
    }
    if (size >= cfg.min_segment_len) ++segments;
  }
  return segments;
}

bool reject_patch(const Patch& p, const CannyConfig& cfg) {
  return count_edge_segments(p, cfg) <= cfg.max_segments_reject;
}

// ---------------------------------------------------------------------------
// Brightness standardization
// ---------------------------------------------------------------------------

Patch standardize_brightness(const Patch& p) {
  p.validate();
  std::vector<double> lum = luminance(p.pixels);
  std::sort(lum.begin(), lum.end());
  const double p90 = percentile_sorted(lum, 90.0);
  if (p90 <= 0.0) throw std::runtime_error("no signal: patch has zero luminance");
  const double scale = 240.0 / p90;
  // within one 8-bit level of identity: already standardized
  if (std::abs(scale - 1.0) <= 1.0 / 255.0) return p;

  Patch out = p;
  for (std::uint8_t& v : out.pixels.pixels)
    v = static_cast<std::uint8_t>(std::clamp(std::lround(v * scale), 0l, 255l));
  return out;
}

// ---------------------------------------------------------------------------
// Macenko stain estimation and normalization
// ---------------------------------------------------------------------------

void StainProfile::validate() const {
  if (stain_matrix.rows != 3 || stain_matrix.cols != 2 || max_concentrations.size() != 2)
    throw std::invalid_argument("stain profile must be 3x2 plus 2 concentrations");
  for (std::size_t c = 0; c < 2; ++c) {
    double norm = 0.0;
    for (std::size_t r = 0; r < 3; ++r) {
      const double v = stain_matrix.at(r, c);
      if (!std::isfinite(v)) throw std::invalid_argument("non-finite stain matrix entry");
      norm += v * v;
    }
    if (std::abs(std::sqrt(norm) - 1.0) > 1e-6)
      throw std::invalid_argument("stain matrix columns must be unit norm");
    if (!(max_concentrations[c] > 0.0))
      throw std::invalid_argument("max concentrations must be positive");
  }
}

StainProfile estimate_stains(const Patch& p, double alpha, double beta) {
  p.validate();
  std::vector<double> od(kPatchPixels * 3);
  kernels::od_from_rgb(p.pixels.pixels.data(), kPatchPixels, od.data());

  // tissue rows: any channel above the OD floor
  std::vector<std::size_t> kept;
  kept.reserve(kPatchPixels);
  for (std::size_t i = 0; i < kPatchPixels; ++i) {
    const double* row = od.data() + 3 * i;
    if (row[0] >= beta || row[1] >= beta || row[2] >= beta) kept.push_back(i);
  }
  if (kept.size() < kPatchPixels / 10)
    throw std::runtime_error("insufficient tissue: below 10% of pixels above the OD floor");

  // uncentered scatter of the kept OD rows
  double scatter[9] = {0};
  double mean[3] = {0};
  for (std::size_t i : kept) {
    const double* row = od.data() + 3 * i;
    for (int r = 0; r < 3; ++r) {
      mean[r] += row[r];
      for (int c = 0; c < 3; ++c) scatter[3 * r + c] += row[r] * row[c];
    }
  }
  for (int r = 0; r < 3; ++r) mean[r] /= static_cast<double>(kept.size());

  double vals[3], vecs[9];
  eigen_sym3(scatter, vals, vecs);
  // quantization noise alone gives ratios around 1e-5; real eosin presence
  // sits orders of magnitude higher
  if (!(vals[1] > 1e-4 * std::max(vals[0], 1e-30)))
    throw std::runtime_error("degenerate stain: OD scatter is rank deficient");

  double e1[3], e2[3];
  for (int r = 0; r < 3; ++r) {
    e1[r] = vecs[3 * r + 0];
    e2[r] = vecs[3 * r + 1];
  }
  // orient the dominant direction along the OD cone
  if (mean[0] * e1[0] + mean[1] * e1[1] + mean[2] * e1[2] < 0)
    for (double& v : e1) v = -v;

  std::vector<double> phi;
  phi.reserve(kept.size());
  for (std::size_t i : kept) {
    const double* row = od.data() + 3 * i;
    const double p1 = row[0] * e1[0] + row[1] * e1[1] + row[2] * e1[2];
    const double p2 = row[0] * e2[0] + row[1] * e2[1] + row[2] * e2[2];
    phi.push_back(std::atan2(p2, p1));
  }
  std::sort(phi.begin(), phi.end());
  const double phi_lo = percentile_sorted(phi, alpha);
  const double phi_hi = percentile_sorted(phi, 100.0 - alpha);

  auto direction = [&](double angle) {
    VecD v(3);
    for (int r = 0; r < 3; ++r) v[r] = std::cos(angle) * e1[r] + std::sin(angle) * e2[r];
    if (v[0] + v[1] + v[2] < 0)
      for (double& x : v) x = -x;
    return v;
  };
  VecD a = direction(phi_lo), b = direction(phi_hi);
  // hematoxylin has the larger blue OD component
  if (a[2] < b[2]) std::swap(a, b);

  StainProfile profile;
  profile.stain_matrix = MatD(3, 2);
  for (int r = 0; r < 3; ++r) {
    profile.stain_matrix.at(r, 0) = a[r];
    profile.stain_matrix.at(r, 1) = b[r];
  }

  std::vector<double> kept_od(kept.size() * 3);
  for (std::size_t i = 0; i < kept.size(); ++i)
    std::copy_n(od.data() + 3 * kept[i], 3, kept_od.data() + 3 * i);
  std::vector<double> conc(kept.size() * 2);
  kernels::nnls2_batch(kept_od.data(), kept.size(), profile.stain_matrix.a.data(), conc.data());

  VecD c1, c2;
  c1.reserve(kept.size());
  c2.reserve(kept.size());
  for (std::size_t i = 0; i < kept.size(); ++i) {
    c1.push_back(conc[2 * i]);
    c2.push_back(conc[2 * i + 1]);
  }
  std::sort(c1.begin(), c1.end());
  std::sort(c2.begin(), c2.end());
  profile.max_concentrations = {percentile_sorted(c1, 99.0), percentile_sorted(c2, 99.0)};
  if (!(profile.max_concentrations[0] > 0.0 && profile.max_concentrations[1] > 0.0))
    throw std::runtime_error("degenerate stain: a stain channel carries no concentration");
  profile.validate();
  return profile;
}

Patch normalize_patch(const Patch& p, const StainProfile& source, const StainProfile& target) {
  p.validate();
  source.validate();
  target.validate();

  std::vector<double> od(kPatchPixels * 3);
  kernels::od_from_rgb(p.pixels.pixels.data(), kPatchPixels, od.data());
  std::vector<double> conc(kPatchPixels * 2);
  kernels::nnls2_batch(od.data(), kPatchPixels, source.stain_matrix.a.data(), conc.data());

  const double s0 = target.max_concentrations[0] / source.max_concentrations[0];
  const double s1 = target.max_concentrations[1] / source.max_concentrations[1];
  for (std::size_t i = 0; i < kPatchPixels; ++i) {
    conc[2 * i] *= s0;
    conc[2 * i + 1] *= s1;
  }

  Patch out = p;
  kernels::rgb_from_conc(conc.data(), kPatchPixels, target.stain_matrix.a.data(),
                         out.pixels.pixels.data());
  return out;
}

void write_stain_profile_csv(const std::string& path, const StainProfile& profile) {
  profile.validate();
  std::ostringstream out;
  out << "h_r,h_g,h_b,e_r,e_g,e_b,max_c_h,max_c_e\n";
  out << fmt_double(profile.stain_matrix.at(0, 0)) << ',' << fmt_double(profile.stain_matrix.at(1, 0))
      << ',' << fmt_double(profile.stain_matrix.at(2, 0)) << ','
      << fmt_double(profile.stain_matrix.at(0, 1)) << ',' << fmt_double(profile.stain_matrix.at(1, 1))
      << ',' << fmt_double(profile.stain_matrix.at(2, 1)) << ','
      << fmt_double(profile.max_concentrations[0]) << ','
      << fmt_double(profile.max_concentrations[1]) << '\n';
  write_file_bytes(path, out.str());
}

StainProfile read_stain_profile_csv(const std::string& path) {
  const auto rows = read_csv(path);
  if (rows.size() != 2 || rows[1].size() != 8)
    throw std::runtime_error("malformed stain profile: " + path);
  StainProfile profile;
  profile.stain_matrix = MatD(3, 2);
  for (int r = 0; r < 3; ++r) {
    profile.stain_matrix.at(r, 0) = std::stod(rows[1][r]);
    profile.stain_matrix.at(r, 1) = std::stod(rows[1][3 + r]);
  }
  profile.max_concentrations = {std::stod(rows[1][6]), std::stod(rows[1][7])};
  profile.validate();
  return profile;
}

StainProfile default_reference_profile() {
  StainProfile profile;
  profile.stain_matrix = MatD(3, 2);
  // classic H&E optical-density directions, unit-normalized
  const double h[3] = {0.65, 0.70, 0.29};
  const double e[3] = {0.07, 0.99, 0.11};
  const double nh = std::sqrt(h[0] * h[0] + h[1] * h[1] + h[2] * h[2]);
  const double ne = std::sqrt(e[0] * e[0] + e[1] * e[1] + e[2] * e[2]);
  for (int r = 0; r < 3; ++r) {
    profile.stain_matrix.at(r, 0) = h[r] / nh;
    profile.stain_matrix.at(r, 1) = e[r] / ne;
  }
  profile.max_concentrations = {1.9705, 1.0308};
  return profile;
}

}  // namespace milreg
