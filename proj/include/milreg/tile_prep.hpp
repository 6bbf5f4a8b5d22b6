#pragma once
// Tile pipeline: tessellation grid, edge-count patch rejection, brightness
// standardization, and Macenko stain normalization on raster tiles.
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "milreg/image_io.hpp"
#include "milreg/linalg.hpp"

namespace milreg {

constexpr int kTilePx = 224;
constexpr double kTileEdgeUm = 256.0;

struct Patch {
  ImageU8 pixels;  // exactly 224 x 224 x 3
  std::pair<int, int> grid_pos{0, 0};
  double source_mpp = kTileEdgeUm / kTilePx;

  void validate() const;
};

struct TileGrid {
  double tile_edge_um = kTileEdgeUm;
  int tile_px = kTilePx;
  int source_extent_px = 0;  // round(tile_edge_um / source_mpp)
  std::vector<std::pair<int, int>> positions;
};

// Non-overlapping top-left-anchored grid; partial edge tiles are dropped.
// A raster smaller than one tile yields an empty grid.
TileGrid build_tile_grid(int raster_w, int raster_h, double source_mpp);

// Extracts the square at `pos` and bilinearly resamples it to 224 x 224.
Patch extract_tile(const ImageU8& raster, const TileGrid& grid, std::pair<int, int> pos,
                   double source_mpp);

struct CannyConfig {
  double sigma = 1.4;        // Gaussian blur before gradients
  double low = 50.0;         // hysteresis thresholds on the 8-bit-clamped
  double high = 150.0;       //   gradient magnitude
  int min_segment_len = 10;  // pixels per counted 8-connected component
  int max_segments_reject = 2;  // reject iff segment count <= this
};

// Number of 8-connected edge components of at least min_segment_len pixels.
int count_edge_segments(const Patch& p, const CannyConfig& cfg = {});

// true = reject (blank background or blur: two or fewer edge segments)
bool reject_patch(const Patch& p, const CannyConfig& cfg = {});

// Scales all channels by 240 / P90(luminance), clamped to [0, 255].
Patch standardize_brightness(const Patch& p);

struct StainProfile {
  MatD stain_matrix;        // 3 x 2 unit columns, hematoxylin first
  VecD max_concentrations;  // 2, 99th-percentile stain concentrations

  void validate() const;
};

// Macenko estimation: optical-density scatter, top-2 principal directions,
// angular (alpha, 100-alpha) percentile extremes, NNLS concentrations.
StainProfile estimate_stains(const Patch& p, double alpha = 1.0, double beta = 0.15);

// Maps the patch's concentrations from `source` to `target` stain space.
Patch normalize_patch(const Patch& p, const StainProfile& source, const StainProfile& target);

// Reference profile persistence: CSV with the 6 matrix entries then the 2
// concentrations. A checked-in default ships with the repository.
void write_stain_profile_csv(const std::string& path, const StainProfile& profile);
StainProfile read_stain_profile_csv(const std::string& path);
StainProfile default_reference_profile();

}  // namespace milreg
