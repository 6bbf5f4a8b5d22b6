#pragma once
// Attention extraction and grid heatmap rendering, plus the top-expresser
// selection used for the review bundles.
#include <map>
#include <string>
#include <vector>

#include "milreg/attmil.hpp"
#include "milreg/data_model.hpp"

namespace milreg {

struct AttentionMap {
  int grid_w = 0, grid_h = 0;
  std::vector<std::pair<int, int>> coords;  // per retained patch
  VecD attention;                           // nonnegative, sums to 1
  std::string model_id;
};

AttentionMap extract_attention(const FeatureBag& bag, const ModelParams& model);

struct Colormap {
  // single-hue ramp endpoints (low, high), RGB
  std::uint8_t low[3] = {247, 251, 255};
  std::uint8_t high[3] = {8, 48, 107};
};

// Renders an image of (grid_w * cell_px) x (grid_h * cell_px) with per-patch
// attention min-max normalized onto the colormap, and a CSV
// (x, y, attention_raw, attention_norm). Constant attention maps to the
// colormap midpoint with a warning on stderr.
void render_heatmap(const AttentionMap& map, const std::string& png_path,
                    const std::string& csv_path, const Colormap& cmap = {}, int cell_px = 16);

// Patients sorted by target descending, ties by patient_id; first n.
std::vector<std::string> select_top_expressers(const Cohort& cohort,
                                               const std::map<std::string, double>& targets,
                                               std::size_t n);

}  // namespace milreg
