#include "milreg/heatmaps.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

#include "milreg/common.hpp"
#include "milreg/image_io.hpp"

namespace milreg {

AttentionMap extract_attention(const FeatureBag& bag, const ModelParams& model) {
  if (bag.tile_coords.empty())
    throw std::runtime_error("bag has no tile coordinates: " + bag.patient_id);

  const BagOutput out = forward_bag(bag, model, /*train_mode=*/false);

  AttentionMap map;
  map.coords = bag.tile_coords;
  map.attention = out.attention;
  map.model_id = model.preset_name;
  int min_x = map.coords[0].first, max_x = min_x;
  int min_y = map.coords[0].second, max_y = min_y;
  for (const auto& [x, y] : map.coords) {
    min_x = std::min(min_x, x);
    max_x = std::max(max_x, x);
    min_y = std::min(min_y, y);
    max_y = std::max(max_y, y);
  }
  // normalize the origin so the rendered grid starts at (0, 0)
  for (auto& [x, y] : map.coords) {
    x -= min_x;
    y -= min_y;
  }
  map.grid_w = max_x - min_x + 1;
  map.grid_h = max_y - min_y + 1;
  return map;
}

void render_heatmap(const AttentionMap& map, const std::string& png_path,
                    const std::string& csv_path, const Colormap& cmap, int cell_px) {
  if (map.coords.empty()) throw std::invalid_argument("empty attention map");
  if (map.coords.size() != map.attention.size())
    throw std::invalid_argument("attention/coords size mismatch");

  const auto [mn_it, mx_it] = std::minmax_element(map.attention.begin(), map.attention.end());
  const double mn = *mn_it, mx = *mx_it;
  const bool constant = mn == mx;
  if (constant)
    std::cerr << "warning: constant attention for " << map.model_id
              << "; rendering the colormap midpoint\n";

  VecD norm(map.attention.size());
  for (std::size_t i = 0; i < norm.size(); ++i)
    norm[i] = constant ? 0.5 : (map.attention[i] - mn) / (mx - mn);

  ImageU8 img;
  img.width = map.grid_w * cell_px;
  img.height = map.grid_h * cell_px;
  img.pixels.assign(static_cast<std::size_t>(img.width) * img.height * 3, 255);
  for (std::size_t i = 0; i < map.coords.size(); ++i) {
    std::uint8_t rgb[3];
    for (int c = 0; c < 3; ++c)
      rgb[c] = static_cast<std::uint8_t>(
          std::lround(cmap.low[c] + norm[i] * (double(cmap.high[c]) - cmap.low[c])));
    const auto [gx, gy] = map.coords[i];
    for (int dy = 0; dy < cell_px; ++dy) {
      std::uint8_t* row = img.at(gx * cell_px, gy * cell_px + dy);
      for (int dx = 0; dx < cell_px; ++dx) std::copy_n(rgb, 3, row + 3 * dx);
    }
  }
  write_png(png_path, img);

  std::ostringstream csv;
  csv << "x,y,attention_raw,attention_norm\n";
  for (std::size_t i = 0; i < map.coords.size(); ++i)
    csv << map.coords[i].first << ',' << map.coords[i].second << ','
        << fmt_double(map.attention[i]) << ',' << fmt_double(norm[i]) << '\n';
  write_file_bytes(csv_path, csv.str());
}

std::vector<std::string> select_top_expressers(const Cohort& cohort,
                                               const std::map<std::string, double>& targets,
                                               std::size_t n) {
  std::vector<std::string> ids = cohort.ids();
  if (n > ids.size()) throw std::invalid_argument("top-expresser count exceeds the cohort");
  std::sort(ids.begin(), ids.end(), [&](const std::string& a, const std::string& b) {
    const double ta = targets.at(a), tb = targets.at(b);
    if (ta != tb) return ta > tb;
    return a < b;
  });
  ids.resize(n);
  return ids;
}

}  // namespace milreg
