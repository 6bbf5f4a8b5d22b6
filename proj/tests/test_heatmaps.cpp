#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <set>

#include "milreg/common.hpp"
#include "milreg/heatmaps.hpp"
#include "milreg/image_io.hpp"
#include "milreg/pipeline.hpp"
#include "milreg/splitting.hpp"
#include "milreg/synth.hpp"
#include "milreg/training.hpp"

using namespace milreg;
namespace fs = std::filesystem;

namespace {

FeatureBag grid_bag(Rng& rng, std::size_t n, std::size_t d) {
  FeatureBag bag;
  bag.patient_id = "T";
  bag.features = MatF(n, d);
  for (float& v : bag.features.a) v = static_cast<float>(rng.normal());
  const int w = static_cast<int>(std::ceil(std::sqrt(double(n))));
  for (std::size_t i = 0; i < n; ++i)
    bag.tile_coords.emplace_back(static_cast<int>(i) % w, static_cast<int>(i) / w);
  return bag;
}

}  // namespace

TEST_SUITE("heatmaps") {

TEST_CASE("single-patch bags map to a single full-weight cell") {
  Rng rng(61);
  const FeatureBag bag = grid_bag(rng, 1, 6);
  const ModelParams model = init_params(6, 4, 4, 1, 0.0, false, false, 1);
  const AttentionMap map = extract_attention(bag, model);
  REQUIRE(map.attention.size() == 1);
  CHECK(map.attention[0] == 1.0);
  CHECK(map.grid_w == 1);
  CHECK(map.grid_h == 1);
}

TEST_CASE("identical patches give a uniform map") {
  Rng rng(62);
  FeatureBag bag = grid_bag(rng, 9, 6);
  for (std::size_t i = 1; i < 9; ++i)
    std::memcpy(bag.features.row(i), bag.features.row(0), 6 * sizeof(float));
  const ModelParams model = init_params(6, 4, 4, 1, 0.0, false, false, 2);
  const AttentionMap map = extract_attention(bag, model);
  for (double a : map.attention) CHECK(a == doctest::Approx(1.0 / 9.0).epsilon(1e-15));
}

TEST_CASE("bags without coordinates are rejected") {
  Rng rng(63);
  FeatureBag bag = grid_bag(rng, 4, 6);
  bag.tile_coords.clear();
  const ModelParams model = init_params(6, 4, 4, 1, 0.0, false, false, 3);
  CHECK_THROWS_WITH_AS(extract_attention(bag, model), doctest::Contains("no tile coordinates"),
                       std::runtime_error);
}

TEST_CASE("rendering produces the declared image size and a faithful csv") {
  const fs::path dir = fs::temp_directory_path() / "milreg_test_heatmap";
  fs::remove_all(dir);
  fs::create_directories(dir);

  AttentionMap map;
  map.grid_w = 2;
  map.grid_h = 2;
  map.coords = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
  map.attention = {0.1, 0.2, 0.3, 0.4};
  map.model_id = "m";

  const std::string png = (dir / "map.png").string();
  const std::string csv = (dir / "map.csv").string();
  render_heatmap(map, png, csv, {}, 10);

  const ImageU8 img = read_image(png);
  CHECK(img.width == 20);
  CHECK(img.height == 20);

  const auto rows = read_csv(csv);
  REQUIRE(rows.size() == 5);  // header + one row per patch
  // raw attention column matches the extract output exactly
  for (int i = 0; i < 4; ++i) CHECK(std::stod(rows[i + 1][2]) == map.attention[i]);

  // min and max land on the colormap endpoints
  const Colormap cmap;
  const std::uint8_t* lo_px = img.at(5, 5);    // cell of attention 0.1
  const std::uint8_t* hi_px = img.at(15, 15);  // cell of attention 0.4
  for (int c = 0; c < 3; ++c) {
    CHECK(lo_px[c] == cmap.low[c]);
    CHECK(hi_px[c] == cmap.high[c]);
  }
}

TEST_CASE("constant attention renders mid-scale with a warning") {
  const fs::path dir = fs::temp_directory_path() / "milreg_test_heatmap_const";
  fs::remove_all(dir);
  fs::create_directories(dir);
  AttentionMap map;
  map.grid_w = 2;
  map.grid_h = 1;
  map.coords = {{0, 0}, {1, 0}};
  map.attention = {0.5, 0.5};
  render_heatmap(map, (dir / "m.png").string(), (dir / "m.csv").string(), {}, 4);
  const auto rows = read_csv((dir / "m.csv").string());
  CHECK(std::stod(rows[1][3]) == 0.5);
  CHECK(std::stod(rows[2][3]) == 0.5);
}

TEST_CASE("top expressers sort by target then id") {
  Cohort cohort;
  const std::vector<std::pair<std::string, double>> patients = {
      {"P00", 0.5}, {"P01", 0.9}, {"P02", 0.9}, {"P03", 0.2}, {"P04", 0.7}};
  for (const auto& [id, target] : patients) {
    PatientRecord rec;
    rec.patient_id = id;
    rec.site_id = "S";
    rec.target = target;
    cohort.records[id] = rec;
    FeatureBag bag;
    bag.patient_id = id;
    bag.features = MatF(1, 2, 0.0f);
    cohort.bags[id] = bag;
  }
  const auto targets = cohort.target_values();
  const auto top3 = select_top_expressers(cohort, targets, 3);
  CHECK(top3 == std::vector<std::string>{"P01", "P02", "P04"});  // tie broken by id
  const auto all = select_top_expressers(cohort, targets, 5);
  CHECK(all == std::vector<std::string>{"P01", "P02", "P04", "P00", "P03"});
  CHECK_THROWS(select_top_expressers(cohort, targets, 6));
}

TEST_CASE("classification and regression maps share their support") {
  Rng rng(64);
  const FeatureBag bag = grid_bag(rng, 12, 6);
  const ModelParams clf = init_params(6, 4, 4, 2, 0.0, false, false, 5);
  const ModelParams reg = init_params(6, 4, 4, 1, 0.0, false, false, 6);
  const AttentionMap a = extract_attention(bag, clf);
  const AttentionMap b = extract_attention(bag, reg);
  CHECK(a.coords == b.coords);
}

// A presence-style task (positive iff the bag holds at least a sliver of
// signal) forces the attention onto the signal instances.
TEST_CASE("presence-trained attention concentrates on signal instances") {
  SynthConfig cfg;
  cfg.n_patients = 600;
  cfg.d = 16;
  cfg.signal_strength = 4.0;
  cfg.label_noise_sd = 0.0;
  cfg.instances_min = 16;
  cfg.instances_max = 32;
  cfg.seed = 29;
  SynthTruth truth;
  const Cohort cohort = generate_cohort(cfg, &truth);

  TargetSpec spec;
  spec.kind = TargetSpec::Kind::fixed_cutoff;
  spec.cutoff = 0.06;
  spec.direction = TargetSpec::Direction::positive_if_ge;

  const auto values = cohort.target_values();
  std::set<std::string> ids;
  for (const auto& [id, v] : values) ids.insert(id);
  const auto labels = binarize_target(values, spec, ids);
  const FoldPlan plan = site_aware_folds(cohort, labels, 5, 0.2, cfg.seed, 1.0);
  const TrainResult tr =
      train_model(cohort, plan, 0, preset(PresetKind::camil_classification), spec, cfg.seed);

  double ratio_sum = 0.0;
  int n_bags = 0;
  for (const auto& [id, flags] : truth.signal_flags) {
    std::size_t n_signal = 0, signal_idx = 0;
    for (std::size_t i = 0; i < flags.size(); ++i)
      if (flags[i]) {
        ++n_signal;
        signal_idx = i;
      }
    if (n_signal != 1) continue;
    const BagOutput out = forward_bag(cohort.bag(id), tr.params, false);
    ratio_sum += out.attention[signal_idx] * static_cast<double>(flags.size());
    ++n_bags;
  }
  REQUIRE(n_bags >= 10);
  CHECK(ratio_sum / n_bags >= 2.0);  // at least twice the uniform share on average
}

}  // TEST_SUITE
