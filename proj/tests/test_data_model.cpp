#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "milreg/common.hpp"
#include "milreg/data_model.hpp"
#include "milreg/synth.hpp"

using namespace milreg;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("milreg_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

FeatureBag random_bag(Rng& rng, const std::string& id, std::size_t n, std::size_t d,
                      bool coords) {
  FeatureBag bag;
  bag.patient_id = id;
  bag.features = MatF(n, d);
  for (float& v : bag.features.a) v = static_cast<float>(rng.normal());
  if (coords)
    for (std::size_t i = 0; i < n; ++i)
      bag.tile_coords.emplace_back(static_cast<int>(i % 8), static_cast<int>(i / 8));
  return bag;
}

}  // namespace

TEST_SUITE("data_model") {

TEST_CASE("compose_hrd sums the three subscores") {
  CHECK(compose_hrd({0, 0, 0}) == 0.0);
  const double v = compose_hrd({20, 15, 10});
  CHECK(v == 45.0);
  // binarizes positive under the clinical cutoff
  const TargetSpec hrd = TargetSpec::hrd();
  CHECK(binarize_value(v, hrd, *hrd.cutoff) == 1);
}

TEST_CASE("compose_hrd is symmetric and additive") {
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const double a = rng.uniform(0, 40), b = rng.uniform(0, 40), c = rng.uniform(0, 40);
    const double delta = rng.uniform(0, 5);
    CHECK(compose_hrd({a, b, c}) == doctest::Approx(compose_hrd({c, a, b})).epsilon(1e-12));
    CHECK(compose_hrd({a + delta, b, c}) ==
          doctest::Approx(compose_hrd({a, b, c}) + delta).epsilon(1e-12));
  }
}

TEST_CASE("compose_hrd rejects invalid subscores") {
  CHECK_THROWS(compose_hrd({-1, 0, 0}));
  CHECK_THROWS(compose_hrd({std::numeric_limits<double>::quiet_NaN(), 0, 0}));
}

TEST_CASE("fixed-cutoff binarization follows the HRD rule") {
  const TargetSpec hrd = TargetSpec::hrd();
  std::map<std::string, double> values = {{"a", 41.9}, {"b", 42.0}, {"c", 60.0}};
  const auto labels = binarize_target(values, hrd, {"a", "b", "c"});
  CHECK(labels.at("a") == 0);
  CHECK(labels.at("b") == 1);
  CHECK(labels.at("c") == 1);
}

TEST_CASE("median split uses the strict-greater tie rule") {
  TargetSpec spec;  // median_split, positive_if_gt
  std::map<std::string, double> values = {{"a", 1}, {"b", 2}, {"c", 3}, {"d", 4}, {"e", 5}};
  const auto labels = binarize_target(values, spec, {"a", "b", "c", "d", "e"});
  CHECK(labels.at("c") == 0);  // equals the median
  CHECK(labels.at("d") == 1);
  CHECK(labels.at("e") == 1);
  CHECK(labels.at("a") == 0);
}

TEST_CASE("median is fitted from the fit set only, lower median for even counts") {
  TargetSpec spec;
  std::map<std::string, double> values = {{"t1", 0.0}, {"t2", 10.0}, {"held", 5.0}};
  // lower median of {0, 10} is 0; the held-out value never enters the fit
  CHECK(fit_cutoff(values, spec, {"t1", "t2"}) == 0.0);
  const auto labels = binarize_target(values, spec, {"t1", "t2"});
  CHECK(labels.at("held") == 1);  // 5 > 0

  // permuting or duplicating held-out patients never changes the cutoff
  std::map<std::string, double> more = values;
  more["held2"] = -100.0;
  more["held3"] = 100.0;
  CHECK(fit_cutoff(more, spec, {"t1", "t2"}) == 0.0);
}

TEST_CASE("degenerate median split is rejected") {
  TargetSpec spec;
  std::map<std::string, double> values = {{"a", 3.0}, {"b", 3.0}, {"c", 3.0}};
  CHECK_THROWS_WITH_AS(binarize_target(values, spec, {"a", "b", "c"}),
                       doctest::Contains("degenerate target"), std::runtime_error);
}

TEST_CASE("binarization is monotone in the value") {
  Rng rng(17);
  TargetSpec spec;
  std::map<std::string, double> values;
  std::set<std::string> ids;
  for (int i = 0; i < 50; ++i) {
    const std::string id = "p" + std::to_string(i);
    values[id] = rng.uniform(-5, 5);
    ids.insert(id);
  }
  const double cutoff = fit_cutoff(values, spec, ids);
  for (const auto& [id1, v1] : values)
    for (const auto& [id2, v2] : values)
      if (v1 <= v2)
        CHECK(binarize_value(v1, spec, cutoff) <= binarize_value(v2, spec, cutoff));
}

TEST_CASE("feature files round-trip bit for bit") {
  const auto dir = temp_dir("milf_roundtrip");
  Rng rng(23);
  for (int i = 0; i < 5; ++i) {
    const FeatureBag bag = random_bag(rng, "P" + std::to_string(i), 3 + i * 7, 16, i % 2 == 0);
    const std::string path = (dir / (bag.patient_id + ".milf")).string();
    write_feature_file(path, bag);
    const FeatureBag back = read_feature_file(path);
    REQUIRE(back.features.rows == bag.features.rows);
    REQUIRE(back.features.cols == bag.features.cols);
    CHECK(std::memcmp(back.features.a.data(), bag.features.a.data(),
                      bag.features.a.size() * sizeof(float)) == 0);
    CHECK(back.tile_coords == bag.tile_coords);
  }
}

TEST_CASE("synthetic cohort round-trips through the loader bit for bit") {
  const auto dir = temp_dir("synth_roundtrip");
  SynthConfig cfg;
  cfg.n_patients = 12;
  cfg.d = 8;
  cfg.seed = 99;
  SynthTruth truth;
  const Cohort cohort = generate_cohort(cfg, &truth);
  write_synth_cohort(cohort, truth, dir.string());

  TargetSpec spec;
  LoadReport report;
  const Cohort back =
      load_cohort((dir / "features").string(), (dir / "clinical.csv").string(), spec, &report);
  CHECK(report.n_feature_files == 12);
  CHECK(report.n_target_overlap == 12);
  REQUIRE(back.bags.size() == cohort.bags.size());
  for (const auto& [id, bag] : cohort.bags) {
    const FeatureBag& b = back.bag(id);
    REQUIRE(b.features.a.size() == bag.features.a.size());
    CHECK(std::memcmp(b.features.a.data(), bag.features.a.data(),
                      bag.features.a.size() * sizeof(float)) == 0);
    CHECK(b.tile_coords == bag.tile_coords);
    CHECK(b.site_id == bag.site_id);
  }
}

TEST_CASE("loader keeps only patients with both features and a target") {
  const auto dir = temp_dir("overlap");
  fs::create_directories(dir / "features");
  Rng rng(31);
  for (const std::string id : {"P0", "P1", "P2"})
    write_feature_file((dir / "features" / (id + ".milf")).string(), random_bag(rng, id, 4, 8, false));
  std::ofstream csv(dir / "clinical.csv");
  csv << "patient_id,site_id,target,age,sex,stage,survival_days,event\n";
  csv << "P0,S0,1.5,60,0,2,100,1\n";
  csv << "P1,S0,2.5,61,1,3,200,0\n";
  csv << "P9,S1,9.9,70,0,1,,\n";  // record without features: flagged
  csv.close();

  LoadReport report;
  const Cohort cohort =
      load_cohort((dir / "features").string(), (dir / "clinical.csv").string(), {}, &report);
  CHECK(report.n_feature_files == 3);
  CHECK(report.n_bags == 3);
  CHECK(report.n_target_overlap == 2);
  CHECK(cohort.ids() == std::vector<std::string>{"P0", "P1"});
  REQUIRE(report.records_without_features.size() == 1);
  CHECK(report.records_without_features[0] == "P9");
}

TEST_CASE("multi-slide files concatenate into one bag") {
  const auto dir = temp_dir("slides");
  fs::create_directories(dir / "features");
  Rng rng(37);
  const FeatureBag s1 = random_bag(rng, "P0__a", 4, 8, false);
  const FeatureBag s2 = random_bag(rng, "P0__b", 6, 8, false);
  write_feature_file((dir / "features" / "P0__a.milf").string(), s1);
  write_feature_file((dir / "features" / "P0__b.milf").string(), s2);
  std::ofstream csv(dir / "clinical.csv");
  csv << "patient_id,site_id,target,age,sex,stage,survival_days,event\n";
  csv << "P0,S0,1.0,,,,,\n";
  csv.close();

  const Cohort cohort = load_cohort((dir / "features").string(), (dir / "clinical.csv").string(), {});
  REQUIRE(cohort.bags.count("P0") == 1);
  CHECK(cohort.bag("P0").n_instances() == 10);
}

TEST_CASE("malformed feature files are rejected") {
  const auto dir = temp_dir("malformed");
  Rng rng(41);
  const FeatureBag bag = random_bag(rng, "P0", 4, 8, false);
  const std::string path = (dir / "P0.milf").string();
  write_feature_file(path, bag);

  SUBCASE("bad magic") {
    std::string bytes = read_file_bytes(path);
    bytes[0] = 'X';
    write_file_bytes(path, bytes);
    CHECK_THROWS_WITH_AS(read_feature_file(path), doctest::Contains("bad magic"),
                         std::runtime_error);
  }
  SUBCASE("truncated payload is a dimension mismatch") {
    std::string bytes = read_file_bytes(path);
    bytes.resize(bytes.size() - 4);  // one float short of the declared shape
    write_file_bytes(path, bytes);
    CHECK_THROWS_WITH_AS(read_feature_file(path), doctest::Contains("dimension mismatch"),
                         std::runtime_error);
  }
  SUBCASE("non-finite values are rejected") {
    FeatureBag bad = bag;
    bad.features.a[5] = std::numeric_limits<float>::infinity();
    // writer accepts raw bytes; the reader must catch it
    write_feature_file(path, bad);
    CHECK_THROWS_WITH_AS(read_feature_file(path), doctest::Contains("non-finite"),
                         std::runtime_error);
  }
}

TEST_CASE("duplicate patient ids in the clinical table are rejected") {
  const auto dir = temp_dir("dup");
  std::ofstream csv(dir / "clinical.csv");
  csv << "patient_id,site_id,target,age,sex,stage,survival_days,event\n";
  csv << "P0,S0,1.0,,,,,\n";
  csv << "P0,S1,2.0,,,,,\n";
  csv.close();
  CHECK_THROWS_WITH_AS(read_clinical_csv((dir / "clinical.csv").string()),
                       doctest::Contains("duplicate patient_id"), std::runtime_error);
}

TEST_CASE("clinical csv round-trips records") {
  const auto dir = temp_dir("clinical_roundtrip");
  std::map<std::string, PatientRecord> records;
  PatientRecord r;
  r.patient_id = "P0";
  r.site_id = "S3";
  r.target = 0.75;
  r.age = 62.5;
  r.sex = Sex::male;
  r.stage = 3;
  r.survival_days = 1234.5;
  r.event = 1;
  records["P0"] = r;
  PatientRecord m;
  m.patient_id = "P1";
  m.site_id = "S1";  // everything else missing
  records["P1"] = m;

  const std::string path = (dir / "clinical.csv").string();
  write_clinical_csv(path, records);
  const auto back = read_clinical_csv(path);
  REQUIRE(back.size() == 2);
  CHECK(back.at("P0").target == 0.75);
  CHECK(back.at("P0").sex == Sex::male);
  CHECK(back.at("P0").stage == 3);
  CHECK(back.at("P0").survival_days == 1234.5);
  CHECK(back.at("P0").event == 1);
  CHECK(!back.at("P1").has_target());
  CHECK(back.at("P1").sex == Sex::unknown);
  CHECK(back.at("P1").stage == 0);
  CHECK(!back.at("P1").has_survival());
}

}  // TEST_SUITE
