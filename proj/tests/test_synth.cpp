#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "milreg/common.hpp"
#include "milreg/data_model.hpp"
#include "milreg/synth.hpp"

using namespace milreg;

TEST_SUITE("synth") {

TEST_CASE("same seed reproduces the cohort bit for bit") {
  SynthConfig cfg;
  cfg.n_patients = 30;
  cfg.d = 8;
  cfg.seed = 4242;
  SynthTruth t1, t2;
  const Cohort a = generate_cohort(cfg, &t1);
  const Cohort b = generate_cohort(cfg, &t2);
  REQUIRE(a.bags.size() == b.bags.size());
  for (const auto& [id, bag] : a.bags) {
    const FeatureBag& other = b.bag(id);
    REQUIRE(bag.features.a.size() == other.features.a.size());
    CHECK(std::memcmp(bag.features.a.data(), other.features.a.data(),
                      bag.features.a.size() * sizeof(float)) == 0);
  }
  for (const auto& [id, rec] : a.records) {
    CHECK(rec.target == b.record(id).target);
    CHECK(rec.survival_days == b.record(id).survival_days);
    CHECK(rec.site_id == b.record(id).site_id);
  }
  CHECK(t1.signal_fraction == t2.signal_fraction);

  cfg.seed = 4243;
  const Cohort c = generate_cohort(cfg);
  bool any_diff = false;
  for (const auto& [id, rec] : a.records) any_diff |= rec.target != c.record(id).target;
  CHECK(any_diff);
}

TEST_CASE("zero label noise makes the target the signal fraction") {
  SynthConfig cfg;
  cfg.n_patients = 25;
  cfg.d = 8;
  cfg.label_noise_sd = 0.0;
  cfg.seed = 7;
  SynthTruth truth;
  const Cohort cohort = generate_cohort(cfg, &truth);
  for (const auto& [id, rec] : cohort.records)
    CHECK(rec.target == truth.signal_fraction.at(id));
}

TEST_CASE("signal flags match the drawn fraction") {
  SynthConfig cfg;
  cfg.n_patients = 40;
  cfg.d = 8;
  cfg.seed = 11;
  SynthTruth truth;
  const Cohort cohort = generate_cohort(cfg, &truth);
  for (const auto& [id, flags] : truth.signal_flags) {
    std::size_t n_signal = 0;
    for (auto f : flags) n_signal += f;
    const double fraction = truth.signal_fraction.at(id);
    CHECK(n_signal == static_cast<std::size_t>(std::llround(fraction * flags.size())));
    CHECK(flags.size() == cohort.bag(id).n_instances());
  }
}

TEST_CASE("survival times are positive and censored at ten years") {
  SynthConfig cfg;
  cfg.n_patients = 200;
  cfg.d = 4;
  cfg.seed = 13;
  const Cohort cohort = generate_cohort(cfg);
  std::size_t censored = 0, events = 0;
  for (const auto& [id, rec] : cohort.records) {
    CHECK(rec.survival_days > 0.0);
    CHECK(rec.survival_days <= 3650.0);
    if (rec.event == 0) {
      CHECK(rec.survival_days == 3650.0);
      ++censored;
    } else {
      ++events;
    }
  }
  CHECK(events > 0);
  CHECK(censored > 0);
}

TEST_CASE("median split of generated targets yields two non-empty classes") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull}) {
    SynthConfig cfg;
    cfg.n_patients = 10;
    cfg.d = 4;
    cfg.seed = seed;
    const Cohort cohort = generate_cohort(cfg);
    TargetSpec spec;
    const auto values = cohort.target_values();
    std::set<std::string> ids;
    for (const auto& [id, v] : values) ids.insert(id);
    const auto labels = binarize_target(values, spec, ids);
    std::size_t pos = 0;
    for (const auto& [id, l] : labels) pos += l;
    CHECK(pos > 0);
    CHECK(pos < labels.size());
  }
}

TEST_CASE("target range is recorded") {
  SynthConfig cfg;
  cfg.n_patients = 50;
  cfg.d = 4;
  cfg.seed = 17;
  SynthTruth truth;
  const Cohort cohort = generate_cohort(cfg, &truth);
  double mn = 1e300, mx = -1e300;
  for (const auto& [id, rec] : cohort.records) {
    mn = std::min(mn, rec.target);
    mx = std::max(mx, rec.target);
  }
  CHECK(truth.target_min == mn);
  CHECK(truth.target_max == mx);
}

TEST_CASE("truth sidecars round-trip") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "milreg_test_truth";
  fs::remove_all(dir);
  SynthConfig cfg;
  cfg.n_patients = 15;
  cfg.d = 4;
  cfg.seed = 19;
  SynthTruth truth;
  const Cohort cohort = generate_cohort(cfg, &truth);
  write_synth_cohort(cohort, truth, dir.string());
  const SynthTruth back = read_truth_csv(dir.string());
  CHECK(back.signal_fraction == truth.signal_fraction);
  CHECK(back.signal_flags == truth.signal_flags);
}

TEST_CASE("invalid configs are rejected") {
  SynthConfig cfg;
  cfg.signal_dim_count = cfg.d + 1;
  CHECK_THROWS(generate_cohort(cfg));
  SynthConfig cfg2;
  cfg2.instances_max = cfg2.instances_min - 1;
  CHECK_THROWS(generate_cohort(cfg2));
}

}  // TEST_SUITE
