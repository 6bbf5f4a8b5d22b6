#include "milreg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "milreg/common.hpp"

namespace fs = std::filesystem;

namespace milreg {

namespace {
constexpr double kBaseHazard = 1.0 / 365.0;   // events per day at fraction 0
constexpr double kCensorDays = 3650.0;        // 10-year follow-up horizon
constexpr double kSiteShiftSd = 0.1;
}  // namespace

void SynthConfig::validate() const {
  if (n_patients == 0 || n_sites == 0 || d == 0) throw std::invalid_argument("synth: zero size");
  if (instances_min == 0 || instances_max < instances_min)
    throw std::invalid_argument("synth: bad instance range");
  if (signal_dim_count > d) throw std::invalid_argument("synth: signal_dim_count > d");
  if (label_noise_sd < 0) throw std::invalid_argument("synth: negative label noise");
}

Cohort generate_cohort(const SynthConfig& cfg, SynthTruth* truth_out) {
  cfg.validate();
  Rng rng(cfg.seed);

  // mild per-site mean shifts make site-aware splitting matter
  std::vector<std::vector<double>> site_shift(cfg.n_sites, std::vector<double>(cfg.d));
  for (auto& shift : site_shift)
    for (double& v : shift) v = rng.normal(0.0, kSiteShiftSd);

  Cohort cohort;
  cohort.name = "synthetic";
  SynthTruth truth;
  truth.target_min = std::numeric_limits<double>::infinity();
  truth.target_max = -std::numeric_limits<double>::infinity();

  const int id_width = static_cast<int>(std::to_string(cfg.n_patients - 1).size());
  for (std::size_t p = 0; p < cfg.n_patients; ++p) {
    std::ostringstream pid;
    pid << 'P';
    for (int k = static_cast<int>(std::to_string(p).size()); k < std::max(4, id_width); ++k)
      pid << '0';
    pid << p;
    const std::string patient_id = pid.str();

    const std::size_t site = rng.below(cfg.n_sites);
    const std::string site_id = "S" + std::to_string(site);

    const std::size_t n =
        static_cast<std::size_t>(rng.range(static_cast<std::int64_t>(cfg.instances_min),
                                           static_cast<std::int64_t>(cfg.instances_max)));
    const double fraction = rng.uniform();
    const std::size_t n_signal = static_cast<std::size_t>(std::llround(fraction * n));

    std::vector<std::uint8_t> flags(n, 0);
    std::fill(flags.begin(), flags.begin() + static_cast<std::ptrdiff_t>(n_signal), 1);
    rng.shuffle(flags);

    FeatureBag bag;
    bag.patient_id = patient_id;
    bag.site_id = site_id;
    bag.features = MatF(n, cfg.d);
    const std::size_t grid_w = static_cast<std::size_t>(std::ceil(std::sqrt(double(n))));
    for (std::size_t i = 0; i < n; ++i) {
      float* row = bag.features.row(i);
      for (std::size_t c = 0; c < cfg.d; ++c)
        row[c] = static_cast<float>(rng.normal() + site_shift[site][c]);
      if (flags[i])
        for (std::size_t c = 0; c < cfg.signal_dim_count; ++c)
          row[c] += static_cast<float>(cfg.signal_strength);
      bag.tile_coords.emplace_back(static_cast<int>(i % grid_w), static_cast<int>(i / grid_w));
    }

    PatientRecord rec;
    rec.patient_id = patient_id;
    rec.site_id = site_id;
    rec.target = fraction + (cfg.label_noise_sd > 0 ? rng.normal(0.0, cfg.label_noise_sd) : 0.0);
    rec.age = std::max(0.0, rng.normal(65.0, 10.0));
    rec.sex = rng.below(2) == 0 ? Sex::female : Sex::male;
    rec.stage = static_cast<int>(rng.range(1, 4));
    const double rate = kBaseHazard * std::exp(cfg.hazard_coef * fraction);
    const double t = rng.exponential(rate);
    if (t > kCensorDays) {
      rec.survival_days = kCensorDays;
      rec.event = 0;
    } else {
      rec.survival_days = t;
      rec.event = 1;
    }

    truth.target_min = std::min(truth.target_min, rec.target);
    truth.target_max = std::max(truth.target_max, rec.target);
    truth.signal_fraction[patient_id] = fraction;
    truth.signal_flags[patient_id] = std::move(flags);
    cohort.bags.emplace(patient_id, std::move(bag));
    cohort.records.emplace(patient_id, std::move(rec));
  }

  if (truth_out) *truth_out = std::move(truth);
  return cohort;
}

void write_synth_cohort(const Cohort& cohort, const SynthTruth& truth,
                        const std::string& out_dir) {
  const fs::path dir(out_dir);
  fs::create_directories(dir / "features");
  for (const auto& [id, bag] : cohort.bags)
    write_feature_file((dir / "features" / (id + ".milf")).string(), bag);
  write_clinical_csv((dir / "clinical.csv").string(), cohort.records);

  std::ostringstream t;
  t << "patient_id,signal_fraction\n";
  for (const auto& [id, f] : truth.signal_fraction) t << id << ',' << fmt_double(f) << '\n';
  write_file_bytes((dir / "truth.csv").string(), t.str());

  std::ostringstream ti;
  ti << "patient_id,instance_index,is_signal\n";
  for (const auto& [id, flags] : truth.signal_flags)
    for (std::size_t i = 0; i < flags.size(); ++i)
      ti << id << ',' << i << ',' << int(flags[i]) << '\n';
  write_file_bytes((dir / "truth_instances.csv").string(), ti.str());
}

SynthTruth read_truth_csv(const std::string& out_dir) {
  SynthTruth truth;
  const auto rows = read_csv((fs::path(out_dir) / "truth.csv").string());
  for (std::size_t i = 1; i < rows.size(); ++i)
    truth.signal_fraction[rows[i][0]] = std::stod(rows[i][1]);
  const auto irows = read_csv((fs::path(out_dir) / "truth_instances.csv").string());
  for (std::size_t i = 1; i < irows.size(); ++i) {
    auto& flags = truth.signal_flags[irows[i][0]];
    const std::size_t idx = std::stoul(irows[i][1]);
    if (flags.size() <= idx) flags.resize(idx + 1, 0);
    flags[idx] = static_cast<std::uint8_t>(std::stoi(irows[i][2]));
  }
  return truth;
}

}  // namespace milreg
