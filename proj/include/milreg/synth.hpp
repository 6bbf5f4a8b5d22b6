#pragma once
// Synthetic cohort generator with known instance-level signal, continuous
// bag labels, site structure, and exponential survival. Ground truth for the
// end-to-end tests.
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "milreg/data_model.hpp"

namespace milreg {

struct SynthConfig {
  std::size_t n_patients = 200;
  std::size_t n_sites = 8;
  std::size_t instances_min = 16;
  std::size_t instances_max = 64;
  std::size_t d = 32;
  std::size_t signal_dim_count = 4;
  double signal_strength = 1.0;
  double label_noise_sd = 0.05;
  double hazard_coef = -2.0;
  std::uint64_t seed = 17;

  void validate() const;
};

struct SynthTruth {
  // per patient: fraction of signal instances (the noiseless label)
  std::map<std::string, double> signal_fraction;
  // per patient: one flag per instance
  std::map<std::string, std::vector<std::uint8_t>> signal_flags;
  double target_min = 0.0, target_max = 0.0;
};

// Deterministic per seed. Survival times are exponential with rate
// base * exp(hazard_coef * fraction), administratively censored at 10 years.
Cohort generate_cohort(const SynthConfig& cfg, SynthTruth* truth = nullptr);

// Writes the cohort in the standard formats plus the hidden-truth sidecars
// (truth.csv, truth_instances.csv) under out_dir.
void write_synth_cohort(const Cohort& cohort, const SynthTruth& truth,
                        const std::string& out_dir);

SynthTruth read_truth_csv(const std::string& out_dir);

}  // namespace milreg
