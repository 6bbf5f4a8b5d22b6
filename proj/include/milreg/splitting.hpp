#pragma once
// Site-aware stratified k-fold planning: contributing sites are atomic
// across the {train+val}/{test} boundary of every fold.
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "milreg/data_model.hpp"

namespace milreg {

struct FoldAssignment {
  std::vector<std::string> train_ids, val_ids, test_ids;
};

struct FoldPlan {
  int k = 5;
  std::uint64_t seed = 0;
  std::vector<FoldAssignment> folds;
  std::vector<double> test_rate_deviation;  // |test positive rate - global|, per fold
};

// Partitions sites into k test groups by seeded greedy assignment (largest
// site first, best total objective) followed by deterministic move/swap
// refinement; the objective per group is
//   |group positive rate - global rate| + |group size - N/k| / N.
// Validation patients are a per-fold stratified random val_frac slice of the
// non-test patients.
FoldPlan site_aware_folds(const Cohort& cohort, const std::map<std::string, int>& labels, int k,
                          double val_frac, std::uint64_t seed, double tol = 0.1);

struct FoldValidation {
  bool ok = true;
  std::vector<std::string> failures;
};

FoldValidation validate_folds(const FoldPlan& plan, const Cohort& cohort,
                              const std::map<std::string, int>& labels, double tol = 0.1);

// CSV persistence: patient_id, fold_index, role in {train, val, test}.
void write_fold_plan_csv(const std::string& path, const FoldPlan& plan);
FoldPlan read_fold_plan_csv(const std::string& path);

}  // namespace milreg
