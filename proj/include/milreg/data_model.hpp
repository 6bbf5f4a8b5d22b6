#pragma once
// Cohort data model: per-patient instance-feature bags, clinical records,
// target binarization, and the on-disk formats for both.
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "milreg/linalg.hpp"

namespace milreg {

enum class Sex : int { female = 0, male = 1, unknown = -1 };

struct PatientRecord {
  std::string patient_id;
  std::string site_id;
  double target = std::numeric_limits<double>::quiet_NaN();  // NaN = missing
  double age = std::numeric_limits<double>::quiet_NaN();     // years, NaN = missing
  Sex sex = Sex::unknown;
  int stage = 0;  // 1..4, 0 = unknown
  double survival_days = std::numeric_limits<double>::quiet_NaN();
  int event = -1;  // 1 death observed, 0 censored, -1 unknown

  bool has_target() const { return !std::isnan(target); }
  bool has_survival() const { return !std::isnan(survival_days) && event >= 0; }
};

struct FeatureBag {
  std::string patient_id;
  std::string site_id;
  MatF features;                                  // n_instances x d
  std::vector<std::pair<int, int>> tile_coords;   // empty, or one (x, y) per instance

  std::size_t n_instances() const { return features.rows; }
  std::size_t dim() const { return features.cols; }
};

struct TargetSpec {
  enum class Kind { fixed_cutoff, median_split };
  enum class Direction { positive_if_ge, positive_if_gt };

  std::string name = "target";
  Kind kind = Kind::median_split;
  std::optional<double> cutoff;  // required for fixed_cutoff, fitted otherwise
  Direction direction = Direction::positive_if_gt;

  static TargetSpec hrd() {
    return {"hrd", Kind::fixed_cutoff, 42.0, Direction::positive_if_ge};
  }
};

struct HrdSubscores {
  double loh = 0.0, tai = 0.0, lst = 0.0;
};

// Sum of the three genomic-scar subscores.
double compose_hrd(const HrdSubscores& sub);

struct Cohort {
  std::string name;
  std::map<std::string, FeatureBag> bags;        // patient_id -> bag
  std::map<std::string, PatientRecord> records;  // patient_id -> record

  // Patients usable for modeling: bag + record + non-missing target.
  std::vector<std::string> ids() const;
  std::map<std::string, double> target_values() const;
  const FeatureBag& bag(const std::string& id) const;
  const PatientRecord& record(const std::string& id) const;
};

struct LoadReport {
  std::size_t n_feature_files = 0;
  std::size_t n_bags = 0;
  std::size_t n_records = 0;
  std::size_t n_target_overlap = 0;  // bags with a record and a target
  std::vector<std::string> records_without_features;
};

// ---------------------------------------------------------------------------
// On-disk formats.
//
// Feature file (one per patient, extension .milf), little-endian:
//   magic "MILF" | version u16 | n_instances u32 | d u32 | coord_flag u8 |
//   [n x 2 i32 coords] | n x d f32 row-major
// Several files <patient>__<slide>.milf are concatenated into one bag.
//
// Clinical CSV columns (exact): patient_id, site_id, target, age, sex,
// stage, survival_days, event. Empty cell = missing.
// ---------------------------------------------------------------------------

void write_feature_file(const std::string& path, const FeatureBag& bag);
FeatureBag read_feature_file(const std::string& path);

void write_clinical_csv(const std::string& path,
                        const std::map<std::string, PatientRecord>& records);
std::map<std::string, PatientRecord> read_clinical_csv(const std::string& path);

Cohort load_cohort(const std::string& features_dir, const std::string& clinical_table,
                   const TargetSpec& target, LoadReport* report = nullptr);

// ---------------------------------------------------------------------------
// Binarization. The cutoff is always fitted from fit_ids only; median_split
// uses the lower median and labels positive iff strictly above it, while
// fixed_cutoff follows the spec'd direction (HRD: positive iff >= 42).
// ---------------------------------------------------------------------------

double fit_cutoff(const std::map<std::string, double>& values, const TargetSpec& spec,
                  const std::set<std::string>& fit_ids);

std::map<std::string, int> binarize_target(const std::map<std::string, double>& values,
                                           const TargetSpec& spec,
                                           const std::set<std::string>& fit_ids);

int binarize_value(double value, const TargetSpec& spec, double cutoff);

}  // namespace milreg
