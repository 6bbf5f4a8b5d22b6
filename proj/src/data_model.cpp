#include "milreg/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "milreg/common.hpp"

namespace fs = std::filesystem;

namespace milreg {

namespace {
constexpr char kMagic[4] = {'M', 'I', 'L', 'F'};
constexpr std::uint16_t kVersion = 1;
}  // namespace

double compose_hrd(const HrdSubscores& sub) {
  if (!std::isfinite(sub.loh) || !std::isfinite(sub.tai) || !std::isfinite(sub.lst))
    throw std::invalid_argument("compose_hrd: non-finite subscore");
  if (sub.loh < 0 || sub.tai < 0 || sub.lst < 0)
    throw std::invalid_argument("compose_hrd: negative subscore");
  return sub.loh + sub.tai + sub.lst;
}

std::vector<std::string> Cohort::ids() const {
  std::vector<std::string> out;
  for (const auto& [id, bag] : bags) {
    (void)bag;
    auto it = records.find(id);
    if (it != records.end() && it->second.has_target()) out.push_back(id);
  }
  return out;
}

std::map<std::string, double> Cohort::target_values() const {
  std::map<std::string, double> out;
  for (const std::string& id : ids()) out[id] = records.at(id).target;
  return out;
}

const FeatureBag& Cohort::bag(const std::string& id) const {
  auto it = bags.find(id);
  if (it == bags.end()) throw std::runtime_error("unknown patient: " + id);
  return it->second;
}

const PatientRecord& Cohort::record(const std::string& id) const {
  auto it = records.find(id);
  if (it == records.end()) throw std::runtime_error("unknown patient: " + id);
  return it->second;
}

void write_feature_file(const std::string& path, const FeatureBag& bag) {
  if (bag.features.rows == 0) throw std::runtime_error("empty bag: " + bag.patient_id);
  if (!bag.tile_coords.empty() && bag.tile_coords.size() != bag.features.rows)
    throw std::runtime_error("coord count mismatch: " + bag.patient_id);
  std::string buf;
  buf.reserve(13 + bag.features.a.size() * 4 + bag.tile_coords.size() * 8);
  buf.append(kMagic, 4);
  le::append<std::uint16_t>(buf, kVersion);
  le::append<std::uint32_t>(buf, static_cast<std::uint32_t>(bag.features.rows));
  le::append<std::uint32_t>(buf, static_cast<std::uint32_t>(bag.features.cols));
  le::append<std::uint8_t>(buf, bag.tile_coords.empty() ? 0 : 1);
  for (const auto& [x, y] : bag.tile_coords) {
    le::append<std::int32_t>(buf, x);
    le::append<std::int32_t>(buf, y);
  }
  for (float v : bag.features.a) le::append<float>(buf, v);
  write_file_bytes(path, buf);
}

FeatureBag read_feature_file(const std::string& path) {
  const std::string buf = read_file_bytes(path);
  std::size_t off = 0;
  if (buf.size() < 15 || std::memcmp(buf.data(), kMagic, 4) != 0)
    throw std::runtime_error("bad magic in feature file: " + path);
  off = 4;
  const auto version = le::read<std::uint16_t>(buf, off);
  if (version != kVersion)
    throw std::runtime_error("unsupported feature file version in " + path);
  const auto n = le::read<std::uint32_t>(buf, off);
  const auto d = le::read<std::uint32_t>(buf, off);
  const auto coord_flag = le::read<std::uint8_t>(buf, off);
  if (n == 0 || d == 0) throw std::runtime_error("empty bag in " + path);

  const std::size_t expected =
      off + (coord_flag ? std::size_t{n} * 8 : 0) + std::size_t{n} * d * 4;
  if (buf.size() != expected)
    throw std::runtime_error("dimension mismatch in feature file: " + path);

  FeatureBag bag;
  bag.patient_id = fs::path(path).stem().string();
  if (coord_flag) {
    bag.tile_coords.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
      const auto x = le::read<std::int32_t>(buf, off);
      const auto y = le::read<std::int32_t>(buf, off);
      bag.tile_coords.emplace_back(x, y);
    }
    std::set<std::pair<int, int>> uniq(bag.tile_coords.begin(), bag.tile_coords.end());
    if (uniq.size() != bag.tile_coords.size())
      throw std::runtime_error("duplicate tile coordinates in " + path);
  }
  bag.features = MatF(n, d);
  for (float& v : bag.features.a) v = le::read<float>(buf, off);
  if (!all_finite(std::span<const float>(bag.features.a)))
    throw std::runtime_error("non-finite feature values in " + path);
  return bag;
}

namespace {

std::string sex_to_string(Sex s) {
  switch (s) {
    case Sex::female: return "0";
    case Sex::male: return "1";
    default: return "";
  }
}

Sex sex_from_string(const std::string& s) {
  if (s.empty()) return Sex::unknown;
  if (s == "0" || s == "f" || s == "F" || s == "female") return Sex::female;
  if (s == "1" || s == "m" || s == "M" || s == "male") return Sex::male;
  throw std::runtime_error("unrecognized sex value: " + s);
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("cannot parse " + what + ": '" + s + "'");
  }
}

}  // namespace

void write_clinical_csv(const std::string& path,
                        const std::map<std::string, PatientRecord>& records) {
  std::ostringstream out;
  out << "patient_id,site_id,target,age,sex,stage,survival_days,event\n";
  for (const auto& [id, r] : records) {
    out << id << ',' << r.site_id << ',';
    if (r.has_target()) out << fmt_double(r.target);
    out << ',';
    if (!std::isnan(r.age)) out << fmt_double(r.age);
    out << ',' << sex_to_string(r.sex) << ',';
    if (r.stage >= 1) out << r.stage;
    out << ',';
    if (!std::isnan(r.survival_days)) out << fmt_double(r.survival_days);
    out << ',';
    if (r.event >= 0) out << r.event;
    out << '\n';
  }
  write_file_bytes(path, out.str());
}

std::map<std::string, PatientRecord> read_clinical_csv(const std::string& path) {
  const auto rows = read_csv(path);
  if (rows.empty()) throw std::runtime_error("empty clinical table: " + path);
  const std::vector<std::string> expected = {"patient_id", "site_id",       "target",
                                             "age",        "sex",           "stage",
                                             "survival_days", "event"};
  if (rows[0] != expected)
    throw std::runtime_error("clinical table header mismatch in " + path);

  std::map<std::string, PatientRecord> records;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != expected.size())
      throw std::runtime_error("clinical row " + std::to_string(i) + " has wrong column count");
    PatientRecord rec;
    rec.patient_id = r[0];
    rec.site_id = r[1];
    if (rec.patient_id.empty()) throw std::runtime_error("empty patient_id in clinical table");
    if (!r[2].empty()) rec.target = parse_double(r[2], "target");
    if (!r[3].empty()) {
      rec.age = parse_double(r[3], "age");
      if (rec.age < 0) throw std::runtime_error("negative age for " + rec.patient_id);
    }
    rec.sex = sex_from_string(r[4]);
    if (!r[5].empty()) {
      rec.stage = static_cast<int>(parse_double(r[5], "stage"));
      if (rec.stage < 1 || rec.stage > 4)
        throw std::runtime_error("stage out of range for " + rec.patient_id);
    }
    if (!r[6].empty()) {
      rec.survival_days = parse_double(r[6], "survival_days");
      if (rec.survival_days < 0)
        throw std::runtime_error("negative survival_days for " + rec.patient_id);
    }
    if (!r[7].empty()) {
      if (r[7] != "0" && r[7] != "1") throw std::runtime_error("event must be 0 or 1");
      rec.event = r[7] == "1" ? 1 : 0;
    }
    if (!records.emplace(rec.patient_id, rec).second)
      throw std::runtime_error("duplicate patient_id in clinical table: " + rec.patient_id);
  }
  return records;
}

namespace {

// Slide files "<patient>__<slide>.milf" merge into the patient's bag,
// concatenating instances in lexicographic filename order.
std::string patient_of_stem(const std::string& stem) {
  const auto pos = stem.find("__");
  return pos == std::string::npos ? stem : stem.substr(0, pos);
}

void merge_bag(FeatureBag& into, FeatureBag&& more) {
  if (into.features.rows == 0) {
    const std::string id = into.patient_id;
    into = std::move(more);
    into.patient_id = id;
    return;
  }
  if (into.features.cols != more.features.cols)
    throw std::runtime_error("dimension mismatch across slides of " + into.patient_id);
  const bool both_coords = !into.tile_coords.empty() && !more.tile_coords.empty();
  into.features.a.insert(into.features.a.end(), more.features.a.begin(), more.features.a.end());
  into.features.rows += more.features.rows;
  if (both_coords) {
    into.tile_coords.insert(into.tile_coords.end(), more.tile_coords.begin(),
                            more.tile_coords.end());
    std::set<std::pair<int, int>> uniq(into.tile_coords.begin(), into.tile_coords.end());
    if (uniq.size() != into.tile_coords.size()) into.tile_coords.clear();  // collision: drop
  } else {
    into.tile_coords.clear();
  }
}

}  // namespace

Cohort load_cohort(const std::string& features_dir, const std::string& clinical_table,
                   const TargetSpec& target, LoadReport* report) {
  if (!fs::is_directory(features_dir))
    throw std::runtime_error("features directory not found: " + features_dir);

  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(features_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".milf")
      files.push_back(entry.path().string());
  std::sort(files.begin(), files.end());

  Cohort cohort;
  cohort.name = target.name;
  cohort.records = read_clinical_csv(clinical_table);

  LoadReport rep;
  rep.n_feature_files = files.size();
  rep.n_records = cohort.records.size();

  std::map<std::string, FeatureBag> merged;
  for (const std::string& path : files) {
    FeatureBag slide = read_feature_file(path);
    const std::string pid = patient_of_stem(slide.patient_id);
    auto [it, inserted] = merged.try_emplace(pid);
    if (inserted) it->second.patient_id = pid;
    merge_bag(it->second, std::move(slide));
  }
  rep.n_bags = merged.size();

  for (auto& [pid, bag] : merged) {
    auto rec = cohort.records.find(pid);
    if (rec == cohort.records.end() || !rec->second.has_target()) continue;
    bag.site_id = rec->second.site_id;
    cohort.bags.emplace(pid, std::move(bag));
  }
  rep.n_target_overlap = cohort.bags.size();
  for (const auto& [pid, rec] : cohort.records)
    if (rec.has_target() && !cohort.bags.count(pid)) rep.records_without_features.push_back(pid);

  if (report) *report = rep;
  return cohort;
}

double fit_cutoff(const std::map<std::string, double>& values, const TargetSpec& spec,
                  const std::set<std::string>& fit_ids) {
  if (spec.kind == TargetSpec::Kind::fixed_cutoff) {
    if (!spec.cutoff) throw std::runtime_error("fixed_cutoff target without a cutoff");
    return *spec.cutoff;
  }
  if (fit_ids.empty()) throw std::runtime_error("median_split needs non-empty fit set");
  std::vector<double> fit_values;
  fit_values.reserve(fit_ids.size());
  for (const std::string& id : fit_ids) {
    auto it = values.find(id);
    if (it == values.end()) throw std::runtime_error("fit id without a value: " + id);
    fit_values.push_back(it->second);
  }
  const auto [mn, mx] = std::minmax_element(fit_values.begin(), fit_values.end());
  if (*mn == *mx) throw std::runtime_error("degenerate target: all fit values identical");
  return lower_median(fit_values);
}

int binarize_value(double value, const TargetSpec& spec, double cutoff) {
  if (spec.direction == TargetSpec::Direction::positive_if_ge) return value >= cutoff ? 1 : 0;
  return value > cutoff ? 1 : 0;
}

std::map<std::string, int> binarize_target(const std::map<std::string, double>& values,
                                           const TargetSpec& spec,
                                           const std::set<std::string>& fit_ids) {
  const double cutoff = fit_cutoff(values, spec, fit_ids);
  std::map<std::string, int> labels;
  for (const auto& [id, v] : values) labels[id] = binarize_value(v, spec, cutoff);
  return labels;
}

}  // namespace milreg
