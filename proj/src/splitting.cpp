#include "milreg/splitting.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "milreg/common.hpp"

namespace milreg {

namespace {

struct SiteInfo {
  std::string site_id;
  std::vector<std::string> patients;
  std::size_t n_pos = 0;
};

struct Partition {
  std::vector<int> group_of;  // per site index
  int k;
};

double group_objective(double pos, double size, double global_rate, double target_size,
                       double n_total) {
  const double rate_term = size > 0 ? std::abs(pos / size - global_rate) : 0.0;
  return rate_term + std::abs(size - target_size) / n_total;
}

double total_objective(const std::vector<SiteInfo>& sites, const std::vector<int>& group_of,
                       int k, double global_rate, double n_total) {
  std::vector<double> pos(k, 0.0), size(k, 0.0);
  for (std::size_t s = 0; s < sites.size(); ++s) {
    if (group_of[s] < 0) continue;
    pos[group_of[s]] += static_cast<double>(sites[s].n_pos);
    size[group_of[s]] += static_cast<double>(sites[s].patients.size());
  }
  const double target = n_total / k;
  double total = 0.0;
  for (int g = 0; g < k; ++g) {
    if (size[g] == 0) {
      total += target / n_total;  // empty-group penalty: its full size deficit
      continue;
    }
    total += group_objective(pos[g], size[g], global_rate, target, n_total);
  }
  return total;
}

double max_rate_deviation(const std::vector<SiteInfo>& sites, const std::vector<int>& group_of,
                          int k, double global_rate) {
  std::vector<double> pos(k, 0.0), size(k, 0.0);
  for (std::size_t s = 0; s < sites.size(); ++s) {
    pos[group_of[s]] += static_cast<double>(sites[s].n_pos);
    size[group_of[s]] += static_cast<double>(sites[s].patients.size());
  }
  double dev = 0.0;
  for (int g = 0; g < k; ++g)
    dev = std::max(dev, size[g] > 0 ? std::abs(pos[g] / size[g] - global_rate) : global_rate);
  return dev;
}

// number of partitions of n labeled sites into exactly k unlabeled groups
double stirling2(int n, int k) {
  std::vector<std::vector<double>> s(n + 1, std::vector<double>(k + 1, 0.0));
  s[0][0] = 1.0;
  for (int i = 1; i <= n; ++i)
    for (int j = 1; j <= std::min(i, k); ++j) s[i][j] = j * s[i - 1][j] + s[i - 1][j - 1];
  return s[n][k];
}

// Exhaustive partition search, used when the search space is small. Within
// the class-rate tolerance the spec objective breaks ties; outside it the
// worst deviation is minimized first.
struct PartitionKey {
  bool feasible;
  double dev, objective;
  bool operator<(const PartitionKey& o) const {
    if (feasible != o.feasible) return feasible;
    if (!feasible && dev != o.dev) return dev < o.dev;
    return objective < o.objective - 1e-15;
  }
};

void exact_partition(const std::vector<SiteInfo>& sites, int k, double tol, double global_rate,
                     double n_total, std::vector<int>& best) {
  std::vector<int> assign(sites.size(), -1);
  PartitionKey best_key{false, 1e300, 1e300};
  std::function<void(std::size_t, int)> recurse = [&](std::size_t i, int used) {
    if (sites.size() - i < static_cast<std::size_t>(k - used)) return;  // cannot fill all groups
    if (i == assign.size()) {
      if (used != k) return;
      const double dev = max_rate_deviation(sites, assign, k, global_rate);
      const PartitionKey key{dev <= tol, dev,
                             total_objective(sites, assign, k, global_rate, n_total)};
      if (key < best_key) {
        best_key = key;
        best = assign;
      }
      return;
    }
    for (int g = 0; g < std::min(used + 1, k); ++g) {
      assign[i] = g;
      recurse(i + 1, std::max(used, g + 1));
    }
    assign[i] = -1;
  };
  recurse(0, 0);
}

// Deterministic move/swap descent on `cost`; keeps every group non-empty.
template <typename CostFn>
void refine(std::vector<int>& group_of, const std::vector<SiteInfo>& sites, int k, CostFn cost) {
  std::vector<int> count(k, 0);
  for (int g : group_of) ++count[g];
  bool improved = true;
  int pass = 0;
  while (improved && pass++ < 200) {
    improved = false;
    double best = cost(group_of);
    for (std::size_t s = 0; s < sites.size(); ++s) {
      const int from = group_of[s];
      if (count[from] == 1) continue;
      for (int g = 0; g < k; ++g) {
        if (g == from) continue;
        group_of[s] = g;
        const double c = cost(group_of);
        if (c < best - 1e-12) {
          best = c;
          --count[from];
          ++count[g];
          improved = true;
          break;
        }
        group_of[s] = from;
      }
      if (improved) break;
    }
    if (improved) continue;
    for (std::size_t s1 = 0; s1 < sites.size() && !improved; ++s1) {
      for (std::size_t s2 = s1 + 1; s2 < sites.size() && !improved; ++s2) {
        if (group_of[s1] == group_of[s2]) continue;
        std::swap(group_of[s1], group_of[s2]);
        if (cost(group_of) < best - 1e-12)
          improved = true;
        else
          std::swap(group_of[s1], group_of[s2]);
      }
    }
  }
}

}  // namespace

FoldPlan site_aware_folds(const Cohort& cohort, const std::map<std::string, int>& labels, int k,
                          double val_frac, std::uint64_t seed, double tol) {
  if (k < 2) throw std::invalid_argument("site_aware_folds: k must be >= 2");
  if (!(val_frac > 0.0 && val_frac < 0.5))
    throw std::invalid_argument("site_aware_folds: val_frac must be in (0, 0.5)");

  const std::vector<std::string> ids = cohort.ids();
  std::map<std::string, SiteInfo> by_site;
  std::size_t n_pos_total = 0;
  for (const std::string& id : ids) {
    auto lab = labels.find(id);
    if (lab == labels.end()) throw std::runtime_error("patient without a label: " + id);
    SiteInfo& info = by_site[cohort.record(id).site_id];
    info.site_id = cohort.record(id).site_id;
    info.patients.push_back(id);
    if (lab->second) {
      ++info.n_pos;
      ++n_pos_total;
    }
  }
  if (by_site.size() < static_cast<std::size_t>(k))
    throw std::runtime_error("fewer sites than folds: " + std::to_string(by_site.size()) +
                             " < " + std::to_string(k));

  const double n_total = static_cast<double>(ids.size());
  const double global_rate = static_cast<double>(n_pos_total) / n_total;

  std::vector<SiteInfo> sites;
  sites.reserve(by_site.size());
  for (auto& [sid, info] : by_site) {
    if (static_cast<double>(info.patients.size()) > (1.0 - 1.0 / k + tol) * n_total)
      throw std::runtime_error("site dominates: " + sid);
    sites.push_back(std::move(info));
  }

  Rng rng(seed);
  rng.shuffle(sites);
  std::stable_sort(sites.begin(), sites.end(), [](const SiteInfo& a, const SiteInfo& b) {
    return a.patients.size() > b.patients.size();
  });

  std::vector<int> group_of(sites.size(), -1);
  if (stirling2(static_cast<int>(sites.size()), k) <= 300000.0) {
    // small instance: the partition space is enumerable outright
    exact_partition(sites, k, tol, global_rate, n_total, group_of);
  } else {
    // greedy: place each site where the total objective ends up lowest
    for (std::size_t s = 0; s < sites.size(); ++s) {
      int best_g = 0;
      double best_cost = std::numeric_limits<double>::infinity();
      for (int g = 0; g < k; ++g) {
        group_of[s] = g;
        const double c = total_objective(sites, group_of, k, global_rate, n_total);
        if (c < best_cost - 1e-15) {
          best_cost = c;
          best_g = g;
        }
      }
      group_of[s] = best_g;
    }
    refine(group_of, sites, k, [&](const std::vector<int>& g) {
      return total_objective(sites, g, k, global_rate, n_total);
    });
    // if the class-rate tolerance is still missed, descend on the worst
    // deviation directly (objective as tiebreaker)
    if (max_rate_deviation(sites, group_of, k, global_rate) > tol) {
      refine(group_of, sites, k, [&](const std::vector<int>& g) {
        return max_rate_deviation(sites, g, k, global_rate) * 1e3 +
               total_objective(sites, g, k, global_rate, n_total);
      });
    }
  }

  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.folds.resize(k);
  plan.test_rate_deviation.resize(k, 0.0);

  for (int f = 0; f < k; ++f) {
    std::vector<std::string> test, rest;
    for (std::size_t s = 0; s < sites.size(); ++s) {
      auto& dst = group_of[s] == f ? test : rest;
      dst.insert(dst.end(), sites[s].patients.begin(), sites[s].patients.end());
    }
    std::sort(test.begin(), test.end());
    std::sort(rest.begin(), rest.end());

    double test_pos = 0.0;
    for (const std::string& id : test) test_pos += labels.at(id);
    plan.test_rate_deviation[f] =
        test.empty() ? global_rate
                     : std::abs(test_pos / static_cast<double>(test.size()) - global_rate);

    // stratified val slice of the non-test patients
    std::vector<std::string> pos, neg;
    for (const std::string& id : rest) (labels.at(id) ? pos : neg).push_back(id);
    FoldAssignment& fold = plan.folds[f];
    fold.test_ids = std::move(test);
    for (auto* cls : {&pos, &neg}) {
      rng.shuffle(*cls);
      std::size_t n_val = static_cast<std::size_t>(std::llround(val_frac * double(cls->size())));
      if (n_val >= cls->size() && !cls->empty()) n_val = cls->size() - 1;  // keep one in train
      for (std::size_t i = 0; i < cls->size(); ++i)
        (i < n_val ? fold.val_ids : fold.train_ids).push_back((*cls)[i]);
    }
    std::sort(fold.train_ids.begin(), fold.train_ids.end());
    std::sort(fold.val_ids.begin(), fold.val_ids.end());
  }
  return plan;
}

FoldValidation validate_folds(const FoldPlan& plan, const Cohort& cohort,
                              const std::map<std::string, int>& labels, double tol) {
  FoldValidation v;
  auto fail = [&](const std::string& msg) {
    v.ok = false;
    v.failures.push_back(msg);
  };

  const std::vector<std::string> ids = cohort.ids();
  const std::set<std::string> all(ids.begin(), ids.end());
  double global_pos = 0.0;
  for (const std::string& id : ids) global_pos += labels.at(id);
  const double global_rate = global_pos / static_cast<double>(ids.size());

  std::map<std::string, int> test_count;
  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    const FoldAssignment& fold = plan.folds[f];
    std::set<std::string> seen;
    std::size_t total = 0;
    for (const auto* part : {&fold.train_ids, &fold.val_ids, &fold.test_ids}) {
      total += part->size();
      seen.insert(part->begin(), part->end());
    }
    if (seen.size() != total) fail("fold " + std::to_string(f) + ": overlapping roles");
    if (seen != all) fail("fold " + std::to_string(f) + ": does not cover the cohort");

    std::set<std::string> test_sites, nontest_sites;
    for (const std::string& id : fold.test_ids) {
      test_sites.insert(cohort.record(id).site_id);
      ++test_count[id];
    }
    for (const std::string& id : fold.train_ids) nontest_sites.insert(cohort.record(id).site_id);
    for (const std::string& id : fold.val_ids) nontest_sites.insert(cohort.record(id).site_id);
    for (const std::string& s : test_sites)
      if (nontest_sites.count(s)) fail("site leakage: " + s + " in fold " + std::to_string(f));

    if (!fold.test_ids.empty()) {
      double pos = 0.0;
      for (const std::string& id : fold.test_ids) pos += labels.at(id);
      const double dev = std::abs(pos / double(fold.test_ids.size()) - global_rate);
      if (dev > tol)
        fail("fold " + std::to_string(f) + ": test class-rate deviation " + fmt_double(dev) +
             " exceeds tol " + fmt_double(tol));
    }
  }
  for (const std::string& id : ids)
    if (test_count[id] != 1)
      fail("patient " + id + " appears in " + std::to_string(test_count[id]) + " test sets");
  return v;
}

void write_fold_plan_csv(const std::string& path, const FoldPlan& plan) {
  std::ostringstream out;
  out << "patient_id,fold_index,role\n";
  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    for (const std::string& id : plan.folds[f].train_ids)
      out << id << ',' << f << ",train\n";
    for (const std::string& id : plan.folds[f].val_ids) out << id << ',' << f << ",val\n";
    for (const std::string& id : plan.folds[f].test_ids) out << id << ',' << f << ",test\n";
  }
  write_file_bytes(path, out.str());
}

FoldPlan read_fold_plan_csv(const std::string& path) {
  const auto rows = read_csv(path);
  if (rows.empty() || rows[0] != std::vector<std::string>{"patient_id", "fold_index", "role"})
    throw std::runtime_error("fold plan header mismatch in " + path);
  FoldPlan plan;
  plan.folds.clear();
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != 3) throw std::runtime_error("bad fold plan row in " + path);
    const std::size_t f = std::stoul(r[1]);
    if (plan.folds.size() <= f) plan.folds.resize(f + 1);
    if (r[2] == "train")
      plan.folds[f].train_ids.push_back(r[0]);
    else if (r[2] == "val")
      plan.folds[f].val_ids.push_back(r[0]);
    else if (r[2] == "test")
      plan.folds[f].test_ids.push_back(r[0]);
    else
      throw std::runtime_error("unknown fold role: " + r[2]);
  }
  plan.k = static_cast<int>(plan.folds.size());
  return plan;
}

}  // namespace milreg
