#include "theater/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "theater/errors.hpp"

namespace theater {

std::string describe(const ConditionKey& key) {
  return key.model_id + "/" + key.dataset_id + "/" + std::string(to_string(key.bias)) + "/" +
         std::string(to_string(key.mitigation));
}

std::optional<double> ConditionResult::accuracy() const {
  if (n_scored == 0) return std::nullopt;
  return static_cast<double>(n_correct) / static_cast<double>(n_scored);
}

ConditionResult ConditionResult::from_counts(ConditionKey key, std::size_t n_correct,
                                             std::size_t n_scored, std::size_t n_ambiguous) {
  ConditionResult r;
  r.key = std::move(key);
  r.n_correct = n_correct;
  r.n_scored = n_scored;
  r.n_ambiguous = n_ambiguous;
  r.n_total = n_scored + n_ambiguous;
  r.n_planned = r.n_total;
  return r;
}

std::string_view to_string(ModelGroup g) {
  return g == ModelGroup::LRM ? "LRMs Average" : "LLMs Average";
}

namespace {

double require_accuracy(const ConditionResult& r) {
  auto acc = r.accuracy();
  if (!acc) throw UndefinedMetricError("no scored tasks for " + describe(r.key));
  return *acc;
}

void require_same_cell(const ConditionKey& a, const ConditionKey& b) {
  if (a.model_id != b.model_id || a.dataset_id != b.dataset_id) {
    throw KeyMismatchError("conditions differ in model or dataset: " + describe(a) + " vs " +
                           describe(b));
  }
}

}  // namespace

double robustness_rate(const ConditionResult& biased, const ConditionResult& baseline) {
  require_same_cell(biased.key, baseline.key);
  if (baseline.key.bias != BiasKind::NoneBaseline) {
    throw KeyMismatchError("robustness rate needs a baseline condition, got " +
                           describe(baseline.key));
  }
  const double base = require_accuracy(baseline);
  if (base == 0.0) {
    throw UndefinedMetricError("baseline accuracy is 0 for " + describe(baseline.key) +
                               "; robustness rate is undefined");
  }
  return require_accuracy(biased) / base;
}

double delta(const ConditionResult& biased, const ConditionResult& baseline) {
  require_same_cell(biased.key, baseline.key);
  return require_accuracy(biased) - require_accuracy(baseline);
}

double improvement(const ConditionResult& mitigated, const ConditionResult& unmitigated) {
  require_same_cell(mitigated.key, unmitigated.key);
  if (mitigated.key.bias != unmitigated.key.bias) {
    throw KeyMismatchError("improvement compares different biases: " + describe(mitigated.key) +
                           " vs " + describe(unmitigated.key));
  }
  if (unmitigated.key.mitigation != MitigationStrategy::NoMitigation) {
    throw KeyMismatchError("improvement reference must be unmitigated, got " +
                           describe(unmitigated.key));
  }
  return require_accuracy(mitigated) - require_accuracy(unmitigated);
}

std::map<GroupCellKey, GroupCell> group_average(const std::vector<ConditionResult>& results,
                                                const std::vector<ModelMeta>& meta,
                                                ModelGroup group) {
  std::map<std::string, const ModelMeta*> by_id;
  for (const auto& m : meta) by_id[m.model_id] = &m;

  std::set<std::string> group_models;
  for (const auto& m : meta) {
    if (m.is_lrm == (group == ModelGroup::LRM)) group_models.insert(m.model_id);
  }

  std::map<GroupCellKey, std::vector<std::pair<std::string, double>>> cells;
  for (const auto& r : results) {
    auto it = by_id.find(r.key.model_id);
    if (it == by_id.end()) throw KeyMismatchError("no model metadata for '" + r.key.model_id + "'");
    if (!group_models.count(r.key.model_id)) continue;
    auto& cell = cells[{r.key.dataset_id, r.key.bias, r.key.mitigation}];
    if (auto acc = r.accuracy(); acc && r.complete) cell.emplace_back(r.key.model_id, *acc);
  }
  if (group_models.empty() || cells.empty()) {
    throw Error(std::string("empty model group: ") + std::string(to_string(group)));
  }

  std::map<GroupCellKey, GroupCell> out;
  for (auto& [key, members] : cells) {
    if (members.empty()) continue;
    // Sum in model-id order so the mean does not depend on arrival order.
    std::sort(members.begin(), members.end());
    GroupCell cell;
    double sum = 0.0;
    for (const auto& [id, acc] : members) {
      sum += acc;
      cell.members.push_back(id);
    }
    cell.mean = sum / static_cast<double>(members.size());
    for (const auto& id : group_models) {
      if (!std::binary_search(cell.members.begin(), cell.members.end(), id)) {
        cell.missing.push_back(id);
      }
    }
    out.emplace(key, std::move(cell));
  }
  return out;
}

std::string format2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  std::string s(buf);
  if (s == "-0.00") s = "0.00";
  return s;
}

std::string format_signed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.2f", v);
  std::string s(buf);
  if (s == "-0.00") s = "+0.00";
  return s;
}

}  // namespace theater
