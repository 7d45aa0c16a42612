#pragma once

#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "theater/injection.hpp"
#include "theater/protocol.hpp"

namespace theater {

struct ConditionKey {
  std::string model_id;
  std::string dataset_id;
  BiasKind bias = BiasKind::NoneBaseline;
  MitigationStrategy mitigation = MitigationStrategy::NoMitigation;

  auto tie() const { return std::tie(model_id, dataset_id, bias, mitigation); }
  bool operator==(const ConditionKey& o) const { return tie() == o.tie(); }
  bool operator<(const ConditionKey& o) const { return tie() < o.tie(); }
};

std::string describe(const ConditionKey& key);

// Counts for one condition. n_total counts tasks that produced a judge
// reply; transport failures are n_failed and sit outside n_total.
struct ConditionResult {
  ConditionKey key;
  std::size_t n_planned = 0;
  std::size_t n_total = 0;
  std::size_t n_scored = 0;
  std::size_t n_correct = 0;
  std::size_t n_ambiguous = 0;
  std::size_t n_failed = 0;
  bool complete = true;

  // n_correct / n_scored; nullopt when nothing was scored.
  std::optional<double> accuracy() const;

  static ConditionResult from_counts(ConditionKey key, std::size_t n_correct, std::size_t n_scored,
                                     std::size_t n_ambiguous = 0);
};

struct ModelMeta {
  std::string model_id;
  std::string family;
  bool is_lrm = false;
  bool open_source = false;
};

enum class ModelGroup { LRM, LLM };
std::string_view to_string(ModelGroup g);  // "LRMs Average" / "LLMs Average"

// biased.accuracy / baseline.accuracy. Values above 1 are allowed.
double robustness_rate(const ConditionResult& biased, const ConditionResult& baseline);

// biased.accuracy - baseline.accuracy (same model and dataset).
double delta(const ConditionResult& biased, const ConditionResult& baseline);

// mitigated.accuracy - unmitigated.accuracy (same model, dataset and bias).
double improvement(const ConditionResult& mitigated, const ConditionResult& unmitigated);

struct GroupCellKey {
  std::string dataset_id;
  BiasKind bias;
  MitigationStrategy mitigation;
  auto tie() const { return std::tie(dataset_id, bias, mitigation); }
  bool operator<(const GroupCellKey& o) const { return tie() < o.tie(); }
  bool operator==(const GroupCellKey& o) const { return tie() == o.tie(); }
};

struct GroupCell {
  double mean = 0.0;
  std::vector<std::string> members;  // models that contributed
  std::vector<std::string> missing;  // group models without a scored result for this cell
};

// Unweighted mean of per-model accuracies for every (dataset, bias,
// mitigation) present in `results` among the group's models.
std::map<GroupCellKey, GroupCell> group_average(const std::vector<ConditionResult>& results,
                                                const std::vector<ModelMeta>& meta,
                                                ModelGroup group);

// Fixed two-decimal rendering used in reports: "0.42"; signed variant "+0.12"
// / "-0.10" and never "-0.00".
std::string format2(double v);
std::string format_signed2(double v);

}  // namespace theater
