#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "theater/client.hpp"
#include "theater/corpus.hpp"
#include "theater/injection.hpp"
#include "theater/metrics.hpp"
#include "theater/protocol.hpp"

namespace theater {

inline constexpr const char* kToolVersion = "0.1.0";

struct DatasetSpec {
  std::string id;
  DatasetKind kind = DatasetKind::Dpo;
  std::filesystem::path path;
};

// A judge under test: either a live endpoint or the mock judge.
struct ModelSpec {
  ModelMeta meta;
  std::optional<EndpointConfig> endpoint;
  std::optional<MockJudgeParams> mock;
};

struct FakeCotSettings {
  bool generated = false;                 // false: static templates
  std::optional<EndpointConfig> generator;
  GenerationOptions generation;
  bool fallback_to_template = true;       // on GenerationRejectedError
};

struct ExperimentMatrix {
  std::vector<ModelSpec> models;
  std::vector<DatasetSpec> datasets;
  std::vector<BiasKind> biases;  // the baseline is always added by plan()
  std::vector<MitigationStrategy> mitigations = {MitigationStrategy::NoMitigation};
  PositionPolicy position_policy;
  std::uint64_t master_seed = 0;
  std::size_t sample_limit = 100;
  double min_scored_fraction = 0.9;

  TemplateSet templates;
  PromptConfig prompt;
  ThinkDelimiters think;
  FakeCotSettings fake_cot;

  std::filesystem::path cache_dir = "cache";
  std::filesystem::path output_dir = "out";
};

// Reads a JSON config; relative paths resolve against the config's folder.
// With force_mock, every model without mock parameters gets the default
// mock judge and endpoints are ignored.
ExperimentMatrix load_matrix(const std::filesystem::path& config_path, bool force_mock = false);

struct PlannedCondition {
  ConditionKey key;
  std::size_t dataset_index = 0;
};

struct RunManifest {
  std::string digest;
  std::string created_at;
  std::string tool_version = kToolVersion;
  std::vector<PlannedCondition> conditions;
  std::map<std::string, std::vector<PairwiseTask>> tasks;  // by dataset id
  std::size_t condition_count() const { return conditions.size(); }
};

// Validates the matrix and enumerates models x datasets x mitigations x
// (baseline + biases). The digest covers every input that affects results.
RunManifest plan(const ExperimentMatrix& matrix);
RunManifest plan(const ExperimentMatrix& matrix,
                 std::map<std::string, std::vector<PairwiseTask>> tasks_by_dataset);

void write_manifest(const RunManifest& manifest, const std::filesystem::path& path);

enum class TaskStatus { Scored, Ambiguous, Failed };
std::string_view to_string(TaskStatus s);

struct TaskRecord {
  std::size_t condition = 0;
  std::string task_id;
  TaskStatus status = TaskStatus::Failed;
  std::optional<Verdict> verdict;
  std::optional<ExtractionRule> rule;
  int y = 0;
  std::string raw;
  std::string error;
  InjectionSource injection_source = InjectionSource::StaticTemplate;
};

struct ExecuteOptions {
  bool resume = false;
  std::size_t worker_threads = 0;  // 0: max endpoint parallelism (1 for mock-only)
};

struct RunOutcome {
  std::vector<ConditionResult> results;
  std::vector<TaskRecord> records;
  std::size_t evaluations = 0;     // judge calls made in this invocation (mock or network)
  std::size_t skipped_conditions = 0;
  std::filesystem::path results_path;
  int exit_code = 0;               // 0 ok, 3 incomplete conditions
};

// Runs every planned condition and writes, under matrix.output_dir:
//   manifest.jsonl, results.jsonl, raw.jsonl, models.json
RunOutcome execute(const RunManifest& manifest, const ExperimentMatrix& matrix,
                   const ExecuteOptions& options = {});

std::string result_to_json_line(const ConditionResult& r, const std::string& manifest_digest);
std::vector<ConditionResult> load_results(const std::filesystem::path& path);
std::vector<ModelMeta> load_model_meta(const std::filesystem::path& path);
void write_model_meta(const std::vector<ModelMeta>& meta, const std::filesystem::path& path);

// --- reporting ------------------------------------------------------------

struct ReportCell {
  std::string entity;  // model id or group label
  std::string dataset;
  BiasKind bias = BiasKind::NoneBaseline;
  MitigationStrategy mitigation = MitigationStrategy::NoMitigation;
  std::string metric;  // accuracy | ambiguous | delta | robustness_rate | improvement | group_accuracy | group_improvement
  std::optional<double> value;
  std::string note;    // why value is absent, or group coverage
};

struct Report {
  std::vector<ReportCell> cells;
  std::string text;  // human-readable tables
};

Report build_report(const std::vector<ConditionResult>& results, const std::vector<ModelMeta>& meta);

// Writes report.txt, report.json, report.csv (wide) and report_long.csv.
Report emit_report(const std::vector<ConditionResult>& results, const std::vector<ModelMeta>& meta,
                   const std::filesystem::path& out_dir);

}  // namespace theater
