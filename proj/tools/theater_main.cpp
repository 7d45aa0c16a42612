// theater: command-line front end for the judge-robustness harness.
//
//   theater tasks   --dataset <path> --kind dpo|mcq [--policy ...] [--seed N]
//   theater inject  --kind wait|meta|reflect|shallow|deep|fakeref --dry-run
//   theater run     --config <file> [--resume] [--mock]
//   theater report  --results <file> --out <dir>
//
// Exit codes: 0 success, 1 runtime error, 2 configuration error,
// 3 incomplete conditions.

#include <unistd.h>

#include <iostream>

#include <CLI11.hpp>

#include "theater/corpus.hpp"
#include "theater/errors.hpp"
#include "theater/injection.hpp"
#include "theater/runner.hpp"

namespace {

constexpr int kExitConfig = 2;

theater::RecordSet load_records(const std::string& path, const std::string& kind,
                                const std::string& dataset_id) {
  if (theater::dataset_kind_from_string(kind) == theater::DatasetKind::Dpo) {
    return theater::load_dpo(path, dataset_id);
  }
  return theater::load_mcq(path, dataset_id);
}

std::string default_dataset_id(const std::string& path) {
  return std::filesystem::path(path).stem().string();
}

int cmd_tasks(const std::string& path, const std::string& kind, const std::string& policy,
              std::uint64_t seed, std::string dataset_id, std::size_t limit) {
  if (dataset_id.empty()) dataset_id = default_dataset_id(path);
  theater::RecordSet records = load_records(path, kind, dataset_id);
  std::visit([&](auto& recs) { if (limit > 0 && recs.size() > limit) recs.resize(limit); }, records);
  const auto tasks = theater::build_task_set(
      records, theater::PositionPolicy{theater::position_mode_from_string(policy)}, seed);
  for (const auto& t : tasks) std::cout << theater::task_to_json_line(t) << '\n';
  std::cerr << tasks.size() << " task(s)\n";
  return 0;
}

int cmd_inject(const std::string& bias, bool dry_run, const std::string& dataset,
               const std::string& dataset_kind, std::size_t index, std::uint64_t seed,
               const std::string& templates_path) {
  using namespace theater;
  const BiasKind kind = bias_kind_from_string(bias);
  TemplateSet templates;
  if (!templates_path.empty()) templates = TemplateSet::load_overrides(templates_path);

  PairwiseTask task;
  if (dataset.empty()) {
    task.task_id = "sample/1";
    task.question = "What color is the sky on a clear day?";
    task.slot1 = "The sky is blue";
    task.slot2 = "The sky is green";
    task.correct_slot = Slot::Slot1;
    task.dataset_id = "sample";
  } else {
    const auto tasks = build_task_set(load_records(dataset, dataset_kind, default_dataset_id(dataset)),
                                      PositionPolicy{PositionMode::CorrectFirst}, seed);
    if (index >= tasks.size()) throw ConfigError("--index is past the end of the dataset");
    task = tasks[index];
  }

  InjectionText text;
  if (is_in_option(kind)) {
    text = render_simple_cue(kind, templates);
  } else if (is_post_option(kind)) {
    text = render_fake_cot_template(kind, task, templates);
  }
  const BiasedTask biased = apply_injection(task, text, kind);

  if (!dry_run) {
    std::cerr << "inject only supports --dry-run previews\n";
    return kExitConfig;
  }
  const bool color = isatty(STDOUT_FILENO);
  const std::string& r = biased.rendering;
  const auto [start, end] = std::pair(biased.injected_span.start, biased.injected_span.end);
  std::cout << "Question: " << task.question << "\n\n";
  std::cout << r.substr(0, start) << (color ? "\x1b[31m" : "[[") << r.substr(start, end - start)
            << (color ? "\x1b[0m" : "]]") << r.substr(end) << "\n\n";
  std::cout << "bias=" << to_string(kind) << " span=[" << start << ", " << end << ")"
            << " incorrect=" << slot_label(task.incorrect_slot()) << "\n";
  return 0;
}

int cmd_run(const std::string& config, bool resume, bool mock, std::size_t threads) {
  using namespace theater;
  const ExperimentMatrix matrix = load_matrix(config, mock);
  const RunManifest manifest = plan(matrix);
  std::cerr << "manifest " << manifest.digest.substr(0, 16) << ": " << manifest.condition_count()
            << " condition(s)\n";
  ExecuteOptions opts;
  opts.resume = resume;
  opts.worker_threads = threads;
  const RunOutcome outcome = execute(manifest, matrix, opts);
  std::vector<ModelMeta> meta;
  for (const auto& m : matrix.models) meta.push_back(m.meta);
  emit_report(outcome.results, meta, matrix.output_dir / "report");
  std::size_t incomplete = 0;
  for (const auto& r : outcome.results) incomplete += !r.complete;
  std::cerr << outcome.evaluations << " evaluation(s), " << outcome.skipped_conditions
            << " condition(s) resumed, " << incomplete << " incomplete\n"
            << "results: " << outcome.results_path.string() << "\n";
  return outcome.exit_code;
}

int cmd_report(const std::string& results_path, const std::string& out_dir, std::string models_path) {
  using namespace theater;
  const auto results = load_results(results_path);
  if (models_path.empty()) {
    const auto sibling = std::filesystem::path(results_path).parent_path() / "models.json";
    if (std::filesystem::exists(sibling)) models_path = sibling.string();
  }
  std::vector<ModelMeta> meta;
  if (!models_path.empty()) meta = load_model_meta(models_path);
  const Report report = emit_report(results, meta, out_dir);
  std::cout << report.text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Measure how reasoning-theater perturbations shift pairwise LLM judges"};
  app.require_subcommand(1);

  std::string dataset, kind, policy = "correct-first", dataset_id;
  std::uint64_t seed = 0;
  std::size_t limit = 0;
  auto* tasks = app.add_subcommand("tasks", "Build pairwise tasks from a dataset file (JSONL to stdout)");
  tasks->add_option("--dataset", dataset, "Line-delimited JSON dataset")->required()->check(CLI::ExistingFile);
  tasks->add_option("--kind", kind, "dpo or mcq")->required()->check(CLI::IsMember({"dpo", "mcq"}));
  tasks->add_option("--policy", policy, "correct-first, correct-second or random")
      ->check(CLI::IsMember({"correct-first", "correct-second", "random"}));
  tasks->add_option("--seed", seed, "Master seed");
  tasks->add_option("--dataset-id", dataset_id, "Dataset id (default: file stem)");
  tasks->add_option("--limit", limit, "Keep the first N records");

  std::string bias, inject_dataset, inject_kind = "dpo", templates;
  bool dry_run = false;
  std::size_t index = 0;
  auto* inject = app.add_subcommand("inject", "Preview a biased rendering");
  inject->add_option("--kind", bias, "Bias kind")
      ->required()
      ->check(CLI::IsMember({"none", "wait", "meta", "reflect", "shallow", "deep", "fakeref"}));
  inject->add_flag("--dry-run", dry_run, "Print the rendering with the injected span highlighted");
  inject->add_option("--dataset", inject_dataset, "Take the task from this dataset")->check(CLI::ExistingFile);
  inject->add_option("--dataset-kind", inject_kind, "dpo or mcq")->check(CLI::IsMember({"dpo", "mcq"}));
  inject->add_option("--index", index, "Task index within --dataset");
  inject->add_option("--seed", seed, "Master seed for --dataset");
  inject->add_option("--templates", templates, "Template override JSON")->check(CLI::ExistingFile);

  std::string config;
  bool resume = false, mock = false;
  std::size_t threads = 0;
  auto* run = app.add_subcommand("run", "Execute an experiment matrix");
  run->add_option("--config", config, "Experiment config (JSON)")->required();
  run->add_flag("--resume", resume, "Skip conditions already recorded for this manifest");
  run->add_flag("--mock", mock, "Replace every endpoint with the mock judge");
  run->add_option("--threads", threads, "Worker threads (default: sum of endpoint parallelism)");

  std::string results, out, models;
  auto* report = app.add_subcommand("report", "Render report tables from a results file");
  report->add_option("--results", results, "results.jsonl")->required()->check(CLI::ExistingFile);
  report->add_option("--out", out, "Output directory")->required();
  report->add_option("--models", models, "Model metadata JSON (default: models.json beside results)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*tasks) return cmd_tasks(dataset, kind, policy, seed, dataset_id, limit);
    if (*inject) return cmd_inject(bias, dry_run, inject_dataset, inject_kind, index, seed, templates);
    if (*run) return cmd_run(config, resume, mock, threads);
    if (*report) return cmd_report(results, out, models);
  } catch (const theater::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const theater::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
