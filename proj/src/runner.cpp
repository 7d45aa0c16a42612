#include "theater/runner.hpp"

#include <algorithm>
#include <atomic>
#include <ctime>
#include <fstream>
#include <functional>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "theater/errors.hpp"
#include "theater/random.hpp"

namespace theater {

using json = nlohmann::json;

namespace {

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config key '") + key + "' has the wrong type");
  }
}

EndpointConfig parse_endpoint(const json& j) {
  if (!j.is_object()) throw ConfigError("endpoint must be an object");
  EndpointConfig e;
  e.base_url = get_or<std::string>(j, "base_url", "");
  e.model_name = get_or<std::string>(j, "model", "");
  e.temperature = get_or<double>(j, "temperature", 0.0);
  e.max_tokens = get_or<int>(j, "max_tokens", 1024);
  e.api_key_env = get_or<std::string>(j, "api_key_env", "");
  e.parallelism = get_or<int>(j, "parallelism", 4);
  e.requests_per_second = get_or<double>(j, "requests_per_second", 0.0);
  e.timeout_s = get_or<double>(j, "timeout_s", 120.0);
  if (auto r = j.find("retry"); r != j.end()) {
    e.retry.max_attempts = get_or<int>(*r, "max_attempts", e.retry.max_attempts);
    e.retry.initial_backoff_ms = get_or<double>(*r, "initial_backoff_ms", e.retry.initial_backoff_ms);
    e.retry.multiplier = get_or<double>(*r, "multiplier", e.retry.multiplier);
    e.retry.max_backoff_ms = get_or<double>(*r, "max_backoff_ms", e.retry.max_backoff_ms);
  }
  e.validate();
  return e;
}

MockJudgeParams parse_mock(const json& j, std::uint64_t default_seed) {
  MockJudgeParams p;
  p.baseline_accuracy = get_or<double>(j, "baseline_accuracy", 0.8);
  p.seed = get_or<std::uint64_t>(j, "seed", default_seed);
  auto s = j.find("susceptibility");
  if (s == j.end() || s->is_number()) {
    const double all = s == j.end() ? 0.5 : s->get<double>();
    for (BiasKind k : kAllBiases) p.susceptibility[k] = all;
  } else if (s->is_object()) {
    for (const auto& [name, v] : s->items()) p.susceptibility[bias_kind_from_string(name)] = v.get<double>();
  } else {
    throw ConfigError("mock.susceptibility must be a number or an object");
  }
  p.validate();
  return p;
}

json endpoint_digest_json(const EndpointConfig& e) {
  return {{"base_url", e.base_url}, {"model", e.model_name}, {"temperature", e.temperature},
          {"max_tokens", e.max_tokens}};
}

json mock_json(const MockJudgeParams& p) {
  json s = json::object();
  for (const auto& [k, v] : p.susceptibility) s[std::string(to_string(k))] = v;
  return {{"baseline_accuracy", p.baseline_accuracy}, {"susceptibility", s}, {"seed", p.seed}};
}

std::string utc_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<BiasKind> canonical_biases(const std::vector<BiasKind>& requested) {
  std::vector<BiasKind> out = {BiasKind::NoneBaseline};
  for (BiasKind k : kAllBiases) {
    if (std::find(requested.begin(), requested.end(), k) != requested.end()) out.push_back(k);
  }
  return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
}

}  // namespace

ExperimentMatrix load_matrix(const std::filesystem::path& config_path, bool force_mock) {
  std::ifstream in(config_path);
  if (!in) throw ConfigError("cannot open config file " + config_path.string());
  json cfg;
  try {
    cfg = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!cfg.is_object()) throw ConfigError("config must be a JSON object");
  const auto base = config_path.has_parent_path() ? config_path.parent_path() : std::filesystem::path(".");
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
  };

  ExperimentMatrix m;
  m.master_seed = get_or<std::uint64_t>(cfg, "master_seed", 0);
  m.sample_limit = get_or<std::size_t>(cfg, "sample_limit", 100);
  m.min_scored_fraction = get_or<double>(cfg, "min_scored_fraction", 0.9);
  m.position_policy.mode =
      position_mode_from_string(get_or<std::string>(cfg, "position_policy", "correct-first"));
  m.cache_dir = resolve(get_or<std::string>(cfg, "cache_dir", "cache"));
  m.output_dir = resolve(get_or<std::string>(cfg, "output_dir", "out"));

  for (const auto& d : cfg.value("datasets", json::array())) {
    DatasetSpec ds;
    ds.id = get_or<std::string>(d, "id", "");
    ds.kind = dataset_kind_from_string(get_or<std::string>(d, "kind", ""));
    ds.path = resolve(get_or<std::string>(d, "path", ""));
    if (ds.id.empty()) throw ConfigError("dataset without id");
    m.datasets.push_back(std::move(ds));
  }

  for (const auto& jm : cfg.value("models", json::array())) {
    ModelSpec ms;
    ms.meta.model_id = get_or<std::string>(jm, "id", "");
    if (ms.meta.model_id.empty()) throw ConfigError("model without id");
    ms.meta.family = get_or<std::string>(jm, "family", "");
    ms.meta.is_lrm = get_or<bool>(jm, "is_lrm", false);
    ms.meta.open_source = get_or<bool>(jm, "open_source", false);
    const std::uint64_t mock_seed = derive_seed(m.master_seed, ms.meta.model_id);
    if (auto mk = jm.find("mock"); mk != jm.end()) {
      ms.mock = parse_mock(*mk, mock_seed);
    } else if (force_mock) {
      ms.mock = MockJudgeParams::uniform(0.8, 0.5, mock_seed);
    }
    if (!force_mock && !ms.mock) {
      auto ep = jm.find("endpoint");
      if (ep == jm.end()) throw ConfigError("model '" + ms.meta.model_id + "' has neither endpoint nor mock");
      ms.endpoint = parse_endpoint(*ep);
    }
    m.models.push_back(std::move(ms));
  }

  if (auto b = cfg.find("biases"); b != cfg.end()) {
    if (b->is_string() && b->get<std::string>() == "all") {
      m.biases.assign(kAllBiases.begin(), kAllBiases.end());
    } else {
      for (const auto& name : *b) {
        const BiasKind k = bias_kind_from_string(name.get<std::string>());
        if (k != BiasKind::NoneBaseline) m.biases.push_back(k);
      }
    }
  } else {
    m.biases.assign(kAllBiases.begin(), kAllBiases.end());
  }

  if (auto mi = cfg.find("mitigations"); mi != cfg.end()) {
    m.mitigations.clear();
    for (const auto& name : *mi) m.mitigations.push_back(mitigation_from_string(name.get<std::string>()));
  }

  if (auto t = cfg.find("templates"); t != cfg.end()) {
    if (t->is_string()) {
      m.templates = TemplateSet::load_overrides(resolve(t->get<std::string>()));
    } else {
      m.templates = TemplateSet::parse_overrides(t->dump());
    }
  }

  if (auto ins = cfg.find("instruction"); ins != cfg.end()) {
    auto& I = m.prompt.instruction;
    if (ins->contains("system_text")) I.system_text = get_or<std::string>(*ins, "system_text", "");
    I.user_template = get_or<std::string>(*ins, "user_template", I.user_template);
    I.answer_directive = get_or<std::string>(*ins, "answer_directive", I.answer_directive);
  }
  if (auto mit = cfg.find("mitigation"); mit != cfg.end()) {
    m.prompt.mitigations.targeted = get_or<std::string>(*mit, "targeted", m.prompt.mitigations.targeted);
    m.prompt.mitigations.self_reflection =
        get_or<std::string>(*mit, "self_reflection", m.prompt.mitigations.self_reflection);
  }
  if (auto th = cfg.find("think_delimiters"); th != cfg.end()) {
    m.think.open = get_or<std::string>(*th, "open", m.think.open);
    m.think.close = get_or<std::string>(*th, "close", m.think.close);
  }
  if (auto fc = cfg.find("fake_cot"); fc != cfg.end()) {
    const std::string mode = get_or<std::string>(*fc, "mode", "template");
    if (mode != "template" && mode != "generated") {
      throw ConfigError("fake_cot.mode must be 'template' or 'generated'");
    }
    m.fake_cot.generated = mode == "generated";
    m.fake_cot.generation.max_attempts = get_or<int>(*fc, "max_attempts", 3);
    m.fake_cot.generation.temperature = get_or<double>(*fc, "temperature", 0.7);
    m.fake_cot.fallback_to_template = get_or<bool>(*fc, "fallback_to_template", true);
    if (auto g = fc->find("generator"); g != fc->end() && !force_mock) {
      m.fake_cot.generator = parse_endpoint(*g);
    }
    if (m.fake_cot.generated && !m.fake_cot.generator && !force_mock) {
      throw ConfigError("fake_cot.mode 'generated' needs a generator endpoint");
    }
    if (force_mock) m.fake_cot.generated = false;
  }
  return m;
}

RunManifest plan(const ExperimentMatrix& matrix) {
  if (matrix.models.empty()) throw ConfigError("experiment matrix has no models");
  if (matrix.datasets.empty()) throw ConfigError("experiment matrix has no datasets");
  std::map<std::string, std::vector<PairwiseTask>> tasks;
  for (const auto& ds : matrix.datasets) {
    RecordSet records;
    if (ds.kind == DatasetKind::Dpo) {
      auto recs = load_dpo(ds.path, ds.id);
      if (recs.size() > matrix.sample_limit) recs.resize(matrix.sample_limit);
      records = std::move(recs);
    } else {
      auto recs = load_mcq(ds.path, ds.id);
      if (recs.size() > matrix.sample_limit) recs.resize(matrix.sample_limit);
      records = std::move(recs);
    }
    tasks[ds.id] = build_task_set(records, matrix.position_policy, matrix.master_seed);
  }
  return plan(matrix, std::move(tasks));
}

RunManifest plan(const ExperimentMatrix& matrix,
                 std::map<std::string, std::vector<PairwiseTask>> tasks_by_dataset) {
  if (matrix.models.empty()) throw ConfigError("experiment matrix has no models");
  if (matrix.datasets.empty()) throw ConfigError("experiment matrix has no datasets");
  if (matrix.mitigations.empty()) throw ConfigError("experiment matrix has no mitigations");
  if (!(matrix.min_scored_fraction >= 0.0 && matrix.min_scored_fraction <= 1.0)) {
    throw ConfigError("min_scored_fraction must be in [0, 1]");
  }

  std::set<std::string> model_ids, dataset_ids;
  for (const auto& m : matrix.models) {
    if (!model_ids.insert(m.meta.model_id).second) throw ConfigError("duplicate model id " + m.meta.model_id);
    if (!m.endpoint && !m.mock) throw ConfigError("model " + m.meta.model_id + " has no judge");
    if (m.mock) m.mock->validate();
  }
  for (const auto& d : matrix.datasets) {
    if (!dataset_ids.insert(d.id).second) throw ConfigError("duplicate dataset id " + d.id);
    auto it = tasks_by_dataset.find(d.id);
    if (it == tasks_by_dataset.end() || it->second.empty()) throw EmptyDatasetError();
  }

  const auto biases = canonical_biases(matrix.biases);
  const bool any_in_option =
      std::any_of(biases.begin(), biases.end(), [](BiasKind k) { return is_in_option(k); });
  if (any_in_option && matrix.position_policy.mode != PositionMode::CorrectFirst) {
    throw ConfigError("In-Option cues must precede the incorrect answer; use position_policy "
                      "'correct-first' or drop wait/meta/reflect from the bias list");
  }

  std::vector<MitigationStrategy> mitigations;
  for (MitigationStrategy s : kAllMitigations) {
    if (std::find(matrix.mitigations.begin(), matrix.mitigations.end(), s) != matrix.mitigations.end()) {
      mitigations.push_back(s);
    }
  }

  RunManifest manifest;
  manifest.created_at = utc_now();
  manifest.tasks = std::move(tasks_by_dataset);
  for (const auto& model : matrix.models) {
    for (std::size_t di = 0; di < matrix.datasets.size(); ++di) {
      for (MitigationStrategy mit : mitigations) {
        for (BiasKind bias : biases) {
          manifest.conditions.push_back(
              {ConditionKey{model.meta.model_id, matrix.datasets[di].id, bias, mit}, di});
        }
      }
    }
  }

  json d;
  d["tool_version"] = kToolVersion;
  d["master_seed"] = matrix.master_seed;
  d["sample_limit"] = matrix.sample_limit;
  d["min_scored_fraction"] = matrix.min_scored_fraction;
  d["position_policy"] = to_string(matrix.position_policy.mode);
  for (const auto& m : matrix.models) {
    json jm = {{"id", m.meta.model_id}, {"is_lrm", m.meta.is_lrm}};
    if (m.endpoint) jm["endpoint"] = endpoint_digest_json(*m.endpoint);
    if (m.mock) jm["mock"] = mock_json(*m.mock);
    d["models"].push_back(jm);
  }
  for (BiasKind b : biases) d["biases"].push_back(to_string(b));
  for (MitigationStrategy s : mitigations) d["mitigations"].push_back(to_string(s));
  for (BiasKind b : kAllBiases) d["templates"][std::string(to_string(b))] = matrix.templates.for_kind(b);
  d["prompt"] = {{"system_text", matrix.prompt.instruction.system_text.value_or("")},
                 {"user_template", matrix.prompt.instruction.user_template},
                 {"answer_directive", matrix.prompt.instruction.answer_directive},
                 {"targeted", matrix.prompt.mitigations.targeted},
                 {"self_reflection", matrix.prompt.mitigations.self_reflection}};
  d["think"] = {matrix.think.open, matrix.think.close};
  d["fake_cot"] = {{"generated", matrix.fake_cot.generated},
                   {"max_attempts", matrix.fake_cot.generation.max_attempts},
                   {"temperature", matrix.fake_cot.generation.temperature},
                   {"fallback", matrix.fake_cot.fallback_to_template}};
  if (matrix.fake_cot.generator) d["fake_cot"]["generator"] = endpoint_digest_json(*matrix.fake_cot.generator);
  for (const auto& ds : matrix.datasets) {
    std::string lines;
    for (const auto& t : manifest.tasks.at(ds.id)) lines += task_to_json_line(t) + "\n";
    d["datasets"].push_back({{"id", ds.id}, {"tasks_sha256", sha256_hex(lines)}});
  }
  manifest.digest = sha256_hex(d.dump());
  return manifest;
}

void write_manifest(const RunManifest& manifest, const std::filesystem::path& path) {
  std::ostringstream out;
  out << json{{"digest", manifest.digest},
              {"created_at", manifest.created_at},
              {"tool_version", manifest.tool_version},
              {"conditions", manifest.conditions.size()}}
             .dump()
      << '\n';
  for (const auto& c : manifest.conditions) {
    json tasks = json::array();
    for (const auto& t : manifest.tasks.at(c.key.dataset_id)) {
      tasks.push_back({{"task_id", t.task_id}, {"seed", t.seed_used}});
    }
    out << json{{"model", c.key.model_id},
                {"dataset", c.key.dataset_id},
                {"bias", to_string(c.key.bias)},
                {"mitigation", to_string(c.key.mitigation)},
                {"tasks", tasks}}
               .dump()
        << '\n';
  }
  write_text_file(path, out.str());
}

std::string_view to_string(TaskStatus s) {
  switch (s) {
    case TaskStatus::Scored: return "scored";
    case TaskStatus::Ambiguous: return "ambiguous";
    case TaskStatus::Failed: return "failed";
  }
  return "?";
}

std::string result_to_json_line(const ConditionResult& r, const std::string& manifest_digest) {
  json j = {{"manifest", manifest_digest},
            {"model", r.key.model_id},
            {"dataset", r.key.dataset_id},
            {"bias", to_string(r.key.bias)},
            {"mitigation", to_string(r.key.mitigation)},
            {"n_planned", r.n_planned},
            {"n_total", r.n_total},
            {"n_scored", r.n_scored},
            {"n_correct", r.n_correct},
            {"n_ambiguous", r.n_ambiguous},
            {"n_failed", r.n_failed},
            {"complete", r.complete}};
  const auto acc = r.accuracy();
  j["accuracy"] = (acc && r.complete) ? json(*acc) : json(nullptr);
  return j.dump();
}

namespace {

ConditionResult result_from_json(const json& j) {
  ConditionResult r;
  r.key.model_id = j.at("model").get<std::string>();
  r.key.dataset_id = j.at("dataset").get<std::string>();
  r.key.bias = bias_kind_from_string(j.at("bias").get<std::string>());
  r.key.mitigation = mitigation_from_string(j.at("mitigation").get<std::string>());
  r.n_planned = j.at("n_planned").get<std::size_t>();
  r.n_total = j.at("n_total").get<std::size_t>();
  r.n_scored = j.at("n_scored").get<std::size_t>();
  r.n_correct = j.at("n_correct").get<std::size_t>();
  r.n_ambiguous = j.at("n_ambiguous").get<std::size_t>();
  r.n_failed = j.at("n_failed").get<std::size_t>();
  r.complete = j.at("complete").get<bool>();
  return r;
}

std::string record_to_json_line(const TaskRecord& rec, const ConditionKey& key) {
  json j = {{"model", key.model_id},
            {"dataset", key.dataset_id},
            {"bias", to_string(key.bias)},
            {"mitigation", to_string(key.mitigation)},
            {"task_id", rec.task_id},
            {"status", to_string(rec.status)},
            {"y", rec.y},
            {"injection", rec.injection_source == InjectionSource::Generated ? "generated" : "template"},
            {"raw", rec.raw},
            {"error", rec.error}};
  j["verdict"] = rec.verdict ? json(to_string(*rec.verdict)) : json(nullptr);
  j["rule"] = rec.rule ? json(to_string(*rec.rule)) : json(nullptr);
  return j.dump();
}

TaskRecord record_from_json(const json& j, std::size_t condition) {
  TaskRecord r;
  r.condition = condition;
  r.task_id = j.at("task_id").get<std::string>();
  const std::string status = j.at("status").get<std::string>();
  r.status = status == "scored" ? TaskStatus::Scored
             : status == "ambiguous" ? TaskStatus::Ambiguous
                                     : TaskStatus::Failed;
  r.y = j.at("y").get<int>();
  r.injection_source = j.at("injection").get<std::string>() == "generated" ? InjectionSource::Generated
                                                                            : InjectionSource::StaticTemplate;
  r.raw = j.at("raw").get<std::string>();
  r.error = j.at("error").get<std::string>();
  if (j.at("verdict").is_string()) r.verdict = j["verdict"].get<std::string>() == "A" ? Verdict::SlotA : Verdict::SlotB;
  if (j.at("rule").is_string()) {
    r.rule = j["rule"].get<std::string>() == "directive" ? ExtractionRule::DirectiveLine
                                                         : ExtractionRule::FallbackLastMention;
  }
  return r;
}

// One judge per model. Mock judges ignore the messages.
class Judge {
 public:
  virtual ~Judge() = default;
  virtual JudgeResponse evaluate(const BiasedTask& task, const std::vector<Message>& messages) = 0;
  virtual int parallelism() const = 0;
};

class MockJudge : public Judge {
 public:
  MockJudge(MockJudgeParams params, std::string model_id)
      : params_(std::move(params)), model_id_(std::move(model_id)) {}
  JudgeResponse evaluate(const BiasedTask& task, const std::vector<Message>&) override {
    JudgeResponse r = mock_evaluate(params_, task);
    r.model_id = model_id_;
    return r;
  }
  int parallelism() const override { return 1; }

 private:
  MockJudgeParams params_;
  std::string model_id_;
};

class LiveJudge : public Judge {
 public:
  LiveJudge(const EndpointConfig& cfg, std::shared_ptr<ResponseCache> cache)
      : client_(cfg, std::move(cache)) {}
  JudgeResponse evaluate(const BiasedTask&, const std::vector<Message>& messages) override {
    return client_.submit(messages);
  }
  int parallelism() const override { return client_.config().parallelism; }

 private:
  HttpChatClient client_;
};

// Runs fn(i) for i in [0, n) on `threads` workers.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

struct BiasedSet {
  std::vector<std::optional<BiasedTask>> tasks;
  std::vector<std::string> errors;
};

}  // namespace

std::vector<ConditionResult> load_results(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open results file " + path.string());
  std::vector<ConditionResult> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(result_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw DatasetParseError(n, std::string("bad results line: ") + e.what());
    }
  }
  return out;
}

std::vector<ModelMeta> load_model_meta(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open model metadata " + path.string());
  std::vector<ModelMeta> out;
  for (const auto& j : json::parse(in)) {
    out.push_back({j.at("id").get<std::string>(), j.value("family", ""), j.value("is_lrm", false),
                   j.value("open_source", false)});
  }
  return out;
}

void write_model_meta(const std::vector<ModelMeta>& meta, const std::filesystem::path& path) {
  json arr = json::array();
  for (const auto& m : meta) {
    arr.push_back({{"id", m.model_id}, {"family", m.family}, {"is_lrm", m.is_lrm},
                   {"open_source", m.open_source}});
  }
  write_text_file(path, arr.dump(2) + "\n");
}

RunOutcome execute(const RunManifest& manifest, const ExperimentMatrix& matrix,
                   const ExecuteOptions& options) {
  const auto& out_dir = matrix.output_dir;
  std::filesystem::create_directories(out_dir);
  const auto results_path = out_dir / "results.jsonl";
  const auto raw_path = out_dir / "raw.jsonl";
  write_manifest(manifest, out_dir / "manifest.jsonl");

  std::map<ConditionKey, std::size_t> index_of;
  for (std::size_t i = 0; i < manifest.conditions.size(); ++i) index_of[manifest.conditions[i].key] = i;

  RunOutcome outcome;
  outcome.results_path = results_path;
  std::vector<std::optional<ConditionResult>> done(manifest.conditions.size());
  std::vector<std::vector<TaskRecord>> records(manifest.conditions.size());

  // Resume: keep complete conditions recorded under the same manifest digest.
  if (options.resume && std::filesystem::exists(results_path)) {
    std::ifstream in(results_path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      if (j.value("manifest", "") != manifest.digest) continue;
      ConditionResult r = result_from_json(j);
      auto it = index_of.find(r.key);
      if (it != index_of.end() && r.complete) done[it->second] = r;
    }
    if (std::filesystem::exists(raw_path)) {
      std::ifstream raw_in(raw_path);
      while (std::getline(raw_in, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        const ConditionKey key{j.at("model").get<std::string>(), j.at("dataset").get<std::string>(),
                               bias_kind_from_string(j.at("bias").get<std::string>()),
                               mitigation_from_string(j.at("mitigation").get<std::string>())};
        auto it = index_of.find(key);
        if (it != index_of.end() && done[it->second]) records[it->second].push_back(record_from_json(j, it->second));
      }
    }
    for (std::size_t i = 0; i < done.size(); ++i) {
      const std::size_t expected = manifest.tasks.at(manifest.conditions[i].key.dataset_id).size();
      if (done[i] && records[i].size() != expected) {
        done[i].reset();  // raw records lost; recompute
        records[i].clear();
      }
    }
  }

  auto cache = std::make_shared<ResponseCache>(matrix.cache_dir);
  std::map<std::string, std::unique_ptr<Judge>> judges;
  std::size_t pool_size = 0;
  for (const auto& m : matrix.models) {
    std::unique_ptr<Judge> j;
    if (m.mock) {
      j = std::make_unique<MockJudge>(*m.mock, m.meta.model_id);
    } else {
      j = std::make_unique<LiveJudge>(*m.endpoint, cache);
    }
    pool_size += static_cast<std::size_t>(j->parallelism());
    judges.emplace(m.meta.model_id, std::move(j));
  }
  if (options.worker_threads > 0) pool_size = options.worker_threads;

  // Biased renderings are shared by every model and mitigation so that
  // mitigated and unmitigated runs see identical instances.
  std::map<std::pair<std::size_t, BiasKind>, BiasedSet> biased;
  for (std::size_t i = 0; i < manifest.conditions.size(); ++i) {
    if (done[i]) continue;
    biased[{manifest.conditions[i].dataset_index, manifest.conditions[i].key.bias}];
  }
  std::unique_ptr<HttpChatClient> generator;
  if (matrix.fake_cot.generated && matrix.fake_cot.generator) {
    generator = std::make_unique<HttpChatClient>(*matrix.fake_cot.generator, cache);
  }
  for (auto& [slot, set] : biased) {
    const auto& tasks = manifest.tasks.at(matrix.datasets[slot.first].id);
    const BiasKind kind = slot.second;
    set.tasks.resize(tasks.size());
    set.errors.resize(tasks.size());
    const bool generate = generator && is_post_option(kind);
    parallel_for(tasks.size(), generate ? static_cast<std::size_t>(generator->config().parallelism) : 1,
                 [&](std::size_t t) {
                   try {
                     InjectionText text;
                     if (kind == BiasKind::NoneBaseline) {
                       text = {};
                     } else if (is_in_option(kind)) {
                       text = render_simple_cue(kind, matrix.templates);
                     } else if (generate) {
                       try {
                         text = generate_fake_cot(kind, tasks[t], *generator, matrix.fake_cot.generation);
                       } catch (const GenerationRejectedError&) {
                         if (!matrix.fake_cot.fallback_to_template) throw;
                         text = render_fake_cot_template(kind, tasks[t], matrix.templates);
                       }
                     } else {
                       text = render_fake_cot_template(kind, tasks[t], matrix.templates);
                     }
                     set.tasks[t] = apply_injection(tasks[t], text, kind);
                   } catch (const Error& e) {
                     set.errors[t] = e.what();
                   }
                 });
  }

  struct WorkItem {
    std::size_t condition;
    std::size_t task;
  };
  std::vector<WorkItem> work;
  for (std::size_t i = 0; i < manifest.conditions.size(); ++i) {
    if (done[i]) continue;
    const std::size_t n = manifest.tasks.at(manifest.conditions[i].key.dataset_id).size();
    records[i].resize(n);
    for (std::size_t t = 0; t < n; ++t) work.push_back({i, t});
  }

  std::atomic<std::size_t> evaluations{0};
  parallel_for(work.size(), pool_size, [&](std::size_t w) {
    const auto [ci, ti] = work[w];
    const PlannedCondition& cond = manifest.conditions[ci];
    const BiasedSet& set = biased.at({cond.dataset_index, cond.key.bias});
    TaskRecord& rec = records[ci][ti];
    rec.condition = ci;
    rec.task_id = manifest.tasks.at(cond.key.dataset_id)[ti].task_id;
    if (!set.tasks[ti]) {
      rec.status = TaskStatus::Failed;
      rec.error = set.errors[ti];
      return;
    }
    const BiasedTask& bt = *set.tasks[ti];
    rec.injection_source = bt.injection.source;
    try {
      const auto messages = build_judge_prompt(bt, cond.key.mitigation, matrix.prompt);
      evaluations.fetch_add(1);
      const JudgeResponse resp = judges.at(cond.key.model_id)->evaluate(bt, messages);
      rec.raw = resp.raw;
      try {
        const ParsedJudgment p = parse_judgment(resp, matrix.think);
        rec.status = TaskStatus::Scored;
        rec.verdict = p.choice;
        rec.rule = p.rule;
        rec.y = score(p, bt.base);
      } catch (const AmbiguousJudgmentError& e) {
        rec.status = TaskStatus::Ambiguous;
        rec.error = e.what();
      }
    } catch (const Error& e) {
      rec.status = TaskStatus::Failed;
      rec.error = e.what();
    }
  });
  outcome.evaluations = evaluations.load();

  for (std::size_t i = 0; i < manifest.conditions.size(); ++i) {
    if (done[i]) {
      ++outcome.skipped_conditions;
      outcome.results.push_back(*done[i]);
      continue;
    }
    ConditionResult r;
    r.key = manifest.conditions[i].key;
    r.n_planned = records[i].size();
    for (const auto& rec : records[i]) {
      switch (rec.status) {
        case TaskStatus::Scored:
          ++r.n_scored;
          r.n_correct += static_cast<std::size_t>(rec.y);
          break;
        case TaskStatus::Ambiguous: ++r.n_ambiguous; break;
        case TaskStatus::Failed: ++r.n_failed; break;
      }
    }
    r.n_total = r.n_scored + r.n_ambiguous;
    r.complete = r.n_planned > 0 &&
                 static_cast<double>(r.n_scored) >= matrix.min_scored_fraction * static_cast<double>(r.n_planned);
    outcome.results.push_back(r);
  }

  std::string results_text, raw_text;
  for (const auto& r : outcome.results) results_text += result_to_json_line(r, manifest.digest) + "\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    for (const auto& rec : records[i]) {
      raw_text += record_to_json_line(rec, manifest.conditions[i].key) + "\n";
      outcome.records.push_back(rec);
    }
  }
  write_text_file(results_path, results_text);
  write_text_file(raw_path, raw_text);
  std::vector<ModelMeta> meta;
  for (const auto& m : matrix.models) meta.push_back(m.meta);
  write_model_meta(meta, out_dir / "models.json");

  const bool incomplete = std::any_of(outcome.results.begin(), outcome.results.end(),
                                      [](const ConditionResult& r) { return !r.complete; });
  outcome.exit_code = incomplete ? 3 : 0;
  return outcome;
}

}  // namespace theater
