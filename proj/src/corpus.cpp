#include "theater/corpus.hpp"

#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "theater/errors.hpp"
#include "theater/random.hpp"

namespace theater {

using json = nlohmann::json;

namespace {

std::string require_string(const json& obj, const char* field, std::size_t line) {
  auto it = obj.find(field);
  if (it == obj.end()) throw SchemaError(line, field, "is missing");
  if (it->is_string()) return it->get<std::string>();
  // Numeric ids are common in exported datasets.
  if (std::string_view(field) == "id" && it->is_number_integer()) {
    return std::to_string(it->get<std::int64_t>());
  }
  throw SchemaError(line, field, "must be a string");
}

template <typename Fn>
void for_each_json_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset file: " + path.string());
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.find_first_not_of(" \t") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(text);
    } catch (const json::parse_error& e) {
      throw DatasetParseError(line_no, std::string("malformed JSON: ") + e.what());
    }
    if (!obj.is_object()) throw DatasetParseError(line_no, "record is not a JSON object");
    fn(obj, line_no);
  }
}

}  // namespace

std::string_view to_string(PositionMode mode) {
  switch (mode) {
    case PositionMode::CorrectFirst: return "correct-first";
    case PositionMode::CorrectSecond: return "correct-second";
    case PositionMode::SeededRandom: return "random";
  }
  return "?";
}

PositionMode position_mode_from_string(std::string_view name) {
  if (name == "correct-first") return PositionMode::CorrectFirst;
  if (name == "correct-second") return PositionMode::CorrectSecond;
  if (name == "random") return PositionMode::SeededRandom;
  throw ConfigError("unknown position policy '" + std::string(name) + "'");
}

std::string_view to_string(Slot slot) { return slot == Slot::Slot1 ? "slot1" : "slot2"; }

std::string_view to_string(Domain domain) {
  return domain == Domain::Subjective ? "subjective" : "factual";
}

DatasetKind dataset_kind_from_string(std::string_view name) {
  if (name == "dpo") return DatasetKind::Dpo;
  if (name == "mcq") return DatasetKind::Mcq;
  throw ConfigError("unknown dataset kind '" + std::string(name) + "' (expected dpo|mcq)");
}

std::string_view to_string(DatasetKind kind) { return kind == DatasetKind::Dpo ? "dpo" : "mcq"; }

std::vector<DpoRecord> load_dpo(const std::filesystem::path& path, const std::string& dataset_id) {
  std::vector<DpoRecord> out;
  for_each_json_line(path, [&](const json& obj, std::size_t line) {
    DpoRecord rec;
    rec.id = require_string(obj, "id", line);
    rec.question = require_string(obj, "question", line);
    rec.chosen = require_string(obj, "chosen", line);
    rec.rejected = require_string(obj, "rejected", line);
    rec.dataset_id = dataset_id;
    if (rec.question.empty()) throw SchemaError(line, "question", "is empty");
    if (rec.chosen == rec.rejected) throw SchemaError(line, "rejected", "equals 'chosen'");
    out.push_back(std::move(rec));
  });
  return out;
}

std::vector<McqRecord> load_mcq(const std::filesystem::path& path, const std::string& dataset_id) {
  std::vector<McqRecord> out;
  for_each_json_line(path, [&](const json& obj, std::size_t line) {
    McqRecord rec;
    rec.id = require_string(obj, "id", line);
    rec.question = require_string(obj, "question", line);
    rec.dataset_id = dataset_id;
    if (rec.question.empty()) throw SchemaError(line, "question", "is empty");

    auto opts = obj.find("options");
    if (opts == obj.end()) throw SchemaError(line, "options", "is missing");
    if (!opts->is_array()) throw SchemaError(line, "options", "must be an array");
    std::set<std::string> seen;
    for (const auto& o : *opts) {
      if (!o.is_string()) throw SchemaError(line, "options", "must contain strings");
      if (!seen.insert(o.get<std::string>()).second) {
        throw SchemaError(line, "options", "contains duplicate text");
      }
      rec.options.push_back(o.get<std::string>());
    }

    auto idx = obj.find("correct_index");
    if (idx == obj.end()) throw SchemaError(line, "correct_index", "is missing");
    if (!idx->is_number_integer() || idx->get<std::int64_t>() < 0) {
      throw SchemaError(line, "correct_index", "must be a non-negative integer");
    }
    rec.correct_index = idx->get<std::size_t>();
    if (rec.correct_index >= rec.options.size()) {
      throw SchemaError(line, "correct_index", "is out of range");
    }
    out.push_back(std::move(rec));
  });
  return out;
}

namespace {

void place(PairwiseTask& task, const std::string& correct, const std::string& incorrect,
           PositionPolicy policy, SplitMix64& stream) {
  bool correct_first = true;
  switch (policy.mode) {
    case PositionMode::CorrectFirst: correct_first = true; break;
    case PositionMode::CorrectSecond: correct_first = false; break;
    case PositionMode::SeededRandom: correct_first = stream.bounded(2) == 0; break;
  }
  task.slot1 = correct_first ? correct : incorrect;
  task.slot2 = correct_first ? incorrect : correct;
  task.correct_slot = correct_first ? Slot::Slot1 : Slot::Slot2;
}

}  // namespace

PairwiseTask dpo_to_pairwise(const DpoRecord& rec, std::uint64_t seed, PositionPolicy policy) {
  if (rec.chosen == rec.rejected) throw ConstructionError("chosen and rejected are identical");
  PairwiseTask task;
  task.task_id = rec.dataset_id + "/" + rec.id;
  task.question = rec.question;
  task.domain = Domain::Subjective;
  task.dataset_id = rec.dataset_id;
  task.seed_used = seed;
  SplitMix64 stream(seed);
  place(task, rec.chosen, rec.rejected, policy, stream);
  return task;
}

PairwiseTask mcq_to_pairwise(const McqRecord& rec, std::uint64_t seed, PositionPolicy policy) {
  if (rec.options.size() < 2) {
    throw ConstructionError("record '" + rec.id + "' has fewer than 2 options");
  }
  if (rec.correct_index >= rec.options.size()) {
    throw ConstructionError("record '" + rec.id + "' has correct_index out of range");
  }
  std::vector<std::size_t> others;
  others.reserve(rec.options.size() - 1);
  for (std::size_t i = 0; i < rec.options.size(); ++i) {
    if (i != rec.correct_index) others.push_back(i);
  }

  SplitMix64 stream(seed);
  const std::size_t distractor = others[stream.bounded(others.size())];

  PairwiseTask task;
  task.task_id = rec.dataset_id + "/" + rec.id;
  task.question = rec.question;
  task.domain = Domain::Factual;
  task.dataset_id = rec.dataset_id;
  task.seed_used = seed;
  place(task, rec.options[rec.correct_index], rec.options[distractor], policy, stream);
  return task;
}

std::vector<PairwiseTask> build_task_set(const RecordSet& records, PositionPolicy policy,
                                         std::uint64_t master_seed) {
  return std::visit(
      [&](const auto& recs) {
        if (recs.empty()) throw EmptyDatasetError();
        std::vector<PairwiseTask> tasks;
        tasks.reserve(recs.size());
        for (const auto& rec : recs) {
          const std::uint64_t seed = derive_seed(master_seed, rec.dataset_id + "/" + rec.id);
          using T = std::decay_t<decltype(rec)>;
          if constexpr (std::is_same_v<T, DpoRecord>) {
            tasks.push_back(dpo_to_pairwise(rec, seed, policy));
          } else {
            tasks.push_back(mcq_to_pairwise(rec, seed, policy));
          }
        }
        return tasks;
      },
      records);
}

std::string task_to_json_line(const PairwiseTask& task) {
  json j = {
      {"task_id", task.task_id},
      {"question", task.question},
      {"slot1", task.slot1},
      {"slot2", task.slot2},
      {"correct_slot", to_string(task.correct_slot)},
      {"domain", to_string(task.domain)},
      {"dataset_id", task.dataset_id},
      {"seed", task.seed_used},
  };
  return j.dump();
}

}  // namespace theater
