#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace theater {

// Preference pair: `chosen` is the ground-truth better response.
struct DpoRecord {
  std::string id;
  std::string question;
  std::string chosen;
  std::string rejected;
  std::string dataset_id;
};

// Multiple-choice item with one correct option (0-based index).
struct McqRecord {
  std::string id;
  std::string question;
  std::vector<std::string> options;
  std::size_t correct_index = 0;
  std::string dataset_id;
};

enum class Slot { Slot1, Slot2 };
enum class Domain { Subjective, Factual };

inline Slot other(Slot s) { return s == Slot::Slot1 ? Slot::Slot2 : Slot::Slot1; }

struct PairwiseTask {
  std::string task_id;
  std::string question;
  std::string slot1;
  std::string slot2;
  Slot correct_slot = Slot::Slot1;
  Domain domain = Domain::Subjective;
  std::string dataset_id;
  std::uint64_t seed_used = 0;

  const std::string& text(Slot s) const { return s == Slot::Slot1 ? slot1 : slot2; }
  const std::string& correct_text() const { return text(correct_slot); }
  const std::string& incorrect_text() const { return text(other(correct_slot)); }
  Slot incorrect_slot() const { return other(correct_slot); }

  bool operator==(const PairwiseTask&) const = default;
};

enum class PositionMode { CorrectFirst, CorrectSecond, SeededRandom };

// SeededRandom draws the side from the per-record seed stream; the master
// seed given to build_task_set is what makes it reproducible.
struct PositionPolicy {
  PositionMode mode = PositionMode::CorrectFirst;
};

std::string_view to_string(PositionMode mode);
PositionMode position_mode_from_string(std::string_view name);
std::string_view to_string(Slot slot);
std::string_view to_string(Domain domain);

enum class DatasetKind { Dpo, Mcq };
DatasetKind dataset_kind_from_string(std::string_view name);
std::string_view to_string(DatasetKind kind);

// Line-delimited JSON loaders. Blank lines are skipped; line numbers in
// errors are 1-based physical lines.
std::vector<DpoRecord> load_dpo(const std::filesystem::path& path, const std::string& dataset_id);
std::vector<McqRecord> load_mcq(const std::filesystem::path& path, const std::string& dataset_id);

PairwiseTask dpo_to_pairwise(const DpoRecord& rec, std::uint64_t seed,
                             PositionPolicy policy = {});

// Pairs the correct option with one distractor drawn uniformly from the
// remaining options. Stream consumption from SplitMix64(seed):
//   1. distractor = others[bounded(|options| - 1)]   (others keep source order)
//   2. under SeededRandom only: correct goes first iff bounded(2) == 0
PairwiseTask mcq_to_pairwise(const McqRecord& rec, std::uint64_t seed,
                             PositionPolicy policy = {});

using RecordSet = std::variant<std::vector<DpoRecord>, std::vector<McqRecord>>;

// One task per record; per-record seed = derive_seed(master_seed,
// "<dataset_id>/<record id>"), task_id = "<dataset_id>/<record id>".
std::vector<PairwiseTask> build_task_set(const RecordSet& records, PositionPolicy policy,
                                         std::uint64_t master_seed);

std::string task_to_json_line(const PairwiseTask& task);

}  // namespace theater
