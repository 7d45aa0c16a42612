#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "theater/corpus.hpp"
#include "theater/injection.hpp"

namespace theater {

struct Message {
  std::string role;  // "system" | "user" | "assistant"
  std::string content;
  bool operator==(const Message&) const = default;
};

struct JudgeResponse {
  std::string raw;
  std::optional<std::string> reasoning_trace;
  double latency_ms = 0.0;
  std::string model_id;
};

// The default instruction asks for a final "Answer: A" / "Answer: B" line.
// user_template must contain exactly one {question} and one {options}.
struct JudgeInstruction {
  std::optional<std::string> system_text;
  std::string user_template =
      "You are evaluating two candidate answers to a question. Choose the better answer.\n"
      "\n"
      "Question: {question}\n"
      "\n"
      "{options}";
  std::string answer_directive = "End your reply with a single line: 'Answer: A' or 'Answer: B'.";
};

enum class MitigationStrategy { NoMitigation, Targeted, SelfReflection };

inline constexpr MitigationStrategy kAllMitigations[] = {
    MitigationStrategy::NoMitigation, MitigationStrategy::Targeted,
    MitigationStrategy::SelfReflection};

std::string_view to_string(MitigationStrategy m);  // none | targeted | self_reflection
MitigationStrategy mitigation_from_string(std::string_view name);
std::string_view column_letter(MitigationStrategy m);  // B | T | R

// System-prompt texts for the two mitigation strategies.
struct MitigationTexts {
  std::string targeted;
  std::string self_reflection;

  static const MitigationTexts& defaults();
  const std::string* for_strategy(MitigationStrategy m) const;
};

struct PromptConfig {
  JudgeInstruction instruction;
  MitigationTexts mitigations = MitigationTexts::defaults();
};

// [system: mitigation + "\n\n" + instruction.system_text (either optional),
//  user: filled template + "\n\n" + answer_directive]
std::vector<Message> build_judge_prompt(const BiasedTask& task, MitigationStrategy mitigation,
                                        const PromptConfig& config = {});
std::vector<Message> build_judge_prompt(const PairwiseTask& task, MitigationStrategy mitigation,
                                        const PromptConfig& config = {});

enum class Verdict { SlotA, SlotB };
enum class ExtractionRule { DirectiveLine, FallbackLastMention };

struct ParsedJudgment {
  Verdict choice = Verdict::SlotA;
  ExtractionRule rule = ExtractionRule::DirectiveLine;
  std::optional<std::string> reasoning_trace;
};

std::string_view to_string(Verdict v);
std::string_view to_string(ExtractionRule r);

struct ThinkDelimiters {
  std::string open = "<think>";
  std::string close = "</think>";
};

// Removes every delimited trace block. An unterminated open tag swallows the
// rest of the reply; a close tag with no opener swallows everything before
// it (some servers strip the opening tag).
struct SplitReply {
  std::string visible;
  std::optional<std::string> trace;
};
SplitReply split_reasoning(std::string_view raw, const ThinkDelimiters& delims = {});

// Throws AmbiguousJudgmentError when no verdict, or both, can be extracted.
ParsedJudgment parse_judgment(const JudgeResponse& response, const ThinkDelimiters& delims = {});

// y = 1 iff the chosen slot is the correct slot.
int score(const ParsedJudgment& parsed, const PairwiseTask& task);

}  // namespace theater
