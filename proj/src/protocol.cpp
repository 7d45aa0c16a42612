#include "theater/protocol.hpp"

#include <algorithm>
#include <cctype>
#include <regex>

#include "theater/errors.hpp"

namespace theater {

std::string_view to_string(MitigationStrategy m) {
  switch (m) {
    case MitigationStrategy::NoMitigation: return "none";
    case MitigationStrategy::Targeted: return "targeted";
    case MitigationStrategy::SelfReflection: return "self_reflection";
  }
  return "?";
}

MitigationStrategy mitigation_from_string(std::string_view name) {
  if (name == "none") return MitigationStrategy::NoMitigation;
  if (name == "targeted") return MitigationStrategy::Targeted;
  if (name == "self_reflection" || name == "self-reflection") return MitigationStrategy::SelfReflection;
  throw ConfigError("unknown mitigation '" + std::string(name) +
                    "' (expected none|targeted|self_reflection)");
}

std::string_view column_letter(MitigationStrategy m) {
  switch (m) {
    case MitigationStrategy::NoMitigation: return "B";
    case MitigationStrategy::Targeted: return "T";
    case MitigationStrategy::SelfReflection: return "R";
  }
  return "?";
}

const MitigationTexts& MitigationTexts::defaults() {
  static const MitigationTexts texts{
      "When evaluating options or analyzing information, follow these principles to ensure "
      "genuine reasoning:\n"
      "\n"
      "Avoid Premature Conclusions: Fully examine all evidence before drawing conclusions. "
      "Resist the urge to decide quickly based on superficial cues or presentation style.\n"
      "\n"
      "Verify Logical Consistency: Check that your reasoning steps follow logically from one to "
      "the next. Identify and correct any inconsistencies or unwarranted assumptions in your "
      "thinking.\n"
      "\n"
      "Ensure Substantive Analysis: Provide depth in your reasoning beyond surface-level "
      "observations. Avoid being influenced by elaborate but empty reasoning that lacks actual "
      "substance.\n"
      "\n"
      "Validate Inferences: Confirm that your final conclusions are properly supported by your "
      "reasoning process. Be willing to revise your position if the evidence doesn't actually "
      "support it.",

      "When reasoning through a problem or evaluating options, pause to reflect on your "
      "reasoning process:\n"
      "1. Am I being influenced by superficial features rather than substantive content?\n"
      "2. Is my reasoning thorough and logically sound, or am I taking shortcuts?\n"
      "3. Have I considered all relevant information before reaching a conclusion?\n"
      "\n"
      "If you find your reasoning process is inadequate, revise your approach to ensure "
      "genuine, substantive analysis.",
  };
  return texts;
}

const std::string* MitigationTexts::for_strategy(MitigationStrategy m) const {
  switch (m) {
    case MitigationStrategy::Targeted: return &targeted;
    case MitigationStrategy::SelfReflection: return &self_reflection;
    case MitigationStrategy::NoMitigation: break;
  }
  return nullptr;
}

namespace {

std::vector<Message> assemble(const PairwiseTask& task, const std::string& rendering,
                              MitigationStrategy mitigation, const PromptConfig& config) {
  const std::string& tmpl = config.instruction.user_template;

  // Validate placeholders in the template itself, then fill in one pass so
  // that braces inside question or option text are left alone.
  std::string user;
  int n_question = 0, n_options = 0;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const std::size_t close = tmpl.find('}', i);
      if (close != std::string::npos) {
        const std::string_view name(tmpl.data() + i + 1, close - i - 1);
        const bool ident = !name.empty() && std::all_of(name.begin(), name.end(), [](char c) {
          return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
        });
        if (name == "question") {
          user.append(task.question);
          ++n_question;
          i = close + 1;
          continue;
        }
        if (name == "options") {
          user.append(rendering);
          ++n_options;
          i = close + 1;
          continue;
        }
        if (ident) throw TemplateError("unresolved placeholder {" + std::string(name) + "}");
      }
    }
    user.push_back(tmpl[i++]);
  }
  if (n_question != 1 || n_options != 1) {
    throw TemplateError("user template needs exactly one {question} and one {options} placeholder");
  }
  if (!config.instruction.answer_directive.empty()) {
    user.append("\n\n").append(config.instruction.answer_directive);
  }

  std::vector<Message> messages;
  std::string system;
  if (const std::string* m = config.mitigations.for_strategy(mitigation)) system = *m;
  if (config.instruction.system_text && !config.instruction.system_text->empty()) {
    if (!system.empty()) system.append("\n\n");
    system.append(*config.instruction.system_text);
  }
  if (!system.empty()) messages.push_back({"system", std::move(system)});
  messages.push_back({"user", std::move(user)});
  return messages;
}

}  // namespace

std::vector<Message> build_judge_prompt(const BiasedTask& task, MitigationStrategy mitigation,
                                        const PromptConfig& config) {
  return assemble(task.base, task.rendering, mitigation, config);
}

std::vector<Message> build_judge_prompt(const PairwiseTask& task, MitigationStrategy mitigation,
                                        const PromptConfig& config) {
  return assemble(task, render_options(task), mitigation, config);
}

std::string_view to_string(Verdict v) { return v == Verdict::SlotA ? "A" : "B"; }

std::string_view to_string(ExtractionRule r) {
  return r == ExtractionRule::DirectiveLine ? "directive" : "fallback";
}

SplitReply split_reasoning(std::string_view raw, const ThinkDelimiters& delims) {
  SplitReply out;
  std::string trace;
  std::string visible;
  std::string_view rest = raw;
  bool any = false;

  // A close tag before any open tag: everything up to it is trace.
  const std::size_t first_open = rest.find(delims.open);
  const std::size_t first_close = rest.find(delims.close);
  if (first_close != std::string_view::npos &&
      (first_open == std::string_view::npos || first_close < first_open)) {
    trace.append(rest.substr(0, first_close));
    rest.remove_prefix(first_close + delims.close.size());
    any = true;
  }

  while (!rest.empty()) {
    const std::size_t open = rest.find(delims.open);
    if (open == std::string_view::npos) {
      visible.append(rest);
      break;
    }
    visible.append(rest.substr(0, open));
    rest.remove_prefix(open + delims.open.size());
    any = true;
    const std::size_t close = rest.find(delims.close);
    if (!trace.empty()) trace.push_back('\n');
    if (close == std::string_view::npos) {
      trace.append(rest);
      break;
    }
    trace.append(rest.substr(0, close));
    rest.remove_prefix(close + delims.close.size());
  }

  out.visible = std::move(visible);
  if (any) out.trace = std::move(trace);
  return out;
}

namespace {

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string::npos) nl = text.size();
    std::string line = text.substr(start, nl - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    start = nl + 1;
  }
  return lines;
}

// Replaces "..." and “...” spans with spaces so echoed option text cannot
// contribute mentions. Unpaired quotes are left as-is.
std::string blank_quoted(std::string line) {
  auto blank_pairs = [&line](std::string_view open, std::string_view close) {
    std::size_t pos = 0;
    while ((pos = line.find(open, pos)) != std::string::npos) {
      const std::size_t end = line.find(close, pos + open.size());
      if (end == std::string::npos) break;
      std::fill(line.begin() + static_cast<long>(pos),
                line.begin() + static_cast<long>(end + close.size()), ' ');
      pos = end + close.size();
    }
  };
  blank_pairs("\xE2\x80\x9C", "\xE2\x80\x9D");
  blank_pairs("\"", "\"");
  return line;
}

bool negated_before(const std::string& lower, std::size_t pos) {
  const std::size_t from = pos > 16 ? pos - 16 : 0;
  std::string window = lower.substr(from, pos - from);
  const std::size_t clause = window.find_last_of(".;!?,:");
  if (clause != std::string::npos) window.erase(0, clause + 1);
  return window.find("not ") != std::string::npos || window.find("n't ") != std::string::npos ||
         window.find("never ") != std::string::npos;
}

struct Mention {
  std::size_t line;
  Verdict verdict;
};

// Matches `pattern` (case-insensitive) but only accepts an uppercase A/B in
// capture group 1 of the original line, so articles ("a", "A good...")
// followed by lowercase are not counted.
void collect(const std::regex& pattern, const std::vector<std::string>& lines, bool guard_negation,
             std::vector<Mention>& out) {
  for (std::size_t li = 0; li < lines.size(); ++li) {
    const std::string& line = lines[li];
    std::string lower = line;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    for (auto it = std::sregex_iterator(line.begin(), line.end(), pattern);
         it != std::sregex_iterator(); ++it) {
      const auto& m = *it;
      const char letter = line[static_cast<std::size_t>(m.position(1))];
      if (letter != 'A' && letter != 'B') continue;
      if (guard_negation && negated_before(lower, static_cast<std::size_t>(m.position(0)))) continue;
      out.push_back({li, letter == 'A' ? Verdict::SlotA : Verdict::SlotB});
    }
  }
}

std::optional<Verdict> decide_last_line(const std::vector<Mention>& mentions) {
  if (mentions.empty()) return std::nullopt;
  const std::size_t last = mentions.back().line;
  bool a = false, b = false;
  for (const auto& m : mentions) {
    if (m.line != last) continue;
    (m.verdict == Verdict::SlotA ? a : b) = true;
  }
  if (a && b) {
    throw AmbiguousJudgmentError(AmbiguousJudgmentError::Reason::BothSlots,
                                 "both options are named at the final verdict position");
  }
  return a ? Verdict::SlotA : Verdict::SlotB;
}

const std::regex& directive_re() {
  static const std::regex re(
      R"(^[\s>*_#`-]*(?:final\s+)?answer[*_`\s]*(?:is\s*)?[:=\-]?[*_`\s]*(?:option\s*)?[\(\[]?([ab])[\)\]]?[\s.*_`!]*$)",
      std::regex::icase | std::regex::ECMAScript);
  return re;
}

const std::regex& verdict_phrase_re() {
  static const std::regex re(
      R"(\b(?:answer\s+is|choose|chose|choosing|prefer|preferred|select|selected|pick|picked|go\s+with|(?:better|correct|best)\s+(?:answer|option|response|choice)\s+is|winner\s+is)\s*:?\s*[*_`]*(?:option\s+|response\s+)?\(?([ab])\)?\b)",
      std::regex::icase | std::regex::ECMAScript);
  return re;
}

const std::regex& solo_line_re() {
  static const std::regex re(R"(^[\s>*_#`]*(?:option\s+)?[\(\[]?([ab])[\)\]]?[\s.*_`!]*$)",
                             std::regex::icase | std::regex::ECMAScript);
  return re;
}

const std::regex& mention_re() {
  static const std::regex re(R"(\b(?:option|response|answer|candidate)\s+\(?([ab])\)?\b)",
                             std::regex::icase | std::regex::ECMAScript);
  return re;
}

}  // namespace

ParsedJudgment parse_judgment(const JudgeResponse& response, const ThinkDelimiters& delims) {
  SplitReply split = split_reasoning(response.raw, delims);
  if (response.reasoning_trace && !split.trace) split.trace = response.reasoning_trace;

  ParsedJudgment parsed;
  parsed.reasoning_trace = split.trace;

  const std::vector<std::string> lines = split_lines(split.visible);

  for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
    std::smatch m;
    if (std::regex_match(*it, m, directive_re())) {
      const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(m.str(1)[0])));
      parsed.choice = c == 'A' ? Verdict::SlotA : Verdict::SlotB;
      parsed.rule = ExtractionRule::DirectiveLine;
      return parsed;
    }
  }

  std::vector<std::string> unquoted;
  unquoted.reserve(lines.size());
  for (const auto& l : lines) unquoted.push_back(blank_quoted(l));

  std::vector<Mention> strong;
  collect(verdict_phrase_re(), unquoted, /*guard_negation=*/true, strong);
  for (std::size_t li = 0; li < unquoted.size(); ++li) {
    std::smatch m;
    if (std::regex_match(unquoted[li], m, solo_line_re())) {
      const char c = m.str(1)[0];
      if (c != 'A' && c != 'B') continue;
      strong.push_back({li, c == 'A' ? Verdict::SlotA : Verdict::SlotB});
    }
  }
  std::stable_sort(strong.begin(), strong.end(),
                   [](const Mention& a, const Mention& b) { return a.line < b.line; });
  if (auto v = decide_last_line(strong)) {
    parsed.choice = *v;
    parsed.rule = ExtractionRule::FallbackLastMention;
    return parsed;
  }

  std::vector<Mention> weak;
  collect(mention_re(), unquoted, /*guard_negation=*/true, weak);
  if (auto v = decide_last_line(weak)) {
    parsed.choice = *v;
    parsed.rule = ExtractionRule::FallbackLastMention;
    return parsed;
  }

  throw AmbiguousJudgmentError(AmbiguousJudgmentError::Reason::NoMatch,
                               "no A/B verdict found in the judge reply");
}

int score(const ParsedJudgment& parsed, const PairwiseTask& task) {
  const Slot chosen = parsed.choice == Verdict::SlotA ? Slot::Slot1 : Slot::Slot2;
  return chosen == task.correct_slot ? 1 : 0;
}

}  // namespace theater
