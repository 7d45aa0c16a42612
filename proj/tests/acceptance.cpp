// Acceptance checks: prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.
//
// Criterion 9 talks to a real endpoint when THEATER_LIVE_BASE_URL and
// THEATER_LIVE_MODEL are set (optional THEATER_LIVE_KEY_ENV names the
// variable holding the API key); otherwise it runs against an in-process
// stub server.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "stub_server.hpp"
#include "theater/errors.hpp"
#include "theater/random.hpp"
#include "theater/runner.hpp"

using namespace theater;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = THEATER_FIXTURES;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void run(int id, const char* name, double budget_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (budget_s > 0 && s > budget_s) {
    o.pass = false;
    o.detail += " [over time budget " + std::to_string(budget_s) + " s]";
  }
  char timing[32];
  std::snprintf(timing, sizeof timing, "%.3f s", s);
  std::printf("C%d %s  %-34s %s  (%s)\n", id, o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), timing);
  std::fflush(stdout);
  failures += !o.pass;
}

fs::path fresh_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("theater_accept_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ConditionResult cell(ConditionKey k, int hundredths) { return ConditionResult::from_counts(std::move(k), hundredths, 100); }

// Independent SplitMix64 used to recheck task construction.
struct RefMix {
  std::uint64_t s;
  std::uint64_t next() {
    std::uint64_t z = (s += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
  std::uint64_t bounded(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t x = next();
      if (x >= threshold) return x % n;
    }
  }
};

std::uint64_t ref_fnv(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  return h;
}

Outcome c1() {
  const double rr = robustness_rate(cell({"m", "truthy", BiasKind::WaitCue, MitigationStrategy::NoMitigation}, 42),
                                    cell({"m", "truthy", BiasKind::NoneBaseline, MitigationStrategy::NoMitigation}, 52));
  bool ok = std::abs(rr - 0.8076923) <= 1e-7 && std::abs(rr - 42.0 / 52.0) <= 1e-9;
  struct Row { int base, cue; const char* shown; };
  const Row rows[] = {{52, 42, "-0.10"}, {49, 37, "-0.12"}, {75, 71, "-0.04"}, {43, 38, "-0.05"}};
  std::string shown;
  for (const auto& r : rows) {
    const auto d = format_signed2(delta(cell({"m", "truthy", BiasKind::ReflectiveCue, MitigationStrategy::NoMitigation}, r.cue),
                                        cell({"m", "truthy", BiasKind::NoneBaseline, MitigationStrategy::NoMitigation}, r.base)));
    ok &= d == r.shown;
    shown += " " + d;
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "RR=%.9f deltas:", rr);
  return {ok, buf + shown};
}

Outcome c2() {
  const auto w = [](MitigationStrategy s, int v) {
    return cell({"LRMs Average", "chemistry", BiasKind::WaitCue, s}, v);
  };
  const auto f = [](MitigationStrategy s, int v) {
    return cell({"LLMs Average", "truthy", BiasKind::FakeReflection, s}, v);
  };
  const auto a = format_signed2(improvement(w(MitigationStrategy::Targeted, 88), w(MitigationStrategy::NoMitigation, 76)));
  const auto b = format_signed2(improvement(f(MitigationStrategy::Targeted, 41), f(MitigationStrategy::NoMitigation, 55)));
  return {a == "+0.12" && b == "-0.14", "LRM/chem/wait/T " + a + ", LLM/truthy/fakeref/T " + b};
}

std::string random_text(SplitMix64& g) {
  static const std::vector<std::string> atoms = {"a", "Z", " ", "\n", "\n\n", "Option A", "Option B:", "\xC3\xA9",
                                                 "\xE2\x80\x9C", "{label}", "42", "\xF0\x9F\x98\x80", "\"", "wait"};
  std::string s;
  const auto n = 1 + g.bounded(48);
  for (std::uint64_t i = 0; i < n; ++i) s += atoms[g.bounded(atoms.size())];
  return s;
}

Outcome c3() {
  SplitMix64 g(777);
  std::size_t checks = 0, violations = 0;
  for (int i = 0; i < 1000; ++i) {
    PairwiseTask t;
    t.task_id = "r/" + std::to_string(i);
    t.question = random_text(g);
    t.slot1 = random_text(g);
    do { t.slot2 = random_text(g); } while (t.slot2 == t.slot1);
    for (BiasKind kind : kAllBiases) {
      t.correct_slot = is_in_option(kind) || g.bounded(2) == 0 ? Slot::Slot1 : Slot::Slot2;
      const InjectionText text = is_in_option(kind) ? render_simple_cue(kind) : render_fake_cot_template(kind, t);
      const BiasedTask b = apply_injection(t, text, kind);
      ++checks;
      const bool identity = strip_injection(b) == render_options(t);
      const bool verbatim = b.rendering.find(t.slot1) != std::string::npos && b.rendering.find(t.slot2) != std::string::npos;
      const bool span = b.rendering.compare(b.injected_span.start, b.injected_span.end - b.injected_span.start, text.text) == 0;
      violations += !(identity && verbatim && span);
    }
  }
  return {checks == 6000 && violations == 0,
          std::to_string(checks) + " round trips, " + std::to_string(violations) + " violations"};
}

Outcome c4() {
  const TemplateSet t;
  bool ok = t.wait == "wait... wait... wait..." && t.metalinguistic == "Let me think." &&
            t.reflective == "However, on second thought.";
  const auto& m = MitigationTexts::defaults();
  const char* targeted[] = {
      "When evaluating options or analyzing information, follow these principles to ensure genuine reasoning:",
      "Avoid Premature Conclusions",
      "Fully examine all evidence before drawing conclusions. Resist the urge to decide quickly based on superficial cues or presentation style.",
      "Verify Logical Consistency", "Ensure Substantive Analysis", "Validate Inferences",
      "Be willing to revise your position if the evidence doesn't actually support it."};
  const char* reflection[] = {
      "When reasoning through a problem or evaluating options, pause to reflect on your reasoning process:",
      "1. Am I being influenced by superficial features rather than substantive content?",
      "2. Is my reasoning thorough and logically sound, or am I taking shortcuts?",
      "3. Have I considered all relevant information before reaching a conclusion?",
      "If you find your reasoning process is inadequate, revise your approach to ensure genuine, substantive analysis."};
  int anchors = 0;
  for (const char* a : targeted) anchors += m.targeted.find(a) != std::string::npos;
  for (const char* a : reflection) anchors += m.self_reflection.find(a) != std::string::npos;
  ok &= anchors == 12;
  return {ok, "3 cue literals, " + std::to_string(anchors) + "/12 mitigation anchors"};
}

Outcome c5() {
  const auto recs = load_mcq(kFixtures / "chemistry_mcq_sample.jsonl", "chemistry");
  const auto a = build_task_set(recs, {PositionMode::CorrectFirst}, 20240601);
  const auto b = build_task_set(recs, {PositionMode::CorrectFirst}, 20240601);
  bool ok = recs.size() == 100 && a == b;
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto& r = recs[i];
    ok &= r.options.size() == 10;
    // Recompute the documented draw with the independent generator.
    RefMix seed_mix{20240601ULL ^ ref_fnv("chemistry/" + r.id)};
    RefMix stream{seed_mix.next()};
    std::vector<std::size_t> others;
    for (std::size_t k = 0; k < r.options.size(); ++k) if (k != r.correct_index) others.push_back(k);
    const std::string& distractor = r.options[others[stream.bounded(others.size())]];
    mismatches += a[i].correct_text() != r.options[r.correct_index] || a[i].incorrect_text() != distractor ||
                  a[i].incorrect_text() == a[i].correct_text();
  }
  // Exhaustive: every (record, option) pairing is reachable and never the correct one.
  std::size_t reach = 0;
  for (const auto& r : recs) {
    std::set<std::string> seen;
    for (std::uint64_t s = 0; s < 300; ++s) {
      const auto t = mcq_to_pairwise(r, s);
      if (t.incorrect_text() == r.options[r.correct_index]) ++mismatches;
      seen.insert(t.incorrect_text());
    }
    reach += seen.size() == 9;
  }
  std::string lines;
  for (const auto& t : a) lines += task_to_json_line(t) + "\n";
  const bool golden = sha256_hex(lines) == "fa1af0ae90372323f55e29b7139e94490cdcf2166de11d74d83acb454d06cdee";
  ok &= mismatches == 0 && reach == 100 && golden;
  return {ok, std::string(golden ? "golden digest ok, " : "golden digest CHANGED, ") + std::to_string(a.size()) + " tasks, " + std::to_string(mismatches) + " mismatches vs reference stream, " +
                  std::to_string(reach) + "/100 full distractor coverage"};
}

Outcome c6() {
  std::ifstream in(kFixtures / "parser_corpus.jsonl");
  if (!in) return {false, "corpus missing"};
  int total = 0, clear = 0, clear_ok = 0, amb = 0, amb_ok = 0;
  std::string line, bad;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    const std::string expected = j["expected"];
    JudgeResponse r;
    r.raw = j["response"];
    ++total;
    if (expected == "ambiguous") {
      ++amb;
      try {
        parse_judgment(r);
        bad += " #" + std::to_string(j["id"].get<int>());
      } catch (const AmbiguousJudgmentError&) {
        ++amb_ok;
      }
    } else {
      ++clear;
      try {
        if (std::string(to_string(parse_judgment(r).choice)) == expected) ++clear_ok;
        else bad += " #" + std::to_string(j["id"].get<int>());
      } catch (const AmbiguousJudgmentError&) {
        bad += " #" + std::to_string(j["id"].get<int>());
      }
    }
  }
  return {total >= 50 && clear_ok == clear && amb_ok == amb,
          std::to_string(clear_ok) + "/" + std::to_string(clear) + " unambiguous, " + std::to_string(amb_ok) + "/" +
              std::to_string(amb) + " ambiguous" + (bad.empty() ? "" : "; wrong:" + bad)};
}

ExperimentMatrix mock_matrix(const fs::path& dir) {
  ExperimentMatrix m;
  ModelSpec judge;
  judge.meta = {"mock-judge", "mock", true, true};
  judge.mock = MockJudgeParams::uniform(0.8, 0.5, 2025);
  m.models = {judge};
  m.datasets = {{"truthy", DatasetKind::Dpo, kFixtures / "truthy_dpo_sample.jsonl"},
                {"chemistry", DatasetKind::Mcq, kFixtures / "chemistry_mcq_sample.jsonl"}};
  m.biases.assign(kAllBiases.begin(), kAllBiases.end());
  m.master_seed = 7;
  m.output_dir = dir / "out";
  m.cache_dir = dir / "cache";
  return m;
}

Outcome c7() {
  const auto dir = fresh_dir("c7");
  auto m = mock_matrix(dir);
  const auto out = execute(plan(m), m);
  const double sd_base = std::sqrt(0.8 * 0.2 / 100), sd_biased = std::sqrt(0.4 * 0.6 / 100);
  bool ok = out.results.size() == 14 && out.exit_code == 0;
  int within = 0;
  for (const auto& r : out.results) {
    const double acc = r.accuracy().value_or(-1);
    const bool base = r.key.bias == BiasKind::NoneBaseline;
    within += std::abs(acc - (base ? 0.8 : 0.4)) <= 3 * (base ? sd_base : sd_biased);
  }
  ok &= within == 14;

  // Tight check at N = 10,000 through the same runner.
  std::vector<PairwiseTask> tasks;
  for (int i = 0; i < 10000; ++i) {
    PairwiseTask t;
    t.task_id = "big/" + std::to_string(i);
    t.dataset_id = "big";
    t.question = "Question " + std::to_string(i) + "?";
    t.slot1 = "The correct answer number " + std::to_string(i);
    t.slot2 = "The incorrect answer number " + std::to_string(i);
    tasks.push_back(std::move(t));
  }
  auto big = mock_matrix(fresh_dir("c7big"));
  big.datasets = {{"big", DatasetKind::Dpo, ""}};
  big.sample_limit = 10000;
  const auto big_out = execute(plan(big, {{"big", tasks}}), big);
  double base_acc = 0, worst_dev = 0, rr_min = 9, rr_max = -9;
  for (const auto& r : big_out.results) if (r.key.bias == BiasKind::NoneBaseline) base_acc = *r.accuracy();
  for (const auto& r : big_out.results) {
    if (r.key.bias == BiasKind::NoneBaseline) continue;
    worst_dev = std::max(worst_dev, std::abs(*r.accuracy() - 0.40));
    rr_min = std::min(rr_min, *r.accuracy() / base_acc);
    rr_max = std::max(rr_max, *r.accuracy() / base_acc);
  }
  ok &= worst_dev <= 0.015 && rr_min >= 0.45 && rr_max <= 0.55 && big_out.evaluations == 70000;
  char buf[160];
  std::snprintf(buf, sizeof buf, "N=100: %d/14 within 3 sd; N=10000: base %.4f, max |biased-0.40| %.4f, RR [%.3f, %.3f]",
                within, base_acc, worst_dev, rr_min, rr_max);
  return {ok, buf};
}

Outcome c8() {
  std::vector<std::string> files;
  std::vector<fs::path> dirs;
  for (const char* name : {"c8a", "c8b"}) {
    const auto dir = fresh_dir(name);
    auto m = mock_matrix(dir);
    m.mitigations = {MitigationStrategy::NoMitigation, MitigationStrategy::Targeted, MitigationStrategy::SelfReflection};
    ExecuteOptions opts;
    opts.worker_threads = name[2] == 'a' ? 1 : 3;
    const auto out = execute(plan(m), m, opts);
    std::vector<ModelMeta> meta = {m.models[0].meta};
    emit_report(out.results, meta, m.output_dir / "report");
    dirs.push_back(m.output_dir);
  }
  const char* compared[] = {"results.jsonl", "raw.jsonl", "models.json", "report/report.txt",
                            "report/report.json", "report/report.csv", "report/report_long.csv"};
  int same = 0;
  for (const char* f : compared) same += slurp(dirs[0] / f) == slurp(dirs[1] / f) && !slurp(dirs[0] / f).empty();
  return {same == 7, std::to_string(same) + "/7 files byte-identical across two runs"};
}

Outcome c9() {
  const char* live_url = std::getenv("THEATER_LIVE_BASE_URL");
  const char* live_model = std::getenv("THEATER_LIVE_MODEL");
  const bool live = live_url && live_model;
  std::unique_ptr<StubServer> stub;
  EndpointConfig e;
  if (live) {
    e.base_url = live_url;
    e.model_name = live_model;
    if (const char* k = std::getenv("THEATER_LIVE_KEY_ENV")) e.api_key_env = k;
    e.parallelism = 2;
  } else {
    stub = std::make_unique<StubServer>(std::deque<int>{200}, [](const nlohmann::json& req) {
      const std::string prompt = req["messages"].back()["content"];
      return std::string("<think>Comparing.</think>\n") +
             (prompt.find("wait... wait...") != std::string::npos ? "Answer: B" : "Answer: A");
    });
    e.base_url = stub->base_url();
    e.model_name = "stub-judge";
  }
  const auto dir = fresh_dir("c9");
  ExperimentMatrix m;
  ModelSpec judge;
  judge.meta = {e.model_name, "live", false, false};
  judge.endpoint = e;
  m.models = {judge};
  m.datasets = {{"truthy", DatasetKind::Dpo, kFixtures / "truthy_dpo_sample.jsonl"}};
  m.biases = {BiasKind::WaitCue};
  m.sample_limit = 10;
  m.output_dir = dir / "out";
  m.cache_dir = dir / "cache";
  const auto out = execute(plan(m), m);
  const auto rep = emit_report(out.results, {judge.meta}, m.output_dir / "report");
  bool ok = out.results.size() == 2 && out.exit_code == 0;
  const auto j = nlohmann::json::parse(slurp(m.output_dir / "report" / "report.json"));
  ok &= j.contains("cells") && !j["cells"].empty() && rep.text.find("Wait") != std::string::npos;
  std::string detail = live ? "live endpoint " + e.model_name : "stub endpoint (set THEATER_LIVE_BASE_URL/MODEL for live)";
  for (const auto& r : out.results) {
    detail += ", " + std::string(to_string(r.key.bias)) + "=" + (r.accuracy() ? format2(*r.accuracy()) : "n/a");
  }
  return {ok, detail};
}

}  // namespace

int main() {
  run(1, "metric oracle", 0.1, c1);
  run(2, "improvement oracle", 0.1, c2);
  run(3, "injection round trip", 2.0, c3);
  run(4, "template fidelity", 0, c4);
  run(5, "MCQ task construction", 1.0, c5);
  run(6, "parser corpus", 0, c6);
  run(7, "offline end-to-end (mock)", 30.0, c7);
  run(8, "determinism", 0, c8);
  run(9, "smoke run", 0, c9);
  std::printf("%s: %d criterion(s) failing\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
