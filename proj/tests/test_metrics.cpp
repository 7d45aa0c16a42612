#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "theater/errors.hpp"
#include "theater/metrics.hpp"
#include "theater/random.hpp"

using namespace theater;

namespace {

ConditionKey key(std::string model, std::string ds = "truthy", BiasKind b = BiasKind::NoneBaseline,
                 MitigationStrategy m = MitigationStrategy::NoMitigation) {
  return {std::move(model), std::move(ds), b, m};
}

// Accuracy given in hundredths, as printed in the tables.
ConditionResult cell(ConditionKey k, int hundredths) {
  return ConditionResult::from_counts(std::move(k), hundredths, 100);
}

}  // namespace

TEST_CASE("robustness rate oracle") {
  const auto base = cell(key("m"), 52);
  const auto biased = cell(key("m", "truthy", BiasKind::WaitCue), 42);
  CHECK(std::abs(robustness_rate(biased, base) - 21.0 / 26.0) < 1e-12);
  CHECK(std::abs(robustness_rate(biased, base) - 0.8076923) < 1e-7);
  const auto better = cell(key("m", "truthy", BiasKind::WaitCue), 60);
  CHECK(robustness_rate(better, base) > 1.0);
}

TEST_CASE("robustness rate preconditions") {
  const auto base0 = cell(key("m"), 0);
  const auto biased = cell(key("m", "truthy", BiasKind::WaitCue), 42);
  CHECK_THROWS_AS(robustness_rate(biased, base0), UndefinedMetricError);
  CHECK_THROWS_AS(robustness_rate(biased, cell(key("other"), 50)), KeyMismatchError);
  CHECK_THROWS_AS(robustness_rate(biased, cell(key("m", "chem"), 50)), KeyMismatchError);
  CHECK_THROWS_AS(robustness_rate(biased, biased), KeyMismatchError);
  ConditionResult empty;
  empty.key = key("m");
  CHECK_THROWS_AS(robustness_rate(biased, empty), UndefinedMetricError);
}

TEST_CASE("table 1 deltas at two decimals") {
  struct Row { const char* model; int base; int cue; const char* shown; };
  const Row rows[] = {{"DS-R1-70B", 52, 42, "-0.10"},
                      {"DS-R1", 49, 37, "-0.12"},
                      {"GPT-4o", 75, 71, "-0.04"},
                      {"DS-V3", 43, 38, "-0.05"}};
  for (const auto& r : rows) {
    const auto d = delta(cell(key(r.model, "truthy", BiasKind::ReflectiveCue), r.cue), cell(key(r.model), r.base));
    CHECK(format_signed2(d) == r.shown);
    CHECK(std::abs(d - (r.cue - r.base) / 100.0) < 1e-12);
  }
}

TEST_CASE("improvement on printed group rows") {
  const auto lrm_b = cell(key("LRMs Average", "chemistry", BiasKind::WaitCue), 76);
  const auto lrm_t = cell(key("LRMs Average", "chemistry", BiasKind::WaitCue, MitigationStrategy::Targeted), 88);
  CHECK(format_signed2(improvement(lrm_t, lrm_b)) == "+0.12");
  const auto llm_b = cell(key("LLMs Average", "truthy", BiasKind::FakeReflection), 55);
  const auto llm_t = cell(key("LLMs Average", "truthy", BiasKind::FakeReflection, MitigationStrategy::Targeted), 41);
  CHECK(format_signed2(improvement(llm_t, llm_b)) == "-0.14");

  CHECK_THROWS_AS(improvement(lrm_t, lrm_t), KeyMismatchError);
  CHECK_THROWS_AS(improvement(lrm_t, cell(key("LRMs Average", "chemistry", BiasKind::MetalinguisticCue), 70)),
                  KeyMismatchError);
}

TEST_CASE("group average over per-model rows") {
  // Truthy-DPO / Fake Reflection, LLM rows of the Fake-CoT mitigation table.
  const std::vector<std::pair<std::string, std::pair<int, int>>> llm = {
      {"DS-V3", {52, 43}},       {"Qwen2.5-7B", {51, 35}},  {"Qwen2.5-14B", {56, 33}},
      {"Qwen2.5-32B", {46, 31}}, {"Qwen2.5-72B", {56, 38}}, {"GPT-4o", {68, 63}}};
  std::vector<ConditionResult> results;
  std::vector<ModelMeta> meta;
  for (const auto& [id, bt] : llm) {
    meta.push_back({id, "x", false, false});
    results.push_back(cell(key(id, "truthy", BiasKind::FakeReflection), bt.first));
    results.push_back(cell(key(id, "truthy", BiasKind::FakeReflection, MitigationStrategy::Targeted), bt.second));
  }
  meta.push_back({"o1", "x", true, false});
  results.push_back(cell(key("o1", "truthy", BiasKind::FakeReflection), 50));

  const auto g = group_average(results, meta, ModelGroup::LLM);
  const auto& b = g.at({"truthy", BiasKind::FakeReflection, MitigationStrategy::NoMitigation});
  const auto& t = g.at({"truthy", BiasKind::FakeReflection, MitigationStrategy::Targeted});
  CHECK(b.mean == doctest::Approx(3.29 / 6).epsilon(1e-12));
  CHECK(format2(b.mean) == "0.55");
  CHECK(format2(t.mean) == "0.41");
  CHECK(format_signed2(t.mean - b.mean) == "-0.14");
  CHECK(b.members.size() == 6);
  CHECK(b.missing.empty());

  const auto lrm = group_average(results, meta, ModelGroup::LRM);
  const auto& lb = lrm.at({"truthy", BiasKind::FakeReflection, MitigationStrategy::NoMitigation});
  CHECK(lb.mean == doctest::Approx(0.5));
  CHECK(lrm.count({"truthy", BiasKind::FakeReflection, MitigationStrategy::Targeted}) == 0);
}

TEST_CASE("group average skips incomplete results and reports missing members") {
  std::vector<ModelMeta> meta = {{"a", "f", true, false}, {"b", "f", true, false}};
  auto ra = cell(key("a"), 80);
  auto rb = cell(key("b"), 20);
  rb.complete = false;
  const auto g = group_average({ra, rb}, meta, ModelGroup::LRM);
  const auto& c = g.at({"truthy", BiasKind::NoneBaseline, MitigationStrategy::NoMitigation});
  CHECK(c.mean == doctest::Approx(0.8));
  CHECK(c.missing == std::vector<std::string>{"b"});
  CHECK_THROWS_AS(group_average({ra}, meta, ModelGroup::LLM), Error);
  CHECK_THROWS_AS(group_average({cell(key("zzz"), 1)}, meta, ModelGroup::LRM), KeyMismatchError);
}

TEST_CASE("group average is order independent") {
  std::vector<ModelMeta> meta;
  std::vector<ConditionResult> results;
  SplitMix64 g(3);
  for (int i = 0; i < 13; ++i) {
    const std::string id = "m" + std::to_string(i);
    meta.push_back({id, "f", true, false});
    results.push_back(ConditionResult::from_counts(key(id), g.bounded(101), 100));
  }
  const double ref = group_average(results, meta, ModelGroup::LRM).begin()->second.mean;
  for (int trial = 0; trial < 50; ++trial) {
    for (std::size_t i = results.size() - 1; i > 0; --i) std::swap(results[i], results[g.bounded(i + 1)]);
    CHECK(group_average(results, meta, ModelGroup::LRM).begin()->second.mean == ref);
  }
}

TEST_CASE("accuracy excludes ambiguous replies") {
  const auto r = ConditionResult::from_counts(key("m"), 30, 60, 40);
  CHECK(r.n_total == 100);
  CHECK(*r.accuracy() == doctest::Approx(0.5));
  ConditionResult none;
  CHECK_FALSE(none.accuracy().has_value());
}

TEST_CASE("two-decimal formatting") {
  CHECK(format2(0.42) == "0.42");
  CHECK(format2(-0.001) == "0.00");
  CHECK(format2(1.0) == "1.00");
  CHECK(format_signed2(0.12) == "+0.12");
  CHECK(format_signed2(-0.001) == "+0.00");
  CHECK(format_signed2(0.0) == "+0.00");
  CHECK(format_signed2(-0.1) == "-0.10");
}

TEST_CASE("delta and robustness agree for random counts") {
  SplitMix64 g(17);
  for (int i = 0; i < 2000; ++i) {
    const auto n = 1 + g.bounded(200);
    const auto base = ConditionResult::from_counts(key("m"), 1 + g.bounded(n), n);
    const auto m = 1 + g.bounded(200);
    const auto biased = ConditionResult::from_counts(key("m", "truthy", BiasKind::DeepReasoning), g.bounded(m + 1), m);
    const double rr = robustness_rate(biased, base);
    const double d = delta(biased, base);
    REQUIRE(rr >= 0.0);
    REQUIRE(std::abs(rr * *base.accuracy() - *biased.accuracy()) < 1e-12);
    REQUIRE(std::abs(d - (*biased.accuracy() - *base.accuracy())) < 1e-15);
    REQUIRE((d < 0) == (rr < 1.0));
  }
}

TEST_CASE("unweighted group mean of eight LRM baselines") {
  const int acc[] = {43, 54, 64, 59, 63, 76, 97, 67};
  std::vector<ConditionResult> results;
  std::vector<ModelMeta> meta;
  for (int i = 0; i < 8; ++i) {
    const std::string id = "lrm" + std::to_string(i);
    meta.push_back({id, "f", true, false});
    results.push_back(cell(key(id, "truthy", BiasKind::WaitCue), acc[i]));
  }
  const auto g = group_average(results, meta, ModelGroup::LRM);
  const double mean = g.begin()->second.mean;
  CHECK(mean == doctest::Approx(5.23 / 8).epsilon(1e-12));
  CHECK(std::abs(mean - 0.654) < 5e-4);
}
