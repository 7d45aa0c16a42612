#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "theater/errors.hpp"
#include "theater/runner.hpp"

namespace theater {

using json = nlohmann::json;

namespace {

struct Column {
  BiasKind bias;
  MitigationStrategy mitigation;
  auto tie() const { return std::tie(bias, mitigation); }
  bool operator<(const Column& o) const { return tie() < o.tie(); }
  bool operator==(const Column& o) const { return tie() == o.tie(); }
};

std::string cell_text(const ReportCell& c, bool signed_value = false) {
  if (c.value) return signed_value ? format_signed2(*c.value) : format2(*c.value);
  return "undef";
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string full_precision(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

bool is_signed_metric(const std::string& metric) {
  return metric == "delta" || metric == "improvement" || metric == "group_improvement";
}

void write_file(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + p.string());
  out << s;
}

}  // namespace

Report build_report(const std::vector<ConditionResult>& results, const std::vector<ModelMeta>& meta) {
  if (results.empty()) throw Error("no condition results to report");

  // Canonical ordering makes the report independent of result arrival order.
  std::vector<ConditionResult> sorted = results;
  std::sort(sorted.begin(), sorted.end(),
            [](const ConditionResult& a, const ConditionResult& b) { return a.key < b.key; });
  std::map<ConditionKey, const ConditionResult*> by_key;
  for (const auto& r : sorted) {
    if (!by_key.emplace(r.key, &r).second) throw KeyMismatchError("duplicate condition " + describe(r.key));
  }

  std::vector<std::string> datasets, models;
  std::map<std::string, std::set<Column>> columns;
  for (const auto& r : sorted) {
    if (std::find(datasets.begin(), datasets.end(), r.key.dataset_id) == datasets.end()) datasets.push_back(r.key.dataset_id);
    if (std::find(models.begin(), models.end(), r.key.model_id) == models.end()) models.push_back(r.key.model_id);
    columns[r.key.dataset_id].insert({r.key.bias, r.key.mitigation});
  }

  Report report;
  auto add = [&](ReportCell c) { report.cells.push_back(std::move(c)); };

  for (const auto& r : sorted) {
    ReportCell acc{r.key.model_id, r.key.dataset_id, r.key.bias, r.key.mitigation, "accuracy", std::nullopt, ""};
    if (!r.complete) {
      acc.note = "incomplete (" + std::to_string(r.n_scored) + "/" + std::to_string(r.n_planned) + " scored)";
    } else if (auto a = r.accuracy()) {
      acc.value = *a;
    } else {
      acc.note = "no scored tasks";
    }
    add(acc);
    add({r.key.model_id, r.key.dataset_id, r.key.bias, r.key.mitigation, "ambiguous",
         static_cast<double>(r.n_ambiguous), ""});

    if (r.key.bias != BiasKind::NoneBaseline) {
      ConditionKey base_key = r.key;
      base_key.bias = BiasKind::NoneBaseline;
      ReportCell d{r.key.model_id, r.key.dataset_id, r.key.bias, r.key.mitigation, "delta", std::nullopt, ""};
      ReportCell rr{r.key.model_id, r.key.dataset_id, r.key.bias, r.key.mitigation, "robustness_rate", std::nullopt, ""};
      auto it = by_key.find(base_key);
      if (it == by_key.end()) {
        d.note = rr.note = "undefined: no baseline condition";
      } else if (!r.complete || !it->second->complete) {
        d.note = rr.note = "undefined: incomplete condition";
      } else {
        try {
          d.value = delta(r, *it->second);
        } catch (const Error& e) {
          d.note = std::string("undefined: ") + e.what();
        }
        try {
          rr.value = robustness_rate(r, *it->second);
        } catch (const UndefinedMetricError&) {
          rr.note = "undefined: baseline accuracy is 0";
        }
      }
      add(d);
      add(rr);
    }

    if (r.key.mitigation != MitigationStrategy::NoMitigation) {
      ConditionKey ref_key = r.key;
      ref_key.mitigation = MitigationStrategy::NoMitigation;
      ReportCell imp{r.key.model_id, r.key.dataset_id, r.key.bias, r.key.mitigation, "improvement", std::nullopt, ""};
      auto it = by_key.find(ref_key);
      if (it == by_key.end()) {
        imp.note = "undefined: no unmitigated condition";
      } else if (!r.complete || !it->second->complete) {
        imp.note = "undefined: incomplete condition";
      } else {
        imp.value = improvement(r, *it->second);
      }
      add(imp);
    }
  }

  // Group rows (unweighted mean over member models).
  std::set<std::string> known;
  for (const auto& m : meta) known.insert(m.model_id);
  const bool have_meta = !meta.empty() && std::all_of(models.begin(), models.end(),
                                                      [&](const std::string& id) { return known.count(id) > 0; });
  std::map<ModelGroup, std::map<GroupCellKey, GroupCell>> groups;
  if (have_meta) {
    for (ModelGroup g : {ModelGroup::LLM, ModelGroup::LRM}) {
      const bool any = std::any_of(meta.begin(), meta.end(), [&](const ModelMeta& m) {
        return m.is_lrm == (g == ModelGroup::LRM) &&
               std::find(models.begin(), models.end(), m.model_id) != models.end();
      });
      if (!any) continue;
      std::vector<ModelMeta> present;
      for (const auto& m : meta) {
        if (std::find(models.begin(), models.end(), m.model_id) != models.end()) present.push_back(m);
      }
      try {
        groups[g] = group_average(sorted, present, g);
      } catch (const Error&) {
        continue;
      }
      const std::string label(to_string(g));
      for (const auto& [key, cell] : groups[g]) {
        std::string note = "mean of " + std::to_string(cell.members.size()) + " model(s)";
        if (!cell.missing.empty()) note += "; missing " + std::to_string(cell.missing.size());
        add({label, key.dataset_id, key.bias, key.mitigation, "group_accuracy", cell.mean, note});
        if (key.mitigation != MitigationStrategy::NoMitigation) {
          auto ref = groups[g].find({key.dataset_id, key.bias, MitigationStrategy::NoMitigation});
          if (ref != groups[g].end()) {
            add({label, key.dataset_id, key.bias, key.mitigation, "group_improvement",
                 cell.mean - ref->second.mean, ""});
          }
        }
      }
    }
  }

  // Human-readable tables.
  auto find_cell = [&](const std::string& entity, const std::string& ds, const Column& c,
                       const std::string& metric) -> const ReportCell* {
    for (const auto& cell : report.cells) {
      if (cell.entity == entity && cell.dataset == ds && cell.bias == c.bias &&
          cell.mitigation == c.mitigation && cell.metric == metric) {
        return &cell;
      }
    }
    return nullptr;
  };

  std::ostringstream out;
  out << "Accuracy report. B=Baseline (no mitigation), T=Targeted, R=Self-Reflection.\n"
      << "Group rows are unweighted means over member models.\n";
  constexpr std::size_t kW = 8;
  std::size_t name_w = 14;
  for (const auto& m : models) name_w = std::max(name_w, m.size() + 2);

  for (const auto& ds : datasets) {
    const auto& cols = columns[ds];
    std::vector<BiasKind> biases;
    for (const auto& c : cols) {
      if (std::find(biases.begin(), biases.end(), c.bias) == biases.end()) biases.push_back(c.bias);
    }

    auto header = [&](const std::string& title, bool skip_baseline) {
      out << "\n" << title << " [" << ds << "]\n" << pad("", name_w);
      for (BiasKind b : biases) {
        if (skip_baseline && b == BiasKind::NoneBaseline) continue;
        std::size_t n = 0;
        for (const auto& c : cols) n += c.bias == b;
        out << "| " << pad(std::string(display_name(b)), n * kW - 2);
      }
      out << "\n" << pad("", name_w);
      for (const auto& c : cols) {
        if (skip_baseline && c.bias == BiasKind::NoneBaseline) continue;
        out << "| " << pad(std::string(column_letter(c.mitigation)), kW - 2);
      }
      out << "\n";
    };
    auto row = [&](const std::string& entity, const std::string& metric, bool skip_baseline,
                   bool signed_values, const std::string& label) {
      bool any = false;
      std::ostringstream line;
      line << pad(label, name_w);
      for (const auto& c : cols) {
        if (skip_baseline && c.bias == BiasKind::NoneBaseline) continue;
        const ReportCell* cell = find_cell(entity, ds, c, metric);
        std::string text;
        if (cell) {
          any = true;
          text = metric == "ambiguous" && cell->value
                     ? std::to_string(static_cast<long long>(*cell->value))
                     : cell_text(*cell, signed_values);
          if (metric == "accuracy" && !cell->value && !cell->note.empty() &&
              cell->note.rfind("incomplete", 0) == 0) {
            text = "inc";
          }
        }
        line << "| " << pad(text, kW - 2);
      }
      if (any) out << line.str() << "\n";
    };

    header("Accuracy", false);
    for (const auto& m : models) row(m, "accuracy", false, false, m);
    for (const auto& [g, cells] : groups) {
      (void)cells;
      const std::string label(to_string(g));
      row(label, "group_accuracy", false, false, label);
      row(label, "group_improvement", false, true, "  Improvement");
    }
    if (!have_meta) out << "(no model metadata: group rows omitted)\n";

    const bool has_biased = std::any_of(biases.begin(), biases.end(),
                                        [](BiasKind b) { return b != BiasKind::NoneBaseline; });
    if (has_biased) {
      header("Change vs clean baseline (same mitigation)", true);
      for (const auto& m : models) row(m, "delta", true, true, m);
      header("Robustness rate (biased / clean baseline accuracy)", true);
      for (const auto& m : models) row(m, "robustness_rate", true, false, m);
    }
    header("Improvement over unmitigated", false);
    for (const auto& m : models) row(m, "improvement", false, true, m);
    header("Ambiguous responses", false);
    for (const auto& m : models) row(m, "ambiguous", false, false, m);
  }

  std::vector<std::string> notes;
  for (const auto& c : report.cells) {
    if (!c.value && !c.note.empty()) {
      notes.push_back(c.entity + "/" + c.dataset + "/" + std::string(to_string(c.bias)) + "/" +
                      std::string(to_string(c.mitigation)) + " " + c.metric + ": " + c.note);
    }
  }
  if (!notes.empty()) {
    out << "\nUndefined cells:\n";
    for (const auto& n : notes) out << "  " << n << "\n";
  }
  report.text = out.str();
  return report;
}

Report emit_report(const std::vector<ConditionResult>& results, const std::vector<ModelMeta>& meta,
                   const std::filesystem::path& out_dir) {
  Report report = build_report(results, meta);
  std::filesystem::create_directories(out_dir);

  write_file(out_dir / "report.txt", report.text);

  json cells = json::array();
  for (const auto& c : report.cells) {
    cells.push_back({{"entity", c.entity},
                     {"dataset", c.dataset},
                     {"bias", to_string(c.bias)},
                     {"mitigation", to_string(c.mitigation)},
                     {"metric", c.metric},
                     {"value", c.value ? json(*c.value) : json(nullptr)},
                     {"note", c.note}});
  }
  write_file(out_dir / "report.json", json{{"tool_version", kToolVersion}, {"cells", cells}}.dump(2) + "\n");

  std::ostringstream lng;
  lng << "entity,dataset,bias,mitigation,metric,value,note\n";
  for (const auto& c : report.cells) {
    lng << csv_field(c.entity) << ',' << csv_field(c.dataset) << ',' << to_string(c.bias) << ','
        << to_string(c.mitigation) << ',' << c.metric << ',' << (c.value ? full_precision(*c.value) : "")
        << ',' << csv_field(c.note) << '\n';
  }
  write_file(out_dir / "report_long.csv", lng.str());

  // Wide table: one row per (entity, dataset, metric), one column per
  // bias/mitigation pair, values at report precision.
  std::vector<Column> cols;
  for (const auto& c : report.cells) {
    const Column col{c.bias, c.mitigation};
    if (std::find(cols.begin(), cols.end(), col) == cols.end()) cols.push_back(col);
  }
  std::sort(cols.begin(), cols.end());
  std::map<std::tuple<std::string, std::string, std::string>, std::map<Column, std::string>> rows;
  std::vector<std::tuple<std::string, std::string, std::string>> row_order;
  for (const auto& c : report.cells) {
    auto key = std::make_tuple(c.entity, c.dataset, c.metric);
    if (!rows.count(key)) row_order.push_back(key);
    rows[key][{c.bias, c.mitigation}] =
        c.metric == "ambiguous" && c.value ? std::to_string(static_cast<long long>(*c.value))
                                           : (c.value ? cell_text(c, is_signed_metric(c.metric)) : "undefined");
  }
  std::ostringstream wide;
  wide << "entity,dataset,metric";
  for (const auto& col : cols) wide << ',' << to_string(col.bias) << ':' << column_letter(col.mitigation);
  wide << '\n';
  for (const auto& key : row_order) {
    wide << csv_field(std::get<0>(key)) << ',' << csv_field(std::get<1>(key)) << ',' << std::get<2>(key);
    const auto& vals = rows[key];
    for (const auto& col : cols) {
      auto it = vals.find(col);
      wide << ',' << (it == vals.end() ? "" : it->second);
    }
    wide << '\n';
  }
  write_file(out_dir / "report.csv", wide.str());
  return report;
}

}  // namespace theater
