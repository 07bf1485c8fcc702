#pragma once

// Evaluation bundles and their rendering: global and sliced metric tables,
// plus the compute-vs-MCC points.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nlilex/annotation.hpp"
#include "nlilex/detail/io.hpp"
#include "nlilex/error.hpp"
#include "nlilex/metrics.hpp"
#include "nlilex/scorers.hpp"

namespace nlilex {

struct EvaluationBundle {
  std::string corpus_name;
  std::vector<ScorerDescriptor> descriptors;
  std::map<std::string, std::vector<ScoreRecord>> records;  // scorer name -> records
  std::vector<MetricReport> reports;
  std::map<std::string, std::vector<MetricReport>> by_candidate_model;
  std::map<std::string, std::vector<MetricReport>> by_source_dataset;
  std::map<std::string, std::string> failed_scorers;  // scorer name -> reason
};

enum class SortKey { mcc, accuracy };

inline SortKey parse_sort_key(const std::string& s) {
  if (s == "mcc") return SortKey::mcc;
  if (s == "accuracy") return SortKey::accuracy;
  throw ValidationError("unknown sort key '" + s + "' (expected mcc or accuracy)");
}

// Ascending by the key, ties broken by scorer name.
inline std::vector<MetricReport> sorted_reports(std::vector<MetricReport> rows, SortKey key) {
  std::stable_sort(rows.begin(), rows.end(), [key](const MetricReport& a, const MetricReport& b) {
    const double ka = key == SortKey::mcc ? a.mcc : a.accuracy;
    const double kb = key == SortKey::mcc ? b.mcc : b.accuracy;
    if (ka != kb) return ka < kb;
    return a.scorer_name < b.scorer_name;
  });
  return rows;
}

enum class ReportFormat { text, csv, json, markdown };

inline ReportFormat parse_report_format(const std::string& s) {
  if (s == "table-text" || s == "text") return ReportFormat::text;
  if (s == "csv") return ReportFormat::csv;
  if (s == "json") return ReportFormat::json;
  if (s == "markdown" || s == "md") return ReportFormat::markdown;
  throw ValidationError("unknown report format '" + s + "'");
}

inline std::string extension(ReportFormat f) {
  switch (f) {
    case ReportFormat::text: return ".txt";
    case ReportFormat::csv: return ".csv";
    case ReportFormat::json: return ".json";
    case ReportFormat::markdown: return ".md";
  }
  return ".txt";
}

namespace detail {

struct ColumnMax {
  double accuracy = 0, f1 = 0, mcc = 0;
};

// Maxima compare the printed four-decimal values, so ties display as ties.
inline ColumnMax column_max(const std::vector<MetricReport>& rows) {
  ColumnMax m{-2, -2, -2};
  for (const auto& r : rows) {
    m.accuracy = std::max(m.accuracy, std::stod(format_fixed(r.accuracy, 4)));
    m.f1 = std::max(m.f1, std::stod(format_fixed(r.f1, 4)));
    m.mcc = std::max(m.mcc, std::stod(format_fixed(r.mcc, 4)));
  }
  return m;
}

inline bool is_max(double v, double max) { return std::stod(format_fixed(v, 4)) == max; }

}  // namespace detail

namespace detail {
inline std::string rstrip(std::string s) {
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}
}  // namespace detail

// Aligned four-decimal table; "*" marks each column's maximum.
inline std::string render_text(const std::vector<MetricReport>& rows, const std::string& title) {
  std::size_t width = 9;  // "Evaluator"
  for (const auto& r : rows) width = std::max(width, r.scorer_name.size());
  const auto max = detail::column_max(rows);
  auto cell = [](double v, bool best) { return format_fixed(v, 4) + (best ? "*" : " "); };
  std::string out = title + "\n";
  char line[512];
  std::snprintf(line, sizeof line, "%-*s  %8s   %8s   %8s", static_cast<int>(width),
                "Evaluator", "Accuracy", "F1-score", "MCC");
  out += detail::rstrip(line) + "\n";
  out += std::string(width + 2 + 9 + 2 + 9 + 2 + 9, '-') + "\n";
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-*s  %9s  %9s  %9s", static_cast<int>(width),
                  r.scorer_name.c_str(), cell(r.accuracy, detail::is_max(r.accuracy, max.accuracy)).c_str(),
                  cell(r.f1, detail::is_max(r.f1, max.f1)).c_str(),
                  cell(r.mcc, detail::is_max(r.mcc, max.mcc)).c_str());
    out += detail::rstrip(line) + "\n";
  }
  out += "* column maximum\n";
  return out;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string render_csv(const std::vector<MetricReport>& rows) {
  std::string out = "evaluator,accuracy,f1,mcc,n,excluded_failures,tp,tn,fp,fn\n";
  for (const auto& r : rows) {
    out += csv_field(r.scorer_name) + "," + format_fixed(r.accuracy, 4) + "," +
           format_fixed(r.f1, 4) + "," + format_fixed(r.mcc, 4) + "," + std::to_string(r.n) + "," +
           std::to_string(r.excluded_failures);
    if (r.confusion) {
      out += "," + std::to_string(r.confusion->tp) + "," + std::to_string(r.confusion->tn) + "," +
             std::to_string(r.confusion->fp) + "," + std::to_string(r.confusion->fn);
    } else {
      out += ",,,,";
    }
    out += "\n";
  }
  return out;
}

inline std::string render_markdown(const std::vector<MetricReport>& rows, const std::string& title) {
  const auto max = detail::column_max(rows);
  auto cell = [](double v, bool best) {
    const auto s = format_fixed(v, 4);
    return best ? "**" + s + "**" : s;
  };
  std::string out = "### " + title + "\n\n| Evaluator | Accuracy | F1-score | MCC |\n|---|---|---|---|\n";
  for (const auto& r : rows) {
    const bool all_best = detail::is_max(r.accuracy, max.accuracy) &&
                          detail::is_max(r.f1, max.f1) && detail::is_max(r.mcc, max.mcc);
    out += "| " + (all_best ? "**" + r.scorer_name + "**" : r.scorer_name) + " | " +
           cell(r.accuracy, detail::is_max(r.accuracy, max.accuracy)) + " | " +
           cell(r.f1, detail::is_max(r.f1, max.f1)) + " | " +
           cell(r.mcc, detail::is_max(r.mcc, max.mcc)) + " |\n";
  }
  return out;
}

inline nlohmann::ordered_json to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["scorer_name"] = r.scorer_name;
  j["n"] = r.n;
  j["accuracy"] = r.accuracy;
  j["f1"] = r.f1;
  j["mcc"] = r.mcc;
  if (r.confusion) {
    j["confusion"] = {{"tp", r.confusion->tp}, {"tn", r.confusion->tn},
                      {"fp", r.confusion->fp}, {"fn", r.confusion->fn}};
  }
  j["excluded_failures"] = r.excluded_failures;
  return j;
}

inline MetricReport metric_report_from_json(const nlohmann::json& j) {
  MetricReport r;
  try {
    r.scorer_name = j.at("scorer_name").get<std::string>();
    r.n = j.value("n", std::uint64_t{0});
    r.accuracy = j.at("accuracy").get<double>();
    r.f1 = j.at("f1").get<double>();
    r.mcc = j.at("mcc").get<double>();
    if (j.contains("confusion")) {
      const auto& c = j.at("confusion");
      r.confusion = ConfusionMatrix{c.at("tp").get<std::uint64_t>(), c.at("tn").get<std::uint64_t>(),
                                    c.at("fp").get<std::uint64_t>(), c.at("fn").get<std::uint64_t>()};
    }
    r.excluded_failures = j.value("excluded_failures", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed metric report: ") + e.what());
  }
  return r;
}

inline std::string render_json(const std::vector<MetricReport>& rows, const std::string& title) {
  nlohmann::ordered_json j;
  j["title"] = title;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) j["rows"].push_back(to_json(r));
  return j.dump(2) + "\n";
}

inline std::string render(ReportFormat f, const std::vector<MetricReport>& rows,
                          const std::string& title) {
  switch (f) {
    case ReportFormat::text: return render_text(rows, title);
    case ReportFormat::csv: return render_csv(rows);
    case ReportFormat::json: return render_json(rows, title);
    case ReportFormat::markdown: return render_markdown(rows, title);
  }
  return {};
}

// --- compute vs performance -------------------------------------------------

struct CostPoint {
  std::string scorer_name;
  std::uint64_t active_param_count = 0;
  double mcc = 0.0;

  friend bool operator==(const CostPoint&, const CostPoint&) = default;
};

inline std::vector<CostPoint> cost_performance(const std::vector<MetricReport>& reports,
                                               const std::vector<ScorerDescriptor>& descriptors) {
  std::vector<CostPoint> out;
  for (const auto& r : reports) {
    auto it = std::find_if(descriptors.begin(), descriptors.end(),
                           [&](const ScorerDescriptor& d) { return d.name == r.scorer_name; });
    if (it == descriptors.end()) {
      throw ValidationError("no descriptor for scorer '" + r.scorer_name + "'");
    }
    out.push_back({r.scorer_name, it->active_param_count, r.mcc});
  }
  return out;
}

inline std::string cost_points_csv(const std::vector<CostPoint>& points) {
  std::string out = "name,params,mcc\n";
  for (const auto& p : points) {
    out += csv_field(p.scorer_name) + "," + std::to_string(p.active_param_count) + "," +
           format_fixed(p.mcc, 4) + "\n";
  }
  return out;
}

inline std::string cost_points_json(const std::vector<CostPoint>& points) {
  nlohmann::ordered_json j;
  j["points"] = nlohmann::ordered_json::array();
  for (const auto& p : points) {
    j["points"].push_back({{"name", p.scorer_name}, {"params", p.active_param_count}, {"mcc", p.mcc}});
  }
  return j.dump(2) + "\n";
}

// --- bundle files -----------------------------------------------------------

inline nlohmann::ordered_json to_json(const ScorerDescriptor& d) {
  nlohmann::ordered_json j;
  j["name"] = d.name;
  j["kind"] = std::string(to_string(d.kind));
  j["active_param_count"] = d.active_param_count;
  return j;
}

inline nlohmann::ordered_json to_json(const EvaluationBundle& b) {
  nlohmann::ordered_json j;
  j["corpus_name"] = b.corpus_name;
  j["descriptors"] = nlohmann::ordered_json::array();
  for (const auto& d : b.descriptors) j["descriptors"].push_back(to_json(d));
  j["reports"] = nlohmann::ordered_json::array();
  for (const auto& r : b.reports) j["reports"].push_back(to_json(r));
  auto slices = [](const std::map<std::string, std::vector<MetricReport>>& m) {
    nlohmann::ordered_json s = nlohmann::ordered_json::object();
    for (const auto& [k, rows] : m) {
      s[k] = nlohmann::ordered_json::array();
      for (const auto& r : rows) s[k].push_back(to_json(r));
    }
    return s;
  };
  j["by_candidate_model"] = slices(b.by_candidate_model);
  j["by_source_dataset"] = slices(b.by_source_dataset);
  j["failed_scorers"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : b.failed_scorers) j["failed_scorers"][k] = v;
  return j;
}

inline EvaluationBundle bundle_from_json(const nlohmann::json& j) {
  EvaluationBundle b;
  try {
    b.corpus_name = j.value("corpus_name", "");
    if (j.contains("descriptors")) {
      for (const auto& d : j.at("descriptors")) {
        ScorerDescriptor sd;
        sd.name = d.at("name").get<std::string>();
        sd.kind = parse_scorer_kind(d.value("kind", "external"));
        sd.active_param_count = d.value("active_param_count", std::uint64_t{0});
        b.descriptors.push_back(std::move(sd));
      }
    }
    for (const auto& r : j.at("reports")) b.reports.push_back(metric_report_from_json(r));
    auto slices = [](const nlohmann::json& s, std::map<std::string, std::vector<MetricReport>>& m) {
      for (const auto& [k, rows] : s.items())
        for (const auto& r : rows) m[k].push_back(metric_report_from_json(r));
    };
    if (j.contains("by_candidate_model")) slices(j.at("by_candidate_model"), b.by_candidate_model);
    if (j.contains("by_source_dataset")) slices(j.at("by_source_dataset"), b.by_source_dataset);
    if (j.contains("failed_scorers"))
      for (const auto& [k, v] : j.at("failed_scorers").items()) b.failed_scorers[k] = v.get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed bundle: ") + e.what());
  }
  return b;
}

inline EvaluationBundle load_bundle(const std::filesystem::path& path) {
  try {
    return bundle_from_json(nlohmann::json::parse(detail::read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

inline void save_bundle(const EvaluationBundle& b, const std::filesystem::path& path) {
  detail::write_file(path, to_json(b).dump(2) + "\n");
}

// --- emission ---------------------------------------------------------------

inline std::string slice_file_stem(const std::string& key) {
  std::string out;
  for (char c : key) {
    const auto u = static_cast<unsigned char>(c);
    out.push_back(std::isalnum(u) || c == '-' || c == '_' || c == '.' ? c : '_');
  }
  return out.empty() ? "_" : out;
}

struct EmitOptions {
  std::vector<ReportFormat> formats = {ReportFormat::text, ReportFormat::csv, ReportFormat::json,
                                       ReportFormat::markdown};
  SortKey sort = SortKey::mcc;
  std::string title = "Performance of evaluators against human judgment";
};

// Writes the global table, one table per slice and the cost points.
// Returns the written paths in emission order.
inline std::vector<std::filesystem::path> report_emit(const EvaluationBundle& bundle,
                                                      const std::filesystem::path& out_dir,
                                                      const EmitOptions& opt = {}) {
  if (bundle.reports.empty()) throw ValidationError("bundle has no scorer reports");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) {
    throw IoError("cannot create output directory " + out_dir.string());
  }
  std::vector<std::filesystem::path> written;
  auto emit = [&](const std::filesystem::path& stem, const std::vector<MetricReport>& rows,
                  const std::string& title) {
    const auto sorted = sorted_reports(rows, opt.sort);
    for (auto f : opt.formats) {
      auto path = stem;
      path += extension(f);
      detail::write_file(path, render(f, sorted, title));
      written.push_back(path);
    }
  };
  emit(out_dir / "global", bundle.reports, opt.title);
  for (const auto& [key, rows] : bundle.by_candidate_model) {
    emit(out_dir / "by_candidate_model" / slice_file_stem(key), rows,
         opt.title + " (candidate model: " + key + ")");
  }
  for (const auto& [key, rows] : bundle.by_source_dataset) {
    emit(out_dir / "by_source_dataset" / slice_file_stem(key), rows,
         opt.title + " (source dataset: " + key + ")");
  }
  if (!bundle.descriptors.empty()) {
    const auto points = cost_performance(bundle.reports, bundle.descriptors);
    detail::write_file(out_dir / "cost_performance.csv", cost_points_csv(points));
    detail::write_file(out_dir / "cost_performance.json", cost_points_json(points));
    written.push_back(out_dir / "cost_performance.csv");
    written.push_back(out_dir / "cost_performance.json");
  }
  return written;
}

}  // namespace nlilex
