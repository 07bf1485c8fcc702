#pragma once

// Agreement between binary verdicts and gold labels.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nlilex/dataset.hpp"
#include "nlilex/detail/io.hpp"
#include "nlilex/error.hpp"
#include "nlilex/scorers.hpp"

namespace nlilex {

struct ConfusionMatrix {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }

  void add(int verdict, int gold) {
    if (verdict == 1) {
      ++(gold == 1 ? tp : fp);
    } else {
      ++(gold == 1 ? fn : tn);
    }
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

// Gold 1 means the humans judged the answer correct; verdict 1 with gold 1 is a TP.
inline ConfusionMatrix confusion(std::span<const int> verdicts, std::span<const int> golds) {
  if (verdicts.size() != golds.size()) {
    throw ValidationError("confusion: " + std::to_string(verdicts.size()) + " verdicts vs " +
                          std::to_string(golds.size()) + " gold labels");
  }
  if (verdicts.empty()) throw ValidationError("confusion: empty input");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < verdicts.size(); ++i) {
    if ((verdicts[i] != 0 && verdicts[i] != 1) || (golds[i] != 0 && golds[i] != 1)) {
      throw ValidationError("confusion: labels must be 0 or 1");
    }
    cm.add(verdicts[i], golds[i]);
  }
  return cm;
}

namespace detail {
inline void require_total(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw ValidationError("metric over an empty confusion matrix");
}
}  // namespace detail

inline double accuracy(const ConfusionMatrix& cm) {
  detail::require_total(cm);
  return static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
}

// 0 when there are no positives on either side.
inline double f1(const ConfusionMatrix& cm) {
  detail::require_total(cm);
  const auto denom = 2 * cm.tp + cm.fp + cm.fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(cm.tp) / static_cast<double>(denom);
}

// Matthews correlation; 0 when any marginal is empty.
inline double mcc(const ConfusionMatrix& cm) {
  detail::require_total(cm);
  const auto tp = static_cast<double>(cm.tp), tn = static_cast<double>(cm.tn);
  const auto fp = static_cast<double>(cm.fp), fn = static_cast<double>(cm.fn);
  const double a = tp + fp, b = tp + fn, c = tn + fp, d = tn + fn;
  if (a == 0 || b == 0 || c == 0 || d == 0) return 0.0;
  // One sqrt of the product: exact for perfect and inverted matrices.
  return (tp * tn - fp * fn) / std::sqrt(a * b * c * d);
}

struct MetricReport {
  std::string scorer_name;
  std::uint64_t n = 0;
  double accuracy = 0.0;
  double f1 = 0.0;
  double mcc = 0.0;
  // Absent only for reports restored from published tables.
  std::optional<ConfusionMatrix> confusion;
  std::uint64_t excluded_failures = 0;

  friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

inline MetricReport make_report(std::string scorer_name, const ConfusionMatrix& cm,
                                std::uint64_t excluded_failures = 0) {
  MetricReport r;
  r.scorer_name = std::move(scorer_name);
  r.n = cm.total();
  r.confusion = cm;
  r.excluded_failures = excluded_failures;
  if (cm.total() > 0) {
    r.accuracy = accuracy(cm);
    r.f1 = f1(cm);
    r.mcc = mcc(cm);
  }
  return r;
}

using GoldMap = std::map<std::string, int>;

namespace detail {

inline const ScoreRecord& check_gold(const ScoreRecord& r, const GoldMap& golds, int* gold) {
  auto it = golds.find(r.pair_id);
  if (it == golds.end()) {
    throw ValidationError("no gold label for scored pair '" + r.pair_id + "'");
  }
  *gold = it->second;
  return r;
}

}  // namespace detail

// Failed records are excluded from the metrics and counted separately.
inline MetricReport evaluate_scorer(std::span<const ScoreRecord> records, const GoldMap& golds,
                                    std::string scorer_name = {}) {
  if (scorer_name.empty() && !records.empty()) scorer_name = records.front().scorer_name;
  ConfusionMatrix cm;
  std::uint64_t failures = 0;
  for (const auto& r : records) {
    if (r.failed()) {
      ++failures;
      continue;
    }
    int gold = 0;
    detail::check_gold(r, golds, &gold);
    cm.add(r.verdict, gold);
  }
  return make_report(std::move(scorer_name), cm, failures);
}

enum class SliceBy { candidate_model, source_dataset };

inline std::string_view to_string(SliceBy s) {
  return s == SliceBy::candidate_model ? "candidate_model" : "source_dataset";
}

inline std::map<std::string, MetricReport> slice_report(std::span<const ScoreRecord> records,
                                                        const GoldMap& golds, const Corpus& corpus,
                                                        SliceBy by) {
  std::map<std::string, std::vector<ScoreRecord>> groups;
  for (const auto& r : records) {
    const QAPair* p = corpus.find(r.pair_id);
    if (!p) throw ValidationError("score record for unknown pair '" + r.pair_id + "'");
    groups[by == SliceBy::candidate_model ? p->candidate_model : p->source_dataset].push_back(r);
  }
  std::map<std::string, MetricReport> out;
  const std::string name = records.empty() ? std::string() : records.front().scorer_name;
  for (const auto& [key, group] : groups) out.emplace(key, evaluate_scorer(group, golds, name));
  return out;
}

// --- gold label files -------------------------------------------------------

// JSON object pair_id -> 0/1, the shape served by the annotation service.
inline GoldMap load_golds(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path.string() + ": malformed gold file: " + e.what());
  }
  if (!j.is_object()) throw ValidationError(path.string() + ": gold file must be a JSON object");
  GoldMap golds;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_number_integer() || (v.get<int>() != 0 && v.get<int>() != 1)) {
      throw ValidationError(path.string() + ": gold label for '" + k + "' must be 0 or 1");
    }
    golds[k] = v.get<int>();
  }
  return golds;
}

inline void save_golds(const GoldMap& golds, const std::filesystem::path& path) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [k, v] : golds) j[k] = v;
  detail::write_file(path, j.dump(2) + "\n");
}

}  // namespace nlilex
