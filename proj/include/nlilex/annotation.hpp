#pragma once

// Human labeling backend: who judges which partition, the judgment log,
// majority-vote gold labels and inter-annotator agreement.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nlilex/dataset.hpp"
#include "nlilex/detail/io.hpp"
#include "nlilex/error.hpp"
#include "nlilex/metrics.hpp"

namespace nlilex {

class UnknownPairError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class UnknownEvaluatorError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class AssignmentError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class IncompleteCoverageError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

struct PartitionAssignment {
  std::string evaluator_id;
  std::vector<std::string> partitions;

  friend bool operator==(const PartitionAssignment&, const PartitionAssignment&) = default;
};

// Round-robin: partition j goes to evaluators j·coverage … j·coverage+coverage-1
// (mod |evaluators|). Partitions keep input order within each assignment.
inline std::vector<PartitionAssignment> assign_partitions(const std::vector<std::string>& evaluators,
                                                          const std::vector<std::string>& partitions,
                                                          std::size_t coverage) {
  const std::size_t ne = evaluators.size(), np = partitions.size();
  if (coverage == 0) throw ValidationError("coverage must be positive");
  if (ne == 0 || np == 0) throw ValidationError("need at least one evaluator and one partition");
  if (coverage > ne) {
    throw ValidationError("infeasible: coverage " + std::to_string(coverage) + " exceeds " +
                          std::to_string(ne) + " evaluators");
  }
  if ((np * coverage) % ne != 0) {
    throw ValidationError("infeasible: " + std::to_string(np) + " partitions x coverage " +
                          std::to_string(coverage) + " do not split evenly over " +
                          std::to_string(ne) + " evaluators");
  }
  std::vector<PartitionAssignment> out;
  for (const auto& e : evaluators) out.push_back({e, {}});
  for (std::size_t j = 0; j < np; ++j) {
    for (std::size_t k = 0; k < coverage; ++k) {
      out[(j * coverage + k) % ne].partitions.push_back(partitions[j]);
    }
  }
  for (auto& a : out) {
    std::sort(a.partitions.begin(), a.partitions.end(), [&](const auto& x, const auto& y) {
      return std::find(partitions.begin(), partitions.end(), x) <
             std::find(partitions.begin(), partitions.end(), y);
    });
  }
  return out;
}

// The five-evaluator, five-partition, coverage-3 table used for the
// published benchmark's annotation.
inline std::vector<PartitionAssignment> published_assignment_preset() {
  return {{"1", {"d1", "d2", "d4"}},
          {"2", {"d1", "d3", "d5"}},
          {"3", {"d1", "d3", "d5"}},
          {"4", {"d2", "d3", "d4"}},
          {"5", {"d2", "d4", "d5"}}};
}

struct AnnotationConfig {
  std::size_t coverage = 3;
  // partition id -> source_dataset it holds, in display order
  std::vector<std::pair<std::string, std::string>> partitions;
  std::vector<PartitionAssignment> assignments;

  // Checks that every partition is covered by exactly `coverage` distinct
  // evaluators and that coverage is odd.
  void validate() const {
    if (coverage == 0 || coverage % 2 == 0) {
      throw ValidationError("coverage must be odd so majority vote is defined");
    }
    std::map<std::string, std::set<std::string>> covered;
    std::set<std::string> known;
    for (const auto& [pid, _] : partitions) {
      if (!known.insert(pid).second) throw ValidationError("duplicate partition '" + pid + "'");
    }
    std::set<std::string> evaluators;
    for (const auto& a : assignments) {
      if (!evaluators.insert(a.evaluator_id).second)
        throw ValidationError("duplicate evaluator '" + a.evaluator_id + "'");
      for (const auto& p : a.partitions) {
        if (!known.contains(p)) throw ValidationError("assignment names unknown partition '" + p + "'");
        if (!covered[p].insert(a.evaluator_id).second)
          throw ValidationError("evaluator '" + a.evaluator_id + "' listed twice for '" + p + "'");
      }
    }
    for (const auto& [pid, _] : partitions) {
      if (covered[pid].size() != coverage) {
        throw ValidationError("partition '" + pid + "' has " + std::to_string(covered[pid].size()) +
                              " evaluators, expected " + std::to_string(coverage));
      }
    }
  }

  // The published preset with d1..d5 bound to the five sources in table order.
  static AnnotationConfig published_preset() {
    AnnotationConfig c;
    c.coverage = 3;
    c.partitions = {{"d1", "AdversarialQA"}, {"d2", "SQuAD"}, {"d3", "MedQA"},
                    {"d4", "HotpotQA"},      {"d5", "TriviaQA"}};
    c.assignments = published_assignment_preset();
    return c;
  }
};

inline nlohmann::ordered_json to_json(const AnnotationConfig& c) {
  nlohmann::ordered_json j;
  j["coverage"] = c.coverage;
  j["partitions"] = nlohmann::ordered_json::array();
  for (const auto& [pid, src] : c.partitions)
    j["partitions"].push_back({{"id", pid}, {"source_dataset", src}});
  j["assignments"] = nlohmann::ordered_json::array();
  for (const auto& a : c.assignments)
    j["assignments"].push_back({{"evaluator_id", a.evaluator_id}, {"partitions", a.partitions}});
  return j;
}

inline AnnotationConfig annotation_config_from_json(const nlohmann::json& j) {
  AnnotationConfig c;
  try {
    c.coverage = j.value("coverage", std::size_t{3});
    for (const auto& p : j.at("partitions"))
      c.partitions.emplace_back(p.at("id").get<std::string>(), p.at("source_dataset").get<std::string>());
    for (const auto& a : j.at("assignments"))
      c.assignments.push_back({a.at("evaluator_id").get<std::string>(),
                               a.at("partitions").get<std::vector<std::string>>()});
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed annotation config: ") + e.what());
  }
  c.validate();
  return c;
}

inline AnnotationConfig load_annotation_config(const std::filesystem::path& path) {
  try {
    return annotation_config_from_json(nlohmann::json::parse(detail::read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

// --- judgments and gold labels ----------------------------------------------

struct Judgment {
  std::string evaluator_id;
  std::string pair_id;
  int verdict = 0;
  std::int64_t submitted_at = 0;  // milliseconds since the Unix epoch

  friend bool operator==(const Judgment&, const Judgment&) = default;
};

struct GoldLabel {
  std::string pair_id;
  int verdict = 0;
  std::size_t votes_for = 0;
  std::size_t votes_against = 0;

  friend bool operator==(const GoldLabel&, const GoldLabel&) = default;
};

inline GoldLabel majority_vote(const std::string& pair_id, std::span<const int> verdicts,
                               std::size_t coverage = 3) {
  if (coverage == 0 || coverage % 2 == 0) {
    throw ValidationError("majority vote needs an odd coverage, got " + std::to_string(coverage));
  }
  if (verdicts.size() != coverage) {
    throw IncompleteCoverageError("pair '" + pair_id + "' has " + std::to_string(verdicts.size()) +
                                  " judgments, expected " + std::to_string(coverage));
  }
  GoldLabel g{pair_id, 0, 0, 0};
  for (int v : verdicts) {
    if (v != 0 && v != 1) throw ValidationError("verdict must be 0 or 1");
    ++(v == 1 ? g.votes_for : g.votes_against);
  }
  g.verdict = g.votes_for > g.votes_against ? 1 : 0;
  return g;
}

inline GoldLabel majority_vote(std::span<const Judgment> judgments, std::size_t coverage = 3) {
  std::vector<int> v;
  for (const auto& j : judgments) v.push_back(j.verdict);
  return majority_vote(judgments.empty() ? std::string() : judgments.front().pair_id, v, coverage);
}

struct Agreement {
  double mcc = 0.0;
  double accuracy = 0.0;
  std::size_t n = 0;
};

// Agreement between two annotators over `scope`. A is treated as prediction
// and B as reference; MCC is symmetric so the roles do not matter.
inline Agreement pairwise_agreement(const std::map<std::string, int>& a,
                                    const std::map<std::string, int>& b,
                                    std::span<const std::string> scope) {
  if (scope.empty()) throw ValidationError("pairwise agreement over an empty scope");
  ConfusionMatrix cm;
  std::size_t same = 0;
  for (const auto& pid : scope) {
    auto ia = a.find(pid);
    auto ib = b.find(pid);
    if (ia == a.end() || ib == b.end()) {
      throw IncompleteCoverageError("pair '" + pid + "' not judged by both evaluators");
    }
    cm.add(ia->second, ib->second);
    same += ia->second == ib->second ? 1 : 0;
  }
  return {mcc(cm), static_cast<double>(same) / static_cast<double>(scope.size()), scope.size()};
}

struct Progress {
  std::size_t done = 0;
  std::size_t total = 0;
};

struct IaaRow {
  std::string label;  // "(1,2)": positions of the two evaluators in the partition
  std::string evaluator_a;
  std::string evaluator_b;
  Agreement agreement;
};

struct IaaModelTable {
  std::string candidate_model;
  std::vector<IaaRow> rows;
};

struct IaaPartition {
  std::string partition;
  std::string source_dataset;
  bool complete = false;
  std::map<std::string, std::size_t> missing;  // evaluator -> unjudged pairs
  std::vector<IaaModelTable> models;
};

struct IaaReport {
  std::vector<IaaPartition> partitions;
};

inline std::string format_fixed(double v, int decimals) {
  // "%.*f" rounds the exact binary value; halfway cases use round-half-even.
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  std::string s = buf;
  if (s.rfind("-0.", 0) == 0 && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
  return s;
}

// --- judgment store ---------------------------------------------------------

struct Acknowledgment {
  bool accepted = true;
  bool changed = false;  // false for an identical resubmission
};

// Judgments for one corpus, persisted to an append-only log. On open the log
// is replayed and later lines win. Reads run concurrently; writes serialize.
class JudgmentStore {
 public:
  using Clock = std::function<std::int64_t()>;

  static std::int64_t system_clock_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
  }

  JudgmentStore(const Corpus& corpus, AnnotationConfig config,
                std::optional<std::filesystem::path> log_path = std::nullopt,
                Clock clock = system_clock_ms)
      : corpus_(corpus), config_(std::move(config)), clock_(std::move(clock)) {
    config_.validate();
    std::map<std::string, std::string> source_to_partition;
    for (const auto& [pid, src] : config_.partitions) {
      source_to_partition[src] = pid;
      partition_pairs_[pid];
    }
    for (const QAPair& p : corpus_) {
      auto it = source_to_partition.find(p.source_dataset);
      if (it == source_to_partition.end()) continue;
      pair_partition_[p.pair_id] = it->second;
      partition_pairs_[it->second].push_back(p.pair_id);
    }
    for (const auto& a : config_.assignments) {
      for (const auto& p : a.partitions) partition_evaluators_[p].push_back(a.evaluator_id);
      evaluator_partitions_[a.evaluator_id] =
          std::set<std::string>(a.partitions.begin(), a.partitions.end());
    }
    if (log_path) {
      if (std::filesystem::exists(*log_path)) replay(*log_path);
      log_.emplace(*log_path);
    }
  }

  const Corpus& corpus() const { return corpus_; }
  const AnnotationConfig& config() const { return config_; }

  Acknowledgment record(Judgment j) {
    if (j.verdict != 0 && j.verdict != 1) throw ValidationError("verdict must be 0 or 1");
    check_assignment(j.evaluator_id, j.pair_id);
    std::unique_lock lock(mu_);
    auto& slot = verdicts_[j.evaluator_id];
    if (auto it = slot.find(j.pair_id); it != slot.end() && it->second.verdict == j.verdict) {
      return {true, false};
    }
    if (j.submitted_at == 0) j.submitted_at = clock_();
    if (log_) log_->append_line(to_json(j).dump());
    slot[j.pair_id] = j;
    return {true, true};
  }

  Acknowledgment record(const std::string& evaluator, const std::string& pair_id, int verdict) {
    return record(Judgment{evaluator, pair_id, verdict, 0});
  }

  // Lowest unjudged pair_id within the evaluator's partitions.
  std::optional<QAPair> next_task(const std::string& evaluator) const {
    const auto& parts = partitions_of(evaluator);
    std::shared_lock lock(mu_);
    const auto* judged = find_verdicts(evaluator);
    std::optional<std::string> best;
    for (const auto& part : parts) {
      for (const auto& pid : partition_pairs_.at(part)) {
        if (judged && judged->contains(pid)) continue;
        if (!best || pid < *best) best = pid;
        break;  // partition lists are sorted
      }
    }
    if (!best) return std::nullopt;
    return *corpus_.find(*best);
  }

  Progress progress(const std::string& evaluator) const {
    const auto& parts = partitions_of(evaluator);
    std::shared_lock lock(mu_);
    const auto* judged = find_verdicts(evaluator);
    Progress p;
    for (const auto& part : parts) {
      for (const auto& pid : partition_pairs_.at(part)) {
        ++p.total;
        if (judged && judged->contains(pid)) ++p.done;
      }
    }
    return p;
  }

  // Judgments made / judgments required within one partition.
  Progress partition_progress(const std::string& partition) const {
    std::shared_lock lock(mu_);
    Progress p;
    const auto& pairs = partition_pairs_.at(partition);
    for (const auto& e : evaluators_of(partition)) {
      const auto* judged = find_verdicts(e);
      for (const auto& pid : pairs) {
        ++p.total;
        if (judged && judged->contains(pid)) ++p.done;
      }
    }
    return p;
  }

  std::map<std::string, int> verdicts_of(const std::string& evaluator) const {
    std::shared_lock lock(mu_);
    std::map<std::string, int> out;
    if (const auto* judged = find_verdicts(evaluator)) {
      for (const auto& [pid, j] : *judged) out[pid] = j.verdict;
    }
    return out;
  }

  std::vector<Judgment> judgments_for(const std::string& pair_id) const {
    auto part = pair_partition_.find(pair_id);
    if (part == pair_partition_.end()) throw UnknownPairError("unknown pair '" + pair_id + "'");
    std::shared_lock lock(mu_);
    std::vector<Judgment> out;
    for (const auto& e : evaluators_of(part->second)) {
      if (const auto* judged = find_verdicts(e)) {
        if (auto it = judged->find(pair_id); it != judged->end()) out.push_back(it->second);
      }
    }
    return out;
  }

  // Present once every assigned evaluator has judged the pair.
  std::optional<GoldLabel> gold_for(const std::string& pair_id) const {
    const auto js = judgments_for(pair_id);
    if (js.size() != config_.coverage) return std::nullopt;
    auto g = majority_vote(js, config_.coverage);
    g.pair_id = pair_id;
    return g;
  }

  std::size_t incomplete_pairs() const {
    std::size_t n = 0;
    for (const auto& [pid, _] : pair_partition_) n += gold_for(pid) ? 0 : 1;
    return n;
  }

  // Gold labels for every pair with full coverage.
  std::map<std::string, GoldLabel> gold_labels() const {
    std::map<std::string, GoldLabel> out;
    for (const auto& [pid, _] : pair_partition_) {
      if (auto g = gold_for(pid)) out.emplace(pid, *g);
    }
    return out;
  }

  const std::vector<std::string>& evaluators_of(const std::string& partition) const {
    static const std::vector<std::string> none;
    auto it = partition_evaluators_.find(partition);
    return it == partition_evaluators_.end() ? none : it->second;
  }

  const std::vector<std::string>& pairs_of(const std::string& partition) const {
    return partition_pairs_.at(partition);
  }

  const std::set<std::string>& partitions_of(const std::string& evaluator) const {
    auto it = evaluator_partitions_.find(evaluator);
    if (it == evaluator_partitions_.end()) {
      throw UnknownEvaluatorError("unknown evaluator '" + evaluator + "'");
    }
    return it->second;
  }

  std::vector<std::string> evaluators() const {
    std::vector<std::string> out;
    for (const auto& a : config_.assignments) out.push_back(a.evaluator_id);
    return out;
  }

  static nlohmann::ordered_json to_json(const Judgment& j) {
    nlohmann::ordered_json o;
    o["evaluator_id"] = j.evaluator_id;
    o["pair_id"] = j.pair_id;
    o["verdict"] = j.verdict;
    o["submitted_at"] = j.submitted_at;
    return o;
  }

 private:
  void check_assignment(const std::string& evaluator, const std::string& pair_id) const {
    if (!corpus_.find(pair_id)) throw UnknownPairError("unknown pair '" + pair_id + "'");
    auto part = pair_partition_.find(pair_id);
    if (part == pair_partition_.end()) {
      throw AssignmentError("pair '" + pair_id + "' belongs to no partition");
    }
    auto ev = evaluator_partitions_.find(evaluator);
    if (ev == evaluator_partitions_.end() || !ev->second.contains(part->second)) {
      throw AssignmentError("evaluator '" + evaluator + "' is not assigned to partition '" +
                            part->second + "'");
    }
  }

  const std::map<std::string, Judgment>* find_verdicts(const std::string& evaluator) const {
    auto it = verdicts_.find(evaluator);
    return it == verdicts_.end() ? nullptr : &it->second;
  }

  void replay(const std::filesystem::path& path) {
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
      Judgment j;
      try {
        const auto o = nlohmann::json::parse(line);
        j = {o.at("evaluator_id").get<std::string>(), o.at("pair_id").get<std::string>(),
             o.at("verdict").get<int>(), o.at("submitted_at").get<std::int64_t>()};
      } catch (const nlohmann::json::exception&) {
        continue;  // torn tail from a crash mid-write; it was never acknowledged
      }
      check_assignment(j.evaluator_id, j.pair_id);
      verdicts_[j.evaluator_id][j.pair_id] = j;
    }
  }

  const Corpus& corpus_;
  AnnotationConfig config_;
  Clock clock_;
  std::map<std::string, std::string> pair_partition_;
  std::map<std::string, std::vector<std::string>> partition_pairs_;
  std::map<std::string, std::vector<std::string>> partition_evaluators_;
  std::map<std::string, std::set<std::string>> evaluator_partitions_;

  mutable std::shared_mutex mu_;
  std::map<std::string, std::map<std::string, Judgment>> verdicts_;
  std::optional<detail::DurableAppender> log_;
};

// Per partition and candidate model, agreement for every evaluator pair.
// Partitions with unjudged pairs report their gaps instead of metrics.
inline IaaReport iaa_report(const JudgmentStore& store) {
  IaaReport report;
  for (const auto& [pid, source] : store.config().partitions) {
    IaaPartition part;
    part.partition = pid;
    part.source_dataset = source;
    const auto& evaluators = store.evaluators_of(pid);
    const auto& pairs = store.pairs_of(pid);
    std::vector<std::map<std::string, int>> verdicts;
    for (const auto& e : evaluators) {
      verdicts.push_back(store.verdicts_of(e));
      std::size_t missing = 0;
      for (const auto& p : pairs) missing += verdicts.back().contains(p) ? 0 : 1;
      if (missing > 0) part.missing[e] = missing;
    }
    part.complete = part.missing.empty() && !pairs.empty();
    if (part.complete) {
      std::map<std::string, std::vector<std::string>> by_model;
      for (const auto& p : pairs) by_model[store.corpus().find(p)->candidate_model].push_back(p);
      for (const auto& [model, scope] : by_model) {
        IaaModelTable table{model, {}};
        for (std::size_t a = 0; a < evaluators.size(); ++a) {
          for (std::size_t b = a + 1; b < evaluators.size(); ++b) {
            table.rows.push_back({"(" + std::to_string(a + 1) + "," + std::to_string(b + 1) + ")",
                                  evaluators[a], evaluators[b],
                                  pairwise_agreement(verdicts[a], verdicts[b], scope)});
          }
        }
        part.models.push_back(std::move(table));
      }
    }
    report.partitions.push_back(std::move(part));
  }
  return report;
}

inline nlohmann::ordered_json to_json(const IaaReport& report) {
  nlohmann::ordered_json j;
  j["partitions"] = nlohmann::ordered_json::array();
  for (const auto& p : report.partitions) {
    nlohmann::ordered_json pj;
    pj["partition"] = p.partition;
    pj["source_dataset"] = p.source_dataset;
    pj["complete"] = p.complete;
    pj["missing"] = nlohmann::ordered_json::object();
    for (const auto& [e, n] : p.missing) pj["missing"][e] = n;
    pj["models"] = nlohmann::ordered_json::array();
    for (const auto& m : p.models) {
      nlohmann::ordered_json mj;
      mj["candidate_model"] = m.candidate_model;
      mj["rows"] = nlohmann::ordered_json::array();
      for (const auto& r : m.rows) {
        mj["rows"].push_back({{"pair", r.label},
                              {"evaluator_a", r.evaluator_a},
                              {"evaluator_b", r.evaluator_b},
                              {"n", r.agreement.n},
                              {"mcc", format_fixed(r.agreement.mcc, 3)},
                              {"accuracy", format_fixed(r.agreement.accuracy, 3)}});
      }
      pj["models"].push_back(std::move(mj));
    }
    j["partitions"].push_back(std::move(pj));
  }
  return j;
}

inline std::string to_text(const IaaReport& report) {
  std::string out;
  char line[256];
  for (const auto& p : report.partitions) {
    out += "Inter-annotator agreement: partition " + p.partition + " (" + p.source_dataset + ")\n";
    if (!p.complete) {
      out += "  incomplete:";
      for (const auto& [e, n] : p.missing) out += " evaluator " + e + " missing " + std::to_string(n) + ";";
      if (p.missing.empty()) out += " no pairs";
      out += "\n\n";
      continue;
    }
    std::snprintf(line, sizeof line, "  %-24s %-10s %7s %9s\n", "Model", "Pair", "MCC", "Accuracy");
    out += line;
    for (const auto& m : p.models) {
      bool first = true;
      for (const auto& r : m.rows) {
        std::snprintf(line, sizeof line, "  %-24s %-10s %7s %9s\n",
                      first ? m.candidate_model.c_str() : "", r.label.c_str(),
                      format_fixed(r.agreement.mcc, 3).c_str(),
                      format_fixed(r.agreement.accuracy, 3).c_str());
        out += line;
        first = false;
      }
    }
    out += "\n";
  }
  return out;
}

}  // namespace nlilex
