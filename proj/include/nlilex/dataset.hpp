#pragma once

// QA pair records, corpus ingestion and assembly.

#include <algorithm>
#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "nlilex/detail/io.hpp"
#include "nlilex/error.hpp"
#include "nlilex/text.hpp"

namespace nlilex {

struct QAPair {
  std::string pair_id;
  std::string source_dataset;
  std::string question_id;
  std::string question;
  std::string reference_answer;
  std::string candidate_model;
  std::string candidate_answer;

  friend bool operator==(const QAPair&, const QAPair&) = default;
};

inline constexpr std::array<const char*, 7> kQAPairFields = {
    "pair_id",          "source_dataset",  "question_id",     "question",
    "reference_answer", "candidate_model", "candidate_answer"};

inline std::string make_pair_id(std::string_view source, std::string_view question_id,
                                std::string_view model) {
  std::string id;
  id.reserve(source.size() + question_id.size() + model.size() + 2);
  id.append(source).append("/").append(question_id).append("/").append(model);
  return id;
}

inline nlohmann::ordered_json to_json(const QAPair& p) {
  nlohmann::ordered_json j;
  j["pair_id"] = p.pair_id;
  j["source_dataset"] = p.source_dataset;
  j["question_id"] = p.question_id;
  j["question"] = p.question;
  j["reference_answer"] = p.reference_answer;
  j["candidate_model"] = p.candidate_model;
  j["candidate_answer"] = p.candidate_answer;
  return j;
}

// A validated, pair_id-sorted set of QA pairs.
class Corpus {
 public:
  Corpus() = default;

  // Validates every invariant; throws ValidationError on the first violation.
  Corpus(std::string name, std::vector<QAPair> pairs) : name_(std::move(name)) {
    std::sort(pairs.begin(), pairs.end(),
              [](const QAPair& a, const QAPair& b) { return a.pair_id < b.pair_id; });
    std::set<std::pair<std::string, std::string>> question_model;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const QAPair& p = pairs[i];
      check_pair(p);
      if (i > 0 && pairs[i - 1].pair_id == p.pair_id) {
        throw ValidationError("duplicate pair_id '" + p.pair_id + "'");
      }
      if (!question_model.emplace(p.question_id, p.candidate_model).second) {
        throw ValidationError("duplicate (question_id, candidate_model) ('" +
                              p.question_id + "', '" + p.candidate_model + "')");
      }
      ++per_source_[p.source_dataset];
    }
    pairs_ = std::move(pairs);
    for (std::size_t i = 0; i < pairs_.size(); ++i) index_.emplace(pairs_[i].pair_id, i);
  }

  static void check_pair(const QAPair& p) {
    if (p.pair_id.empty()) throw ValidationError("empty pair_id");
    if (text::is_blank(p.question))
      throw ValidationError("pair '" + p.pair_id + "': question is blank");
    if (text::is_blank(p.reference_answer))
      throw ValidationError("pair '" + p.pair_id + "': reference_answer is blank");
    if (text::is_blank(p.candidate_answer))
      throw ValidationError("pair '" + p.pair_id + "': candidate_answer is blank");
  }

  const std::string& name() const { return name_; }
  const std::vector<QAPair>& pairs() const { return pairs_; }
  const std::map<std::string, std::size_t>& per_source_counts() const { return per_source_; }
  std::size_t size() const { return pairs_.size(); }
  bool empty() const { return pairs_.empty(); }

  auto begin() const { return pairs_.begin(); }
  auto end() const { return pairs_.end(); }

  const QAPair* find(const std::string& pair_id) const {
    auto it = index_.find(pair_id);
    return it == index_.end() ? nullptr : &pairs_[it->second];
  }

  friend bool operator==(const Corpus& a, const Corpus& b) {
    return a.name_ == b.name_ && a.pairs_ == b.pairs_;
  }

 private:
  std::string name_;
  std::vector<QAPair> pairs_;
  std::map<std::string, std::size_t> per_source_;
  std::map<std::string, std::size_t> index_;
};

namespace detail {

inline std::string require_string(const nlohmann::json& obj, const char* field,
                                  const std::string& where) {
  auto it = obj.find(field);
  if (it == obj.end()) throw ValidationError(where + ": missing required field '" + field + "'");
  if (!it->is_string()) throw ValidationError(where + ": field '" + field + "' must be a string");
  return it->get<std::string>();
}

}  // namespace detail

// Reads one QAPair per line. Every failure names the offending line.
inline Corpus load_corpus(const std::filesystem::path& path) {
  std::vector<QAPair> pairs;
  std::map<std::string, std::size_t> seen_ids;
  std::map<std::pair<std::string, std::string>, std::size_t> seen_qm;
  detail::for_each_jsonl(path, [&](std::size_t lineno, const nlohmann::json& obj) {
    const std::string where = path.string() + ":" + std::to_string(lineno);
    QAPair p;
    p.pair_id = detail::require_string(obj, "pair_id", where);
    p.source_dataset = detail::require_string(obj, "source_dataset", where);
    p.question_id = detail::require_string(obj, "question_id", where);
    p.question = detail::require_string(obj, "question", where);
    p.reference_answer = detail::require_string(obj, "reference_answer", where);
    p.candidate_model = detail::require_string(obj, "candidate_model", where);
    p.candidate_answer = detail::require_string(obj, "candidate_answer", where);
    try {
      Corpus::check_pair(p);
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
    if (auto [it, fresh] = seen_ids.emplace(p.pair_id, lineno); !fresh) {
      throw ValidationError(where + ": duplicate pair_id '" + p.pair_id +
                            "' (first seen on line " + std::to_string(it->second) + ")");
    }
    if (auto [it, fresh] = seen_qm.emplace(std::pair{p.question_id, p.candidate_model}, lineno);
        !fresh) {
      throw ValidationError(where + ": duplicate (question_id, candidate_model) (first seen on line " +
                            std::to_string(it->second) + ")");
    }
    pairs.push_back(std::move(p));
  });
  if (pairs.empty()) throw ValidationError(path.string() + ": empty corpus file");
  return Corpus(path.stem().string(), std::move(pairs));
}

inline std::string serialize_corpus(const Corpus& corpus) {
  std::string out;
  for (const QAPair& p : corpus) {
    out += to_json(p).dump();
    out += '\n';
  }
  return out;
}

inline void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  detail::write_file(path, serialize_corpus(corpus));
}

struct QuestionRecord {
  std::string question_id;
  std::string source_dataset;
  std::string question;
  std::string reference_answer;
};

struct AnswerRecord {
  std::string question_id;
  std::string candidate_model;
  std::string candidate_answer;
};

// Joins answers onto their questions, one pair per (question, model).
inline Corpus build_corpus(std::string name, const std::vector<QuestionRecord>& questions,
                           const std::vector<AnswerRecord>& answers) {
  std::map<std::string, const QuestionRecord*> by_id;
  for (const auto& q : questions) {
    if (!by_id.emplace(q.question_id, &q).second) {
      throw ValidationError("duplicate question_id '" + q.question_id + "'");
    }
  }
  std::vector<QAPair> pairs;
  pairs.reserve(answers.size());
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& a : answers) {
    auto it = by_id.find(a.question_id);
    if (it == by_id.end()) {
      throw ValidationError("orphan answer: unknown question_id '" + a.question_id +
                            "' (model '" + a.candidate_model + "')");
    }
    if (!seen.emplace(a.question_id, a.candidate_model).second) {
      throw ValidationError("duplicate answer for (question_id '" + a.question_id +
                            "', model '" + a.candidate_model + "')");
    }
    const QuestionRecord& q = *it->second;
    pairs.push_back(QAPair{make_pair_id(q.source_dataset, q.question_id, a.candidate_model),
                           q.source_dataset, q.question_id, q.question, q.reference_answer,
                           a.candidate_model, a.candidate_answer});
  }
  return Corpus(std::move(name), std::move(pairs));
}

inline std::vector<QuestionRecord> load_questions(const std::filesystem::path& path) {
  std::vector<QuestionRecord> out;
  detail::for_each_jsonl(path, [&](std::size_t lineno, const nlohmann::json& obj) {
    const std::string where = path.string() + ":" + std::to_string(lineno);
    out.push_back({detail::require_string(obj, "question_id", where),
                   detail::require_string(obj, "source_dataset", where),
                   detail::require_string(obj, "question", where),
                   detail::require_string(obj, "reference_answer", where)});
  });
  return out;
}

inline std::vector<AnswerRecord> load_answers(const std::filesystem::path& path) {
  std::vector<AnswerRecord> out;
  detail::for_each_jsonl(path, [&](std::size_t lineno, const nlohmann::json& obj) {
    const std::string where = path.string() + ":" + std::to_string(lineno);
    out.push_back({detail::require_string(obj, "question_id", where),
                   detail::require_string(obj, "candidate_model", where),
                   detail::require_string(obj, "candidate_answer", where)});
  });
  return out;
}

struct DistributionDeviation {
  std::string source_dataset;
  std::size_t expected = 0;
  std::size_t actual = 0;

  friend bool operator==(const DistributionDeviation&, const DistributionDeviation&) = default;
};

// Distinct questions per source.
inline std::map<std::string, std::size_t> question_counts(const Corpus& corpus) {
  std::map<std::string, std::set<std::string>> ids;
  for (const QAPair& p : corpus) ids[p.source_dataset].insert(p.question_id);
  std::map<std::string, std::size_t> counts;
  for (const auto& [src, s] : ids) counts[src] = s.size();
  return counts;
}

// Empty result iff every source has exactly the expected number of questions.
inline std::vector<DistributionDeviation> validate_distribution(
    const Corpus& corpus, const std::map<std::string, std::size_t>& expected) {
  const auto actual = question_counts(corpus);
  std::set<std::string> sources;
  for (const auto& [k, _] : expected) sources.insert(k);
  for (const auto& [k, _] : actual) sources.insert(k);
  std::vector<DistributionDeviation> out;
  for (const auto& src : sources) {
    const auto e = expected.contains(src) ? expected.at(src) : 0;
    const auto a = actual.contains(src) ? actual.at(src) : 0;
    if (e != a) out.push_back({src, e, a});
  }
  return out;
}

// The five-source layout with 120 questions each.
inline std::map<std::string, std::size_t> published_distribution() {
  return {{"AdversarialQA", 120}, {"SQuAD", 120}, {"MedQA", 120},
          {"HotpotQA", 120},      {"TriviaQA", 120}};
}

}  // namespace nlilex
