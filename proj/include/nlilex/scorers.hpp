#pragma once

// Per-pair evaluators that need no remote service, plus the record and
// descriptor types shared by all scorers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "nlilex/detail/io.hpp"
#include "nlilex/error.hpp"
#include "nlilex/text.hpp"

namespace nlilex {

struct ScoreRecord {
  std::string pair_id;
  std::string scorer_name;
  double raw_score = 0.0;
  int verdict = 0;
  std::optional<double> latency_ms;
  std::optional<std::string> failure_note;

  bool failed() const { return failure_note.has_value(); }

  friend bool operator==(const ScoreRecord&, const ScoreRecord&) = default;
};

enum class ScorerKind { lexical, nli, token_f1, rouge_l, llm_judge, external };

inline std::string_view to_string(ScorerKind k) {
  switch (k) {
    case ScorerKind::lexical: return "lexical";
    case ScorerKind::nli: return "nli";
    case ScorerKind::token_f1: return "token_f1";
    case ScorerKind::rouge_l: return "rouge_l";
    case ScorerKind::llm_judge: return "llm_judge";
    case ScorerKind::external: return "external";
  }
  return "unknown";
}

inline ScorerKind parse_scorer_kind(std::string_view s) {
  for (auto k : {ScorerKind::lexical, ScorerKind::nli, ScorerKind::token_f1,
                 ScorerKind::rouge_l, ScorerKind::llm_judge, ScorerKind::external}) {
    if (to_string(k) == s) return k;
  }
  throw ValidationError("unknown scorer kind '" + std::string(s) + "'");
}

inline bool is_remote(ScorerKind k) {
  return k == ScorerKind::nli || k == ScorerKind::llm_judge || k == ScorerKind::external;
}

struct EndpointConfig {
  std::string base_url;
  std::string credential_env;  // name of the environment variable, never the secret
  std::string model;
  int timeout_ms = 30000;
  int max_retries = 3;
  int backoff_ms = 500;  // first retry delay, doubled per attempt
  int max_in_flight = 4;
  int batch_size = 1;
  std::size_t char_budget = 4000;  // warn when premise + hypothesis exceed this
};

// Rendering templates for the NLI premise/hypothesis. Placeholders:
// {question}, {answer}, {reference}.
struct NliTemplate {
  std::string premise = "question: {question} answer: {answer}";
  std::string hypothesis = "question: {question} ground truth: {reference}";
};

struct ScorerDescriptor {
  std::string name;
  ScorerKind kind = ScorerKind::lexical;
  std::uint64_t active_param_count = 0;
  std::optional<EndpointConfig> endpoint;
  NliTemplate nli_template;
  std::optional<std::string> judge_prompt;  // overrides the default judge instruction

  // Remote kinds need an endpoint unless a backend is injected at run time,
  // so only the pure kinds are checked here.
  void validate() const {
    if (name.empty()) throw ValidationError("scorer descriptor without a name");
    if (!is_remote(kind) && endpoint) {
      throw ValidationError("scorer '" + name + "': kind " + std::string(to_string(kind)) +
                            " takes no endpoint");
    }
  }
};

// --- lexical match ----------------------------------------------------------

// 1 iff the normalized reference occurs contiguously in the normalized candidate.
inline int lexical_match(std::string_view candidate, std::string_view reference) {
  const std::string ref = text::normalize(reference);
  if (ref.empty()) return 0;
  return text::normalize(candidate).find(ref) != std::string::npos ? 1 : 0;
}

// --- NLI input formatting ---------------------------------------------------

struct NliInput {
  std::string premise;
  std::string hypothesis;

  friend bool operator==(const NliInput&, const NliInput&) = default;
};

namespace detail {

// Single pass, so placeholder text inside a substituted value stays literal.
inline std::string render_template(std::string_view tmpl,
                                   const std::map<std::string_view, std::string_view>& vars) {
  std::string out;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i);
      if (close != std::string_view::npos) {
        auto it = vars.find(tmpl.substr(i + 1, close - i - 1));
        if (it != vars.end()) {
          out.append(it->second);
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(tmpl[i++]);
  }
  return out;
}

}  // namespace detail

inline NliInput format_nli_input(std::string_view question, std::string_view answer,
                                 std::string_view reference, const NliTemplate& tmpl = {}) {
  if (text::is_blank(question)) throw ValidationError("format_nli_input: empty question");
  if (text::is_blank(answer)) throw ValidationError("format_nli_input: empty answer");
  if (text::is_blank(reference)) throw ValidationError("format_nli_input: empty reference");
  const std::map<std::string_view, std::string_view> vars = {
      {"question", question}, {"answer", answer}, {"reference", reference}};
  return {detail::render_template(tmpl.premise, vars),
          detail::render_template(tmpl.hypothesis, vars)};
}

// --- token F1 / ROUGE-L -----------------------------------------------------

inline double f_measure(double overlap, std::size_t n_candidate, std::size_t n_reference) {
  if (n_candidate == 0 || n_reference == 0) return 0.0;
  const double p = overlap / static_cast<double>(n_candidate);
  const double r = overlap / static_cast<double>(n_reference);
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

inline double token_f1(const std::vector<std::string>& cand, const std::vector<std::string>& ref) {
  if (cand.empty() && ref.empty()) return 1.0;
  std::map<std::string_view, std::size_t> ref_counts;
  for (const auto& t : ref) ++ref_counts[t];
  std::size_t overlap = 0;
  for (const auto& t : cand) {
    auto it = ref_counts.find(t);
    if (it != ref_counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  return f_measure(static_cast<double>(overlap), cand.size(), ref.size());
}

inline double token_f1(std::string_view candidate, std::string_view reference) {
  return token_f1(text::tokenize(candidate), text::tokenize(reference));
}

// Length of the longest common subsequence, O(|a|·|b|) time, O(|b|) memory.
inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline double rouge_l(const std::vector<std::string>& cand, const std::vector<std::string>& ref) {
  if (cand.empty() && ref.empty()) return 1.0;
  return f_measure(static_cast<double>(lcs_length(cand, ref)), cand.size(), ref.size());
}

inline double rouge_l(std::string_view candidate, std::string_view reference) {
  return rouge_l(text::tokenize(candidate), text::tokenize(reference));
}

// --- binarization -----------------------------------------------------------

// Strictly exceeding the threshold is positive; a tie is negative.
inline int binarize(double score, double threshold = 0.5) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ValidationError("binarize: threshold must lie in (0,1)");
  }
  if (!(score >= 0.0 && score <= 1.0)) {
    throw ValidationError("binarize: score " + std::to_string(score) + " outside [0,1]");
  }
  return score > threshold ? 1 : 0;
}

// --- record files -----------------------------------------------------------

inline nlohmann::ordered_json to_json(const ScoreRecord& r) {
  nlohmann::ordered_json j;
  j["pair_id"] = r.pair_id;
  j["scorer_name"] = r.scorer_name;
  j["raw_score"] = r.raw_score;
  j["verdict"] = r.verdict;
  if (r.latency_ms) j["latency_ms"] = *r.latency_ms;
  if (r.failure_note) j["failure_note"] = *r.failure_note;
  return j;
}

inline ScoreRecord score_record_from_json(const nlohmann::json& j) {
  ScoreRecord r;
  try {
    r.pair_id = j.at("pair_id").get<std::string>();
    r.scorer_name = j.at("scorer_name").get<std::string>();
    r.raw_score = j.at("raw_score").get<double>();
    r.verdict = j.at("verdict").get<int>();
    if (j.contains("latency_ms")) r.latency_ms = j.at("latency_ms").get<double>();
    if (j.contains("failure_note")) r.failure_note = j.at("failure_note").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed score record: ") + e.what());
  }
  if (r.verdict != 0 && r.verdict != 1) throw ValidationError("score record verdict must be 0 or 1");
  if (!(r.raw_score >= 0.0 && r.raw_score <= 1.0))
    throw ValidationError("score record raw_score outside [0,1]");
  return r;
}

inline std::string serialize_records(const std::vector<ScoreRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += to_json(r).dump();
    out += '\n';
  }
  return out;
}

inline void save_records(const std::vector<ScoreRecord>& records,
                         const std::filesystem::path& path) {
  detail::write_file(path, serialize_records(records));
}

inline std::vector<ScoreRecord> load_records(const std::filesystem::path& path) {
  std::vector<ScoreRecord> out;
  detail::for_each_jsonl(path, [&](std::size_t lineno, const nlohmann::json& obj) {
    try {
      out.push_back(score_record_from_json(obj));
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  });
  return out;
}

}  // namespace nlilex
