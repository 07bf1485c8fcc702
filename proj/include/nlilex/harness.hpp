#pragma once

// Evaluation runs: configuration, orchestration of every scorer over a
// corpus, the hybrid on top of the semantic scorer, and calibration.

#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nlilex/dataset.hpp"
#include "nlilex/detail/io.hpp"
#include "nlilex/error.hpp"
#include "nlilex/hybrid.hpp"
#include "nlilex/metrics.hpp"
#include "nlilex/report.hpp"
#include "nlilex/scorers.hpp"
#include "nlilex/scoring.hpp"

namespace nlilex {

struct RunConfig {
  std::filesystem::path corpus;
  std::filesystem::path gold;
  std::vector<ScorerDescriptor> scorers;
  std::optional<std::filesystem::path> calibration_model;
  std::string hybrid_semantic_scorer;  // empty: first nli/external scorer
  std::string hybrid_name = kHybridScorerName;
  double threshold = 0.5;
  int parallelism = 4;
  std::optional<std::filesystem::path> cache_dir;
  std::optional<std::filesystem::path> output_dir;
  std::uint64_t seed = 0;
  SortKey sort = SortKey::mcc;

  void validate() const {
    auto must_exist = [](const std::filesystem::path& p, const char* what) {
      if (p.empty()) throw ValidationError(std::string("config: ") + what + " path not set");
      if (!std::filesystem::exists(p))
        throw ValidationError(std::string("config: ") + what + " '" + p.string() + "' does not exist");
    };
    must_exist(corpus, "corpus");
    must_exist(gold, "gold");
    if (calibration_model) must_exist(*calibration_model, "calibration model");
    if (parallelism < 1) throw ValidationError("config: parallelism must be at least 1");
    if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("config: threshold must lie in (0,1)");
    if (scorers.empty()) throw ValidationError("config: no scorers configured");
    std::set<std::string> names;
    for (const auto& s : scorers) {
      s.validate();
      if (!names.insert(s.name).second) throw ValidationError("config: duplicate scorer '" + s.name + "'");
    }
    if (calibration_model && names.contains(hybrid_name)) {
      throw ValidationError("config: scorer name '" + hybrid_name + "' is reserved for the hybrid");
    }
  }
};

namespace detail {

inline EndpointConfig endpoint_from_json(const nlohmann::json& j) {
  EndpointConfig e;
  e.base_url = j.at("base_url").get<std::string>();
  e.credential_env = j.value("credential_env", "");
  e.model = j.value("model", "");
  e.timeout_ms = j.value("timeout_ms", e.timeout_ms);
  e.max_retries = j.value("max_retries", e.max_retries);
  e.backoff_ms = j.value("backoff_ms", e.backoff_ms);
  e.max_in_flight = j.value("max_in_flight", e.max_in_flight);
  e.batch_size = j.value("batch_size", e.batch_size);
  e.char_budget = j.value("char_budget", e.char_budget);
  if (j.contains("credential")) {
    throw ValidationError("config: credentials must come from credential_env, not the file");
  }
  return e;
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace detail

inline ScorerDescriptor scorer_descriptor_from_json(const nlohmann::json& j) {
  ScorerDescriptor d;
  try {
    d.name = j.at("name").get<std::string>();
    d.kind = parse_scorer_kind(j.at("kind").get<std::string>());
    d.active_param_count = j.value("active_param_count", std::uint64_t{0});
    if (j.contains("endpoint")) d.endpoint = detail::endpoint_from_json(j.at("endpoint"));
    if (j.contains("nli_template")) {
      d.nli_template.premise = j.at("nli_template").value("premise", d.nli_template.premise);
      d.nli_template.hypothesis = j.at("nli_template").value("hypothesis", d.nli_template.hypothesis);
    }
    if (j.contains("judge_prompt")) d.judge_prompt = j.at("judge_prompt").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: malformed scorer entry: ") + e.what());
  }
  d.validate();
  return d;
}

// Relative paths resolve against `base_dir` (the config file's directory).
inline RunConfig run_config_from_json(const nlohmann::json& j,
                                      const std::filesystem::path& base_dir = {}) {
  RunConfig c;
  try {
    if (j.contains("corpus")) c.corpus = detail::resolve(base_dir, j.at("corpus").get<std::string>());
    if (j.contains("gold")) c.gold = detail::resolve(base_dir, j.at("gold").get<std::string>());
    if (j.contains("scorers"))
      for (const auto& s : j.at("scorers")) c.scorers.push_back(scorer_descriptor_from_json(s));
    if (j.contains("calibration_model"))
      c.calibration_model = detail::resolve(base_dir, j.at("calibration_model").get<std::string>());
    c.hybrid_semantic_scorer = j.value("hybrid_semantic_scorer", "");
    c.hybrid_name = j.value("hybrid_name", c.hybrid_name);
    c.threshold = j.value("threshold", c.threshold);
    c.parallelism = j.value("parallelism", c.parallelism);
    if (j.contains("cache_dir")) c.cache_dir = detail::resolve(base_dir, j.at("cache_dir").get<std::string>());
    if (j.contains("output_dir"))
      c.output_dir = detail::resolve(base_dir, j.at("output_dir").get<std::string>());
    c.seed = j.value("seed", c.seed);
    c.sort = parse_sort_key(j.value("sort_by", "mcc"));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  try {
    return run_config_from_json(nlohmann::json::parse(detail::read_file(path)), path.parent_path());
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

struct RunHooks {
  // Called after each scorer finishes; lets callers observe progress.
  std::function<void(const ScoreBatch&)> on_scored;
};

// Scores the corpus with every configured scorer (plus the hybrid when a
// calibration model is set) and computes global and sliced reports.
inline EvaluationBundle run_evaluation(const RunConfig& config, const BackendRegistry& registry,
                                       const RunHooks& hooks = {}) {
  config.validate();
  const Corpus corpus = load_corpus(config.corpus);
  const GoldMap golds = load_golds(config.gold);
  for (const QAPair& p : corpus) {
    if (!golds.contains(p.pair_id)) throw ValidationError("missing gold label for '" + p.pair_id + "'");
  }

  std::optional<ScoreCache> cache;
  if (config.cache_dir) cache.emplace(*config.cache_dir);
  ScoreOptions opts{config.threshold, config.parallelism, cache ? &*cache : nullptr};

  EvaluationBundle bundle;
  bundle.corpus_name = corpus.name();
  for (const auto& d : config.scorers) {
    try {
      auto batch = score_corpus(corpus, d, registry, opts);
      for (const auto& w : batch.warnings) std::fprintf(stderr, "warning: %s: %s\n", d.name.c_str(), w.c_str());
      if (hooks.on_scored) hooks.on_scored(batch);
      if (!corpus.empty() && batch.scored_count() == 0) {
        bundle.failed_scorers[d.name] = "every pair failed: " + *batch.records.front().failure_note;
      }
      bundle.records[d.name] = std::move(batch.records);
    } catch (const Error& e) {
      bundle.failed_scorers[d.name] = e.what();
    }
    bundle.descriptors.push_back(d);
  }

  if (config.calibration_model) {
    const auto model = load_model(*config.calibration_model);
    const ScorerDescriptor* semantic = nullptr;
    for (const auto& d : config.scorers) {
      const bool named = d.name == config.hybrid_semantic_scorer;
      const bool fallback = config.hybrid_semantic_scorer.empty() &&
                            (d.kind == ScorerKind::nli || d.kind == ScorerKind::external);
      if (named || fallback) {
        semantic = &d;
        break;
      }
    }
    if (!semantic) throw ValidationError("hybrid needs a semantic scorer but none is configured");
    if (!bundle.records.contains(semantic->name)) {
      bundle.failed_scorers[config.hybrid_name] = "semantic scorer '" + semantic->name + "' failed";
    } else {
      std::vector<ScoreRecord> lm;
      for (const QAPair& p : corpus) {
        const int m = lexical_match(p.candidate_answer, p.reference_answer);
        lm.push_back({p.pair_id, "lexical", static_cast<double>(m), m, std::nullopt, std::nullopt});
      }
      auto records = predict_corpus(corpus, bundle.records.at(semantic->name), lm, model,
                                    config.hybrid_name);
      bundle.records[config.hybrid_name] = std::move(records);
      ScorerDescriptor hybrid;
      hybrid.name = config.hybrid_name;
      hybrid.kind = semantic->kind;
      hybrid.active_param_count = semantic->active_param_count;
      bundle.descriptors.push_back(hybrid);
    }
  }

  for (const auto& [name, records] : bundle.records) {
    if (bundle.failed_scorers.contains(name)) continue;
    bundle.reports.push_back(evaluate_scorer(records, golds, name));
    for (auto [by, target] : {std::pair{SliceBy::candidate_model, &bundle.by_candidate_model},
                              std::pair{SliceBy::source_dataset, &bundle.by_source_dataset}}) {
      for (auto& [key, report] : slice_report(records, golds, corpus, by)) {
        (*target)[key].push_back(std::move(report));
      }
    }
  }
  bundle.reports = sorted_reports(std::move(bundle.reports), config.sort);

  if (config.output_dir) {
    for (const auto& [name, records] : bundle.records) {
      save_records(records, *config.output_dir / "scores" / (slice_file_stem(name) + ".jsonl"));
    }
  }
  return bundle;
}

// --- calibration ------------------------------------------------------------

// Feature rows for every pair with a gold label and non-failed scores.
inline std::vector<FeatureRow> feature_rows(const Corpus& corpus, const GoldMap& golds,
                                            const std::vector<ScoreRecord>& se_records,
                                            const std::vector<ScoreRecord>& lm_records,
                                            std::size_t* skipped = nullptr) {
  std::map<std::string, const ScoreRecord*> se, lm;
  for (const auto& r : se_records) se[r.pair_id] = &r;
  for (const auto& r : lm_records) lm[r.pair_id] = &r;
  std::vector<FeatureRow> rows;
  std::size_t skip = 0;
  for (const QAPair& p : corpus) {
    auto g = golds.find(p.pair_id);
    auto s = se.find(p.pair_id);
    auto l = lm.find(p.pair_id);
    if (g == golds.end()) throw ValidationError("missing gold label for '" + p.pair_id + "'");
    if (s == se.end()) throw ValidationError("coverage gap: no semantic score for '" + p.pair_id + "'");
    if (l == lm.end()) throw ValidationError("coverage gap: no lexical match for '" + p.pair_id + "'");
    if (s->second->failed() || l->second->failed()) {
      ++skip;
      continue;
    }
    rows.push_back({s->second->raw_score, l->second->raw_score > 0.5 ? 1 : 0, g->second});
  }
  if (skipped) *skipped = skip;
  return rows;
}

}  // namespace nlilex
