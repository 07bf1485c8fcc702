#pragma once

// Running one scorer over a whole corpus: backend resolution, the response
// cache, bounded parallelism and failure bookkeeping.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "nlilex/dataset.hpp"
#include "nlilex/detail/io.hpp"
#include "nlilex/error.hpp"
#include "nlilex/remote.hpp"
#include "nlilex/scorers.hpp"

namespace nlilex {

// Maps scorer names to in-process backends. Remote descriptors without a
// registered backend get an HTTP client built from their endpoint config.
class BackendRegistry {
 public:
  void register_semantic(const std::string& scorer_name, std::shared_ptr<SemanticBackend> b) {
    semantic_[scorer_name] = std::move(b);
  }
  void register_judge(const std::string& scorer_name, std::shared_ptr<JudgeClient> c) {
    judges_[scorer_name] = std::move(c);
  }

  std::shared_ptr<SemanticBackend> semantic_for(const ScorerDescriptor& d) const {
    if (auto it = semantic_.find(d.name); it != semantic_.end()) return it->second;
    if (!d.endpoint) {
      throw ValidationError("scorer '" + d.name + "' has no endpoint and no registered backend");
    }
    return std::make_shared<HttpSemanticBackend>(*d.endpoint);
  }

  std::shared_ptr<JudgeClient> judge_for(const ScorerDescriptor& d) const {
    if (auto it = judges_.find(d.name); it != judges_.end()) return it->second;
    if (!d.endpoint) {
      throw ValidationError("scorer '" + d.name + "' has no endpoint and no registered client");
    }
    return std::make_shared<HttpJudgeClient>(*d.endpoint);
  }

 private:
  std::map<std::string, std::shared_ptr<SemanticBackend>> semantic_;
  std::map<std::string, std::shared_ptr<JudgeClient>> judges_;
};

// Successful scores keyed by (scorer name, pair content hash). With a
// directory it persists one append-only file per scorer, so an interrupted
// run resumes where it stopped. Safe for concurrent use.
class ScoreCache {
 public:
  struct Entry {
    double raw_score = 0.0;
    int verdict = 0;
  };

  ScoreCache() = default;
  explicit ScoreCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

  static std::string content_key(const QAPair& p) {
    std::uint64_t h = detail::fnv1a(p.question);
    h = detail::fnv1a(std::string_view("\x1f", 1), h);
    h = detail::fnv1a(p.reference_answer, h);
    h = detail::fnv1a(std::string_view("\x1f", 1), h);
    h = detail::fnv1a(p.candidate_answer, h);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

  std::optional<Entry> get(const std::string& scorer, const std::string& key) {
    load(scorer);
    std::shared_lock lock(mu_);
    auto& m = entries_[scorer];
    if (auto it = m.find(key); it != m.end()) return it->second;
    return std::nullopt;
  }

  void put(const std::string& scorer, const std::string& key, Entry e) {
    load(scorer);
    std::unique_lock lock(mu_);
    entries_[scorer][key] = e;
    if (dir_) {
      auto& w = writers_[scorer];
      if (!w) w = std::make_unique<detail::DurableAppender>(file_for(scorer));
      nlohmann::ordered_json j;
      j["key"] = key;
      j["raw_score"] = e.raw_score;
      j["verdict"] = e.verdict;
      w->append_line(j.dump());
    }
  }

  std::size_t size(const std::string& scorer) {
    load(scorer);
    std::shared_lock lock(mu_);
    return entries_[scorer].size();
  }

 private:
  std::filesystem::path file_for(const std::string& scorer) const {
    std::string safe;
    for (char c : scorer) safe.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
    return *dir_ / (safe + "-" + ScoreCache::hex(detail::fnv1a(scorer)) + ".jsonl");
  }

  static std::string hex(std::uint64_t h) {
    char buf[9];
    std::snprintf(buf, sizeof buf, "%08llx", static_cast<unsigned long long>(h & 0xffffffffULL));
    return buf;
  }

  void load(const std::string& scorer) {
    {
      std::shared_lock lock(mu_);
      if (loaded_.contains(scorer)) return;
    }
    std::unique_lock lock(mu_);
    if (!loaded_.insert(scorer).second) return;
    if (!dir_) return;
    const auto path = file_for(scorer);
    if (!std::filesystem::exists(path)) return;
    auto& m = entries_[scorer];
    // A crash can leave a torn last line; skip anything unparsable.
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
      try {
        const auto j = nlohmann::json::parse(line);
        m[j.at("key").get<std::string>()] = {j.at("raw_score").get<double>(),
                                             j.at("verdict").get<int>()};
      } catch (const nlohmann::json::exception&) {
      }
    }
  }

  std::optional<std::filesystem::path> dir_;
  std::shared_mutex mu_;
  std::set<std::string> loaded_;
  std::map<std::string, std::map<std::string, Entry>> entries_;
  std::map<std::string, std::unique_ptr<detail::DurableAppender>> writers_;
};

struct ScoreOptions {
  double threshold = 0.5;
  int parallelism = 4;
  ScoreCache* cache = nullptr;
};

struct ScoreBatch {
  std::string scorer_name;
  std::vector<ScoreRecord> records;  // one per pair, sorted by pair_id
  std::vector<std::string> warnings;

  std::size_t failure_count() const {
    return static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(), [](const auto& r) { return r.failed(); }));
  }
  std::size_t scored_count() const { return records.size() - failure_count(); }
};

namespace detail {

inline ScoreRecord success(const QAPair& p, const ScorerDescriptor& d, double raw, int verdict,
                           std::optional<double> latency_ms = std::nullopt) {
  return {p.pair_id, d.name, raw, verdict, latency_ms, std::nullopt};
}

inline ScoreRecord failure(const QAPair& p, const ScorerDescriptor& d, std::string note) {
  return {p.pair_id, d.name, 0.0, 0, std::nullopt, std::move(note)};
}

inline double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since)
      .count();
}

}  // namespace detail

// Scores every pair with one scorer. Transport and protocol failures become
// failure records; any other exception aborts the run after in-flight work
// drains (cached results survive for a resume).
inline ScoreBatch score_corpus(const Corpus& corpus, const ScorerDescriptor& descriptor,
                               const BackendRegistry& registry, const ScoreOptions& options = {}) {
  descriptor.validate();
  ScoreBatch batch;
  batch.scorer_name = descriptor.name;
  const auto& pairs = corpus.pairs();
  const std::size_t n = pairs.size();
  if (n == 0) return batch;

  std::shared_ptr<SemanticBackend> semantic;
  std::shared_ptr<JudgeClient> judge;
  if (descriptor.kind == ScorerKind::nli || descriptor.kind == ScorerKind::external) {
    semantic = registry.semantic_for(descriptor);
  } else if (descriptor.kind == ScorerKind::llm_judge) {
    judge = registry.judge_for(descriptor);
  }

  const EndpointConfig endpoint = descriptor.endpoint.value_or(EndpointConfig{});
  const double threshold = options.threshold;
  std::vector<std::optional<ScoreRecord>> slots(n);
  std::mutex warn_mu;

  // Cache hits first; everything else becomes pending work.
  std::vector<std::size_t> pending;
  std::vector<std::string> keys(n);
  for (std::size_t i = 0; i < n; ++i) {
    keys[i] = ScoreCache::content_key(pairs[i]);
    if (options.cache) {
      if (auto hit = options.cache->get(descriptor.name, keys[i])) {
        slots[i] = detail::success(pairs[i], descriptor, hit->raw_score, hit->verdict);
        continue;
      }
    }
    pending.push_back(i);
  }

  auto store = [&](std::size_t i, ScoreRecord rec) {
    if (!rec.failed() && options.cache) {
      options.cache->put(descriptor.name, keys[i], {rec.raw_score, rec.verdict});
    }
    slots[i] = std::move(rec);
  };

  auto check_budget = [&](std::size_t i, const NliInput& in) {
    if (in.premise.size() + in.hypothesis.size() > endpoint.char_budget) {
      std::lock_guard lock(warn_mu);
      batch.warnings.push_back("pair '" + pairs[i].pair_id + "' exceeds the " +
                               std::to_string(endpoint.char_budget) +
                               "-character budget; the backend may truncate it");
    }
  };

  // Work units: contiguous slices of `pending`.
  const std::size_t unit =
      semantic && endpoint.batch_size > 1 ? static_cast<std::size_t>(endpoint.batch_size) : 1;

  auto run_unit = [&](std::size_t begin, std::size_t end) {
    switch (descriptor.kind) {
      case ScorerKind::lexical:
      case ScorerKind::token_f1:
      case ScorerKind::rouge_l:
        for (std::size_t k = begin; k < end; ++k) {
          const QAPair& p = pairs[pending[k]];
          double raw = 0.0;
          if (descriptor.kind == ScorerKind::lexical) {
            raw = lexical_match(p.candidate_answer, p.reference_answer);
          } else if (descriptor.kind == ScorerKind::token_f1) {
            raw = token_f1(p.candidate_answer, p.reference_answer);
          } else {
            raw = rouge_l(p.candidate_answer, p.reference_answer);
          }
          store(pending[k], detail::success(p, descriptor, raw, binarize(raw, threshold)));
        }
        return;
      case ScorerKind::nli:
      case ScorerKind::external: {
        std::vector<NliInput> inputs;
        for (std::size_t k = begin; k < end; ++k) {
          const QAPair& p = pairs[pending[k]];
          inputs.push_back(format_nli_input(p.question, p.candidate_answer, p.reference_answer,
                                            descriptor.nli_template));
          check_budget(pending[k], inputs.back());
        }
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<NliProbabilities> probs;
        try {
          probs = unit == 1 ? std::vector<NliProbabilities>{semantic->infer(inputs.front())}
                            : semantic->infer_batch(inputs);
        } catch (const ProtocolError& e) {
          for (std::size_t k = begin; k < end; ++k)
            store(pending[k], detail::failure(pairs[pending[k]], descriptor, e.what()));
          return;
        } catch (const TransportError& e) {
          for (std::size_t k = begin; k < end; ++k)
            store(pending[k], detail::failure(pairs[pending[k]], descriptor, e.what()));
          return;
        }
        const double latency = detail::elapsed_ms(t0) / static_cast<double>(end - begin);
        for (std::size_t k = begin; k < end; ++k) {
          const QAPair& p = pairs[pending[k]];
          try {
            const auto& pr = probs.at(k - begin);
            check_probabilities(pr);
            store(pending[k], detail::success(p, descriptor, pr.entailment,
                                              binarize(pr.entailment, threshold), latency));
          } catch (const ProtocolError& e) {
            store(pending[k], detail::failure(p, descriptor, e.what()));
          } catch (const std::out_of_range&) {
            store(pending[k], detail::failure(p, descriptor, "batch response too short"));
          }
        }
        return;
      }
      case ScorerKind::llm_judge:
        for (std::size_t k = begin; k < end; ++k) {
          const QAPair& p = pairs[pending[k]];
          const auto t0 = std::chrono::steady_clock::now();
          try {
            const auto res =
                llm_judge(p.question, p.candidate_answer, p.reference_answer, *judge,
                          endpoint.model, RetryPolicy::from(endpoint),
                          descriptor.judge_prompt ? std::string_view(*descriptor.judge_prompt)
                                                  : kDefaultJudgeInstruction);
            store(pending[k], detail::success(p, descriptor, res.verdict, res.verdict,
                                              detail::elapsed_ms(t0)));
          } catch (const ProtocolError& e) {
            store(pending[k], detail::failure(p, descriptor, e.what()));
          } catch (const TransportError& e) {
            store(pending[k], detail::failure(p, descriptor, e.what()));
          }
        }
        return;
    }
    throw ValidationError("unknown scorer kind for '" + descriptor.name + "'");
  };

  const std::size_t units = (pending.size() + unit - 1) / unit;
  std::size_t workers = 1;
  if (is_remote(descriptor.kind)) {
    workers = static_cast<std::size_t>(
        std::max(1, std::min(options.parallelism, std::max(1, endpoint.max_in_flight))));
  }
  workers = std::min(workers, std::max<std::size_t>(units, 1));

  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&] {
    for (;;) {
      if (abort.load()) return;
      const std::size_t u = next.fetch_add(1);
      if (u >= units) return;
      try {
        run_unit(u * unit, std::min(pending.size(), (u + 1) * unit));
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
        abort = true;
        return;
      }
    }
  };
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);

  batch.records.reserve(n);
  for (auto& s : slots) batch.records.push_back(std::move(*s));
  std::sort(batch.warnings.begin(), batch.warnings.end());
  return batch;
}

}  // namespace nlilex
