#pragma once

// Shared test doubles: temp directories, synthetic corpora, scripted
// semantic backends and judge clients.

#include <unistd.h>

#include <atomic>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include <nlilex/nlilex.hpp>

namespace testing_support {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("nlilex-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline nlilex::QAPair make_pair(const std::string& source, const std::string& qid,
                                const std::string& model, const std::string& question,
                                const std::string& reference, const std::string& answer) {
  return {nlilex::make_pair_id(source, qid, model), source, qid, question, reference, model, answer};
}

struct SyntheticSet {
  nlilex::Corpus corpus;
  nlilex::GoldMap golds;
};

// sources × questions × models pairs. Gold is a seeded coin; a correct
// answer embeds the reference, a wrong one does not. Every fifth correct
// answer is a paraphrase that the lexical matcher misses.
inline SyntheticSet synthetic(std::size_t sources, std::size_t questions, std::size_t models,
                              std::uint64_t seed = 7, const std::string& name = "synthetic") {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.55);
  std::vector<nlilex::QAPair> pairs;
  nlilex::GoldMap golds;
  std::size_t k = 0;
  for (std::size_t s = 0; s < sources; ++s) {
    const std::string src = "src" + std::to_string(s);
    for (std::size_t q = 0; q < questions; ++q) {
      const std::string qid = src + "-q" + std::to_string(q);
      const std::string ref = "answer" + std::to_string(s) + "x" + std::to_string(q);
      for (std::size_t m = 0; m < models; ++m) {
        const std::string model = "model-" + std::string(1, char('a' + m));
        const bool good = coin(rng);
        std::string ans;
        if (good) {
          ans = (k++ % 5 == 4) ? "it is the same as what was asked" : "I think " + ref + " is right";
        } else {
          ans = "probably wrong" + std::to_string(q) + std::to_string(m);
        }
        auto p = make_pair(src, qid, model, "What is item " + std::to_string(q) + "?", ref, ans);
        golds[p.pair_id] = good ? 1 : 0;
        pairs.push_back(std::move(p));
      }
    }
  }
  return {nlilex::Corpus(name, std::move(pairs)), std::move(golds)};
}

// Keys semantic-backend replies by premise text.
class ScriptedSemantic : public nlilex::SemanticBackend {
 public:
  using Fn = std::function<nlilex::NliProbabilities(const nlilex::NliInput&)>;

  explicit ScriptedSemantic(Fn fn) : fn_(std::move(fn)) {}

  static std::shared_ptr<ScriptedSemantic> constant(double entailment) {
    return std::make_shared<ScriptedSemantic>([entailment](const nlilex::NliInput&) {
      return nlilex::NliProbabilities{entailment, (1 - entailment) / 2, (1 - entailment) / 2};
    });
  }

  // Entailment 0.95 when gold is 1, 0.05 otherwise.
  static std::shared_ptr<ScriptedSemantic> oracle(const nlilex::Corpus& corpus,
                                                  const nlilex::GoldMap& golds) {
    std::map<std::string, int> by_premise;
    for (const auto& p : corpus) {
      by_premise[nlilex::format_nli_input(p.question, p.candidate_answer, p.reference_answer).premise +
                 "\x1f" + p.reference_answer] = golds.at(p.pair_id);
    }
    return std::make_shared<ScriptedSemantic>([by_premise](const nlilex::NliInput& in) {
      const auto ref = in.hypothesis.substr(in.hypothesis.rfind("ground truth: ") + 14);
      const int g = by_premise.at(in.premise + "\x1f" + ref);
      return g ? nlilex::NliProbabilities{0.95, 0.03, 0.02} : nlilex::NliProbabilities{0.05, 0.15, 0.8};
    });
  }

  nlilex::NliProbabilities infer(const nlilex::NliInput& input) override {
    calls_.fetch_add(1);
    return fn_(input);
  }

  int calls() const { return calls_.load(); }

 private:
  Fn fn_;
  std::atomic<int> calls_{0};
};

// Plays back a fixed sequence of completions; an empty string entry means
// "raise a transport error".
class ScriptedJudge : public nlilex::JudgeClient {
 public:
  explicit ScriptedJudge(std::vector<std::string> script) : script_(script.begin(), script.end()) {}

  std::string complete(const nlilex::ChatRequest& request) override {
    std::lock_guard lock(mu_);
    requests.push_back(request);
    if (script_.empty()) throw nlilex::TransportError("script exhausted");
    auto next = script_.front();
    if (script_.size() > 1) script_.pop_front();
    if (next.empty()) throw nlilex::TransportError("scripted outage");
    return next;
  }

  std::vector<nlilex::ChatRequest> requests;

 private:
  std::mutex mu_;
  std::deque<std::string> script_;
};

inline nlilex::ScorerDescriptor descriptor(const std::string& name, nlilex::ScorerKind kind,
                                           std::uint64_t params = 0) {
  nlilex::ScorerDescriptor d;
  d.name = name;
  d.kind = kind;
  d.active_param_count = params;
  if (nlilex::is_remote(kind)) {
    nlilex::EndpointConfig e;
    e.base_url = "http://127.0.0.1:9";
    e.backoff_ms = 0;
    e.max_retries = 2;
    d.endpoint = e;
  }
  return d;
}

inline std::string slurp(const fs::path& p) { return nlilex::detail::read_file(p); }

}  // namespace testing_support
