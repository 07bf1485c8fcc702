#pragma once

// Remote scorers: the semantic-scorer (NLI) wire protocol and chat-style
// LLM judges. Both sit behind small interfaces so tests can script them.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "nlilex/error.hpp"
#include "nlilex/scorers.hpp"
#include "nlilex/text.hpp"

namespace nlilex {

// --- retries ----------------------------------------------------------------

struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds backoff{500};

  static RetryPolicy from(const EndpointConfig& cfg) {
    return {cfg.max_retries, std::chrono::milliseconds(cfg.backoff_ms)};
  }
};

// Runs fn, retrying TransportError with exponential backoff. Any other
// exception escapes immediately. `retries` receives the number of retries.
template <typename Fn>
auto with_retries(const RetryPolicy& policy, Fn&& fn, int* retries = nullptr) {
  int attempt = 0;
  for (;;) {
    try {
      if (retries) *retries = attempt;
      return fn();
    } catch (const TransportError& e) {
      if (attempt >= policy.max_retries) {
        throw TransportError(std::string(e.what()) + " (gave up after " +
                             std::to_string(attempt) + " retries)");
      }
      const auto delay = policy.backoff * (1LL << std::min(attempt, 20));
      if (delay.count() > 0) std::this_thread::sleep_for(delay);
      ++attempt;
    }
  }
}

// --- HTTP plumbing ----------------------------------------------------------

namespace detail {

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // begins with '/'
};

inline ParsedUrl parse_url(std::string_view url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos) {
    throw ValidationError("endpoint URL '" + std::string(url) + "' lacks a scheme");
  }
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string_view::npos) return {std::string(url), "/"};
  return {std::string(url.substr(0, path_start)), std::string(url.substr(path_start))};
}

inline std::string join_path(std::string_view base, std::string_view suffix) {
  std::string out(base);
  while (!out.empty() && out.back() == '/') out.pop_back();
  out.append(suffix);
  return out;
}

inline std::string read_credential(const std::string& env_name) {
  if (env_name.empty()) return {};
  const char* value = std::getenv(env_name.c_str());
  if (!value || !*value) {
    throw ValidationError("credential environment variable '" + env_name + "' is not set");
  }
  return value;
}

// POSTs JSON and returns the parsed body. Connection failures and 408/429/5xx
// raise TransportError; other non-2xx statuses and bad bodies raise ProtocolError.
inline nlohmann::json post_json(httplib::Client& client, const std::string& path,
                                const nlohmann::json& body, const httplib::Headers& headers = {}) {
  auto res = client.Post(path, headers, body.dump(), "application/json");
  if (!res) {
    throw TransportError("POST " + path + " failed: " + httplib::to_string(res.error()));
  }
  if (res->status == 408 || res->status == 429 || res->status >= 500) {
    throw TransportError("POST " + path + " returned HTTP " + std::to_string(res->status));
  }
  if (res->status < 200 || res->status >= 300) {
    throw ProtocolError("POST " + path + " returned HTTP " + std::to_string(res->status) + ": " +
                        res->body.substr(0, 200));
  }
  try {
    return nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::parse_error&) {
    throw ProtocolError("POST " + path + " returned a non-JSON body");
  }
}

inline std::unique_ptr<httplib::Client> make_client(const std::string& origin, int timeout_ms) {
  auto client = std::make_unique<httplib::Client>(origin);
  if (!client->is_valid()) {
    throw ValidationError("cannot create HTTP client for '" + origin + "'");
  }
  const auto t = std::chrono::milliseconds(timeout_ms);
  client->set_connection_timeout(t);
  client->set_read_timeout(t);
  client->set_write_timeout(t);
  return client;
}

}  // namespace detail

// --- semantic scorer --------------------------------------------------------

struct NliProbabilities {
  double entailment = 0.0;
  double neutral = 0.0;
  double contradiction = 0.0;
};

inline constexpr double kProbabilitySumTolerance = 1e-3;

// Throws ProtocolError unless every component is in [0,1] and they sum to 1.
inline void check_probabilities(const NliProbabilities& p) {
  for (double v : {p.entailment, p.neutral, p.contradiction}) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw ProtocolError("semantic backend returned probability " + std::to_string(v) +
                          " outside [0,1]");
    }
  }
  const double sum = p.entailment + p.neutral + p.contradiction;
  if (std::abs(sum - 1.0) > kProbabilitySumTolerance) {
    throw ProtocolError("semantic backend probabilities sum to " + std::to_string(sum));
  }
}

class SemanticBackend {
 public:
  virtual ~SemanticBackend() = default;

  virtual NliProbabilities infer(const NliInput& input) = 0;

  virtual std::vector<NliProbabilities> infer_batch(const std::vector<NliInput>& inputs) {
    std::vector<NliProbabilities> out;
    out.reserve(inputs.size());
    for (const auto& in : inputs) out.push_back(infer(in));
    return out;
  }
};

// Entailment-class probability for the rendered (premise, hypothesis).
inline double nli_entailment(std::string_view question, std::string_view answer,
                             std::string_view reference, SemanticBackend& backend,
                             const NliTemplate& tmpl = {}) {
  const NliProbabilities p = backend.infer(format_nli_input(question, answer, reference, tmpl));
  check_probabilities(p);
  return p.entailment;
}

namespace detail {

inline NliProbabilities probabilities_from_json(const nlohmann::json& j) {
  NliProbabilities p;
  try {
    p.entailment = j.at("entailment").get<double>();
    p.neutral = j.at("neutral").get<double>();
    p.contradiction = j.at("contradiction").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("malformed semantic-scorer response: ") + e.what());
  }
  return p;
}

}  // namespace detail

// Speaks the semantic-scorer protocol: POST {"premise","hypothesis"} and
// receive {"entailment","neutral","contradiction"}; arrays for batches.
class HttpSemanticBackend : public SemanticBackend {
 public:
  explicit HttpSemanticBackend(EndpointConfig cfg) : cfg_(std::move(cfg)) {
    const auto url = detail::parse_url(cfg_.base_url);
    origin_ = url.origin;
    path_ = url.path;
    const auto token = detail::read_credential(cfg_.credential_env);
    if (!token.empty()) headers_.emplace("Authorization", "Bearer " + token);
  }

  NliProbabilities infer(const NliInput& input) override {
    nlohmann::json body = {{"premise", input.premise}, {"hypothesis", input.hypothesis}};
    return with_retries(RetryPolicy::from(cfg_), [&] {
      auto client = detail::make_client(origin_, cfg_.timeout_ms);
      return detail::probabilities_from_json(detail::post_json(*client, path_, body, headers_));
    });
  }

  std::vector<NliProbabilities> infer_batch(const std::vector<NliInput>& inputs) override {
    nlohmann::json premises = nlohmann::json::array(), hypotheses = nlohmann::json::array();
    for (const auto& in : inputs) {
      premises.push_back(in.premise);
      hypotheses.push_back(in.hypothesis);
    }
    nlohmann::json body = {{"premise", premises}, {"hypothesis", hypotheses}};
    const auto res = with_retries(RetryPolicy::from(cfg_), [&] {
      auto client = detail::make_client(origin_, cfg_.timeout_ms);
      return detail::post_json(*client, path_, body, headers_);
    });
    std::vector<NliProbabilities> out;
    try {
      const auto& e = res.at("entailment");
      const auto& n = res.at("neutral");
      const auto& c = res.at("contradiction");
      if (!e.is_array() || e.size() != inputs.size() || n.size() != inputs.size() ||
          c.size() != inputs.size()) {
        throw ProtocolError("batch response arrays do not match the request length");
      }
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        out.push_back({e[i].get<double>(), n[i].get<double>(), c[i].get<double>()});
      }
    } catch (const nlohmann::json::exception& ex) {
      throw ProtocolError(std::string("malformed batch response: ") + ex.what());
    }
    return out;
  }

 private:
  EndpointConfig cfg_;
  std::string origin_;
  std::string path_;
  httplib::Headers headers_;
};

// --- LLM judge --------------------------------------------------------------

struct ChatRequest {
  std::string model;
  std::string system;
  std::string user;
};

class JudgeClient {
 public:
  virtual ~JudgeClient() = default;
  // Returns the completion text. Throws TransportError for retriable failures.
  virtual std::string complete(const ChatRequest& request) = 0;
};

inline constexpr std::string_view kDefaultJudgeInstruction =
    "You grade answers to questions against a reference answer. The candidate "
    "answer counts as a match when it expresses the same fact as the reference, "
    "however it is worded; names, places and quantities must refer to the same "
    "entity or value. Extra explanation around a correct answer is fine. Respond "
    "with the single character 1 if the candidate matches the reference and 0 if "
    "it does not.";

inline constexpr std::string_view kDefaultJudgeUserTemplate =
    "Question: {question}\nReference answer: {reference}\nCandidate answer: {answer}";

inline ChatRequest make_judge_request(std::string_view question, std::string_view answer,
                                      std::string_view reference, std::string model,
                                      std::string_view instruction = kDefaultJudgeInstruction) {
  const std::map<std::string_view, std::string_view> vars = {
      {"question", question}, {"answer", answer}, {"reference", reference}};
  return {std::move(model), std::string(instruction),
          detail::render_template(kDefaultJudgeUserTemplate, vars)};
}

struct JudgeResult {
  int verdict = 0;
  int retries = 0;
};

// Sends one judge request; accepts only the completions "0" and "1".
inline JudgeResult llm_judge(std::string_view question, std::string_view answer,
                             std::string_view reference, JudgeClient& client,
                             const std::string& model, const RetryPolicy& policy,
                             std::string_view instruction = kDefaultJudgeInstruction) {
  const ChatRequest request = make_judge_request(question, answer, reference, model, instruction);
  JudgeResult result;
  const std::string completion =
      with_retries(policy, [&] { return client.complete(request); }, &result.retries);
  const std::string trimmed = text::trim(completion);
  if (trimmed == "0" || trimmed == "1") {
    result.verdict = trimmed == "1" ? 1 : 0;
    return result;
  }
  throw ProtocolError("judge returned a non-binary completion: '" + completion.substr(0, 80) + "'");
}

// Chat-completions endpoint with a JSON-schema structured output that only
// admits the strings "0" and "1".
class HttpJudgeClient : public JudgeClient {
 public:
  explicit HttpJudgeClient(EndpointConfig cfg) : cfg_(std::move(cfg)) {
    const auto url = detail::parse_url(cfg_.base_url);
    origin_ = url.origin;
    path_ = detail::join_path(url.path == "/" ? "" : url.path, "/chat/completions");
    const auto token = detail::read_credential(cfg_.credential_env);
    if (!token.empty()) headers_.emplace("Authorization", "Bearer " + token);
  }

  static nlohmann::json request_body(const ChatRequest& req) {
    nlohmann::json schema = {
        {"type", "object"},
        {"properties", {{"verdict", {{"type", "string"}, {"enum", {"0", "1"}}}}}},
        {"required", {"verdict"}},
        {"additionalProperties", false}};
    return {{"model", req.model},
            {"temperature", 0},
            {"messages",
             {{{"role", "system"}, {"content", req.system}},
              {{"role", "user"}, {"content", req.user}}}},
            {"response_format",
             {{"type", "json_schema"},
              {"json_schema", {{"name", "binary_verdict"}, {"strict", true}, {"schema", schema}}}}}};
  }

  // Unwraps {"verdict": "..."} when the content is the structured object;
  // otherwise hands back the raw content for the caller to reject.
  static std::string extract_completion(const nlohmann::json& response) {
    std::string content;
    try {
      content = response.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ProtocolError(std::string("malformed chat completion: ") + e.what());
    }
    try {
      const auto obj = nlohmann::json::parse(content);
      if (obj.is_object() && obj.contains("verdict") && obj["verdict"].is_string()) {
        return obj["verdict"].get<std::string>();
      }
    } catch (const nlohmann::json::parse_error&) {
    }
    return content;
  }

  std::string complete(const ChatRequest& request) override {
    auto client = detail::make_client(origin_, cfg_.timeout_ms);
    return extract_completion(detail::post_json(*client, path_, request_body(request), headers_));
  }

 private:
  EndpointConfig cfg_;
  std::string origin_;
  std::string path_;
  httplib::Headers headers_;
};

}  // namespace nlilex
