#pragma once

// JSON HTTP API consumed by the annotation UI.
//
//   GET  /api/tasks/next?evaluator=<id>  200 task | 204 when done
//   POST /api/judgments                  200 {accepted} | 400 | 404 | 409
//   GET  /api/progress
//   GET  /api/agreement
//   GET  /api/gold                       200 map | 409 while coverage is incomplete
//
// Task payloads carry only the pair id, question, reference and candidate
// answer: never the candidate model, machine scores or other verdicts.

#include <filesystem>
#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "nlilex/annotation.hpp"

namespace nlilex {

class AnnotationService {
 public:
  explicit AnnotationService(JudgmentStore& store) : store_(store) { routes(); }

  // Serves a directory of static files (the UI build) at "/".
  bool mount_static(const std::filesystem::path& dir) {
    return server_.set_mount_point("/", dir.string());
  }

  // Binds to an ephemeral port and returns it, or -1.
  int bind_any_port(const std::string& host = "127.0.0.1") {
    return server_.bind_to_any_port(host);
  }
  bool bind(const std::string& host, int port) { return server_.bind_to_port(host, port); }
  bool listen_after_bind() { return server_.listen_after_bind(); }
  bool listen(const std::string& host, int port) { return server_.listen(host, port); }
  void wait_until_ready() { server_.wait_until_ready(); }
  void stop() { server_.stop(); }

  httplib::Server& server() { return server_; }

 private:
  static void send_json(httplib::Response& res, int status, const nlohmann::ordered_json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, status, {{"accepted", false}, {"error", message}});
  }

  void routes() {
    server_.Get("/api/tasks/next", [this](const httplib::Request& req, httplib::Response& res) {
      if (!req.has_param("evaluator")) return send_error(res, 400, "missing evaluator parameter");
      const auto evaluator = req.get_param_value("evaluator");
      try {
        const auto task = store_.next_task(evaluator);
        if (!task) {
          res.status = 204;
          return;
        }
        const auto prog = store_.progress(evaluator);
        nlohmann::ordered_json body;
        body["pair_id"] = task->pair_id;
        body["question"] = task->question;
        body["reference_answer"] = task->reference_answer;
        body["candidate_answer"] = task->candidate_answer;
        body["progress"] = {{"done", prog.done}, {"total", prog.total}};
        send_json(res, 200, body);
      } catch (const UnknownEvaluatorError& e) {
        send_error(res, 404, e.what());
      }
    });

    server_.Post("/api/judgments", [this](const httplib::Request& req, httplib::Response& res) {
      nlohmann::json body;
      try {
        body = nlohmann::json::parse(req.body);
      } catch (const nlohmann::json::parse_error&) {
        return send_error(res, 400, "request body is not JSON");
      }
      if (!body.is_object() || !body.contains("evaluator_id") || !body.contains("pair_id") ||
          !body.contains("verdict") || !body["evaluator_id"].is_string() ||
          !body["pair_id"].is_string() || !body["verdict"].is_number_integer()) {
        return send_error(res, 400, "expected {evaluator_id, pair_id, verdict}");
      }
      const int verdict = body["verdict"].get<int>();
      if (verdict != 0 && verdict != 1) return send_error(res, 400, "verdict must be 0 or 1");
      try {
        store_.record(body["evaluator_id"].get<std::string>(), body["pair_id"].get<std::string>(),
                      verdict);
        send_json(res, 200, {{"accepted", true}});
      } catch (const UnknownPairError& e) {
        send_error(res, 404, e.what());
      } catch (const AssignmentError& e) {
        send_error(res, 409, e.what());
      } catch (const IoError& e) {
        send_error(res, 500, e.what());
      }
    });

    server_.Get("/api/progress", [this](const httplib::Request&, httplib::Response& res) {
      nlohmann::ordered_json body;
      body["evaluators"] = nlohmann::ordered_json::object();
      for (const auto& e : store_.evaluators()) {
        const auto p = store_.progress(e);
        body["evaluators"][e] = {{"done", p.done}, {"total", p.total}};
      }
      body["partitions"] = nlohmann::ordered_json::object();
      for (const auto& [pid, _] : store_.config().partitions) {
        const auto p = store_.partition_progress(pid);
        body["partitions"][pid] = {{"done", p.done}, {"total", p.total}};
      }
      send_json(res, 200, body);
    });

    server_.Get("/api/agreement", [this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, to_json(iaa_report(store_)));
    });

    server_.Get("/api/gold", [this](const httplib::Request&, httplib::Response& res) {
      const auto missing = store_.incomplete_pairs();
      if (missing > 0) {
        return send_json(res, 409, {{"error", "coverage incomplete"}, {"incomplete_pairs", missing}});
      }
      nlohmann::ordered_json body = nlohmann::ordered_json::object();
      for (const auto& [pid, g] : store_.gold_labels()) body[pid] = g.verdict;
      send_json(res, 200, body);
    });
  }

  JudgmentStore& store_;
  httplib::Server server_;
};

}  // namespace nlilex
