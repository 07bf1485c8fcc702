// nlilex command-line entry point.
//
// Exit codes: 0 success, 1 validation error, 2 partial failure, 3 I/O error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "nlilex/nlilex.hpp"

namespace fs = std::filesystem;
using namespace nlilex;

namespace {

struct RunFlags {
  std::string config;
  std::optional<std::string> corpus, gold, calibration_model, cache_dir, output_dir, sort_by,
      hybrid_semantic_scorer;
  std::optional<double> threshold;
  std::optional<int> parallelism;
  std::optional<std::uint64_t> seed;

  void add_to(CLI::App* app) {
    app->add_option("--config", config, "JSON run configuration")->check(CLI::ExistingFile);
    app->add_option("--corpus", corpus, "corpus file (JSONL)");
    app->add_option("--gold", gold, "gold labels (JSON object pair_id -> 0/1)");
    app->add_option("--calibration-model", calibration_model, "NLI+lex model file");
    app->add_option("--hybrid-semantic-scorer", hybrid_semantic_scorer,
                    "scorer whose output feeds the hybrid");
    app->add_option("--threshold", threshold, "binarization threshold");
    app->add_option("--parallelism", parallelism, "max concurrent remote requests");
    app->add_option("--cache-dir", cache_dir, "response cache directory");
    app->add_option("--output-dir", output_dir, "where reports and score files go");
    app->add_option("--seed", seed, "random seed");
    app->add_option("--sort-by", sort_by, "table row order: mcc or accuracy");
  }

  RunConfig resolve() const {
    RunConfig c = config.empty() ? RunConfig{} : load_run_config(config);
    if (corpus) c.corpus = *corpus;
    if (gold) c.gold = *gold;
    if (calibration_model) c.calibration_model = fs::path(*calibration_model);
    if (hybrid_semantic_scorer) c.hybrid_semantic_scorer = *hybrid_semantic_scorer;
    if (threshold) c.threshold = *threshold;
    if (parallelism) c.parallelism = *parallelism;
    if (cache_dir) c.cache_dir = fs::path(*cache_dir);
    if (output_dir) c.output_dir = fs::path(*output_dir);
    if (seed) c.seed = *seed;
    if (sort_by) c.sort = parse_sort_key(*sort_by);
    return c;
  }
};

int to_code(ExitCode c) { return static_cast<int>(c); }

void print_counts(const Corpus& corpus) {
  std::printf("corpus '%s': %zu pairs\n", corpus.name().c_str(), corpus.size());
  const auto questions = question_counts(corpus);
  for (const auto& [src, n] : corpus.per_source_counts()) {
    std::printf("  %-20s %6zu pairs %6zu questions\n", src.c_str(), n, questions.at(src));
  }
}

int cmd_ingest(const std::string& corpus_path, const std::string& questions,
               const std::string& answers, const std::string& out, const std::string& name,
               const std::vector<std::string>& expect, bool expect_published) {
  std::optional<Corpus> corpus;
  if (!questions.empty() || !answers.empty()) {
    if (questions.empty() || answers.empty() || out.empty()) {
      throw ValidationError("building a corpus needs --questions, --answers and --out");
    }
    corpus = build_corpus(name.empty() ? fs::path(out).stem().string() : name,
                          load_questions(questions), load_answers(answers));
    save_corpus(*corpus, out);
  } else {
    if (corpus_path.empty()) throw ValidationError("ingest needs --corpus or --questions/--answers");
    corpus = load_corpus(corpus_path);
    if (!out.empty()) save_corpus(*corpus, out);
  }
  print_counts(*corpus);

  std::map<std::string, std::size_t> expected;
  if (expect_published) expected = published_distribution();
  for (const auto& e : expect) {
    const auto eq = e.find('=');
    if (eq == std::string::npos) throw ValidationError("--expect takes SOURCE=COUNT");
    expected[e.substr(0, eq)] = std::stoul(e.substr(eq + 1));
  }
  if (expect_published || !expect.empty()) {
    const auto deviations = validate_distribution(*corpus, expected);
    for (const auto& d : deviations) {
      std::printf("deviation: %s expected %zu questions, found %zu\n", d.source_dataset.c_str(),
                  d.expected, d.actual);
    }
    if (!deviations.empty()) return to_code(ExitCode::validation);
    std::printf("distribution matches\n");
  }
  return 0;
}

int cmd_score(const RunFlags& flags, const std::string& scorer, const std::string& out) {
  RunConfig cfg = flags.resolve();
  auto it = std::find_if(cfg.scorers.begin(), cfg.scorers.end(),
                         [&](const ScorerDescriptor& d) { return d.name == scorer; });
  if (it == cfg.scorers.end()) throw ValidationError("no scorer named '" + scorer + "' in config");
  if (cfg.parallelism < 1) throw ValidationError("parallelism must be at least 1");
  const Corpus corpus = load_corpus(cfg.corpus);
  std::optional<ScoreCache> cache;
  if (cfg.cache_dir) cache.emplace(*cfg.cache_dir);
  const auto batch = score_corpus(corpus, *it, BackendRegistry{},
                                  {cfg.threshold, cfg.parallelism, cache ? &*cache : nullptr});
  for (const auto& w : batch.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  save_records(batch.records, out);
  std::printf("%s: %zu scored, %zu failed -> %s\n", scorer.c_str(), batch.scored_count(),
              batch.failure_count(), out.c_str());
  return batch.failure_count() > 0 ? to_code(ExitCode::partial_failure) : 0;
}

int cmd_calibrate(const std::string& corpus_path, const std::string& gold, const std::string& se,
                  const std::string& lm, const std::string& out, TrainOptions opt,
                  double threshold) {
  const Corpus corpus = load_corpus(corpus_path);
  std::size_t skipped = 0;
  const auto rows = feature_rows(corpus, load_golds(gold), load_records(se), load_records(lm), &skipped);
  opt.corpus_name = corpus.name();
  auto model = train_calibration(rows, opt);
  model.threshold = threshold;
  model.validate();
  save_model(model, out);
  const auto& m = model.training_meta;
  std::printf("trained on %zu rows (%zu skipped for failed scores)\n", m.sample_count, skipped);
  std::printf("  w_semantic=%.6f w_lexical=%.6f intercept=%.6f threshold=%.3f\n", model.w_semantic,
              model.w_lexical, model.intercept, model.threshold);
  std::printf("  stop=%s iterations=%zu final_loss=%.6f max|grad|=%.3g training_accuracy=%.4f\n",
              m.stop_reason.c_str(), m.iterations, m.final_loss, m.gradient_max_norm,
              m.training_accuracy);
  std::printf("model written to %s\n", out.c_str());
  return 0;
}

EmitOptions emit_options(const std::vector<std::string>& formats, SortKey sort) {
  EmitOptions opt;
  opt.sort = sort;
  if (!formats.empty()) {
    opt.formats.clear();
    for (const auto& f : formats) opt.formats.push_back(parse_report_format(f));
  }
  return opt;
}

int cmd_evaluate(const RunFlags& flags, const std::vector<std::string>& formats) {
  RunConfig cfg = flags.resolve();
  if (!cfg.output_dir) throw ValidationError("evaluate needs --output-dir (or output_dir in config)");
  const auto bundle = run_evaluation(cfg, BackendRegistry{});
  save_bundle(bundle, *cfg.output_dir / "bundle.json");
  report_emit(bundle, *cfg.output_dir, emit_options(formats, cfg.sort));
  std::fputs(render_text(bundle.reports, EmitOptions{}.title).c_str(), stdout);
  for (const auto& [name, why] : bundle.failed_scorers) {
    std::fprintf(stderr, "scorer '%s' failed: %s\n", name.c_str(), why.c_str());
  }
  return bundle.failed_scorers.empty() ? 0 : to_code(ExitCode::partial_failure);
}

int cmd_report(const std::string& bundle_path, const std::string& out,
               const std::vector<std::string>& formats, const std::string& sort_by) {
  const auto bundle = load_bundle(bundle_path);
  const auto opt = emit_options(formats, parse_sort_key(sort_by));
  for (const auto& p : report_emit(bundle, out, opt)) std::printf("%s\n", p.string().c_str());
  return 0;
}

AnnotationConfig annotation_config(const std::string& path) {
  return path.empty() ? AnnotationConfig::published_preset() : load_annotation_config(path);
}

int cmd_agreement(const std::string& corpus_path, const std::string& config, const std::string& log,
                  bool json, const std::string& gold_out) {
  const Corpus corpus = load_corpus(corpus_path);
  if (!fs::exists(log)) throw IoError("judgment log " + log + " does not exist");
  JudgmentStore store(corpus, annotation_config(config), fs::path(log));
  const auto report = iaa_report(store);
  if (json) {
    std::printf("%s\n", to_json(report).dump(2).c_str());
  } else {
    std::fputs(to_text(report).c_str(), stdout);
  }
  if (!gold_out.empty()) {
    const auto missing = store.incomplete_pairs();
    if (missing > 0) {
      throw ValidationError(std::to_string(missing) + " pairs lack full coverage; no gold written");
    }
    GoldMap golds;
    for (const auto& [pid, g] : store.gold_labels()) golds[pid] = g.verdict;
    save_golds(golds, gold_out);
  }
  bool complete = true;
  for (const auto& p : report.partitions) complete = complete && p.complete;
  return complete ? 0 : to_code(ExitCode::partial_failure);
}

int cmd_serve(const std::string& corpus_path, const std::string& config, const std::string& log,
              const std::string& host, int port, const std::string& static_dir) {
  const Corpus corpus = load_corpus(corpus_path);
  JudgmentStore store(corpus, annotation_config(config), fs::path(log));
  AnnotationService service(store);
  if (!static_dir.empty() && !service.mount_static(static_dir)) {
    throw IoError("cannot serve static files from " + static_dir);
  }
  std::printf("annotation service on http://%s:%d (%zu pairs)\n", host.c_str(), port, corpus.size());
  std::fflush(stdout);
  if (!service.listen(host, port)) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
  return 0;
}

int cmd_ui_dev_proxy(const std::string& static_dir, const std::string& api, const std::string& host,
                     int port) {
  httplib::Server server;
  if (!server.set_mount_point("/", static_dir)) throw IoError("cannot serve " + static_dir);
  if (!api.empty()) {
    const auto forward = [api](const httplib::Request& req, httplib::Response& res) {
      httplib::Client client(api);
      httplib::Result r = req.method == "POST"
                              ? client.Post(req.target, req.body, req.get_header_value("Content-Type"))
                              : client.Get(req.target);
      if (!r) {
        res.status = 502;
        res.set_content(R"({"error":"api unreachable"})", "application/json");
        return;
      }
      res.status = r->status;
      res.set_content(r->body, r->get_header_value("Content-Type"));
    };
    server.Get("/api/.*", forward);
    server.Post("/api/.*", forward);
  }
  std::printf("serving %s on http://%s:%d\n", static_dir.c_str(), host.c_str(), port);
  std::fflush(stdout);
  if (!server.listen(host, port)) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nlilex: NLI+lex answer evaluation and human-agreement toolkit"};
  app.require_subcommand(1);

  auto* ingest = app.add_subcommand("ingest", "validate or assemble a corpus");
  std::string ingest_corpus, ingest_questions, ingest_answers, ingest_out, ingest_name;
  std::vector<std::string> ingest_expect;
  bool ingest_published = false;
  ingest->add_option("--corpus", ingest_corpus, "corpus file to validate");
  ingest->add_option("--questions", ingest_questions, "question records (JSONL)");
  ingest->add_option("--answers", ingest_answers, "answer records (JSONL)");
  ingest->add_option("--out", ingest_out, "write the validated corpus here");
  ingest->add_option("--name", ingest_name, "corpus name");
  ingest->add_option("--expect", ingest_expect, "expected questions per source, SOURCE=COUNT");
  ingest->add_flag("--expect-published", ingest_published,
                   "expect five sources with 120 questions each");

  auto* score = app.add_subcommand("score", "run one scorer over a corpus");
  RunFlags score_flags;
  std::string score_scorer, score_out;
  score_flags.add_to(score);
  score->add_option("--scorer", score_scorer, "scorer name from the config")->required();
  score->add_option("--out", score_out, "score-record file (JSONL)")->required();

  auto* calibrate = app.add_subcommand("calibrate", "fit the NLI+lex weights");
  std::string cal_corpus, cal_gold, cal_se, cal_lm, cal_out, cal_weighting = "inverse_frequency";
  TrainOptions cal_opt;
  bool cal_no_intercept = false;
  double cal_threshold = 0.5;
  calibrate->add_option("--corpus", cal_corpus)->required();
  calibrate->add_option("--gold", cal_gold)->required();
  calibrate->add_option("--se", cal_se, "semantic score records")->required();
  calibrate->add_option("--lm", cal_lm, "lexical match records")->required();
  calibrate->add_option("--out", cal_out, "model file")->required();
  calibrate->add_flag("--no-intercept", cal_no_intercept, "fit w_semantic and w_lexical only");
  calibrate->add_option("--class-weighting", cal_weighting, "none or inverse_frequency");
  calibrate->add_option("--l2", cal_opt.l2);
  calibrate->add_option("--learning-rate", cal_opt.learning_rate);
  calibrate->add_option("--max-iterations", cal_opt.max_iterations);
  calibrate->add_option("--gradient-tolerance", cal_opt.gradient_tolerance);
  calibrate->add_option("--threshold", cal_threshold);

  auto* evaluate = app.add_subcommand("evaluate", "score, compare with gold labels, write reports");
  RunFlags eval_flags;
  std::vector<std::string> eval_formats;
  eval_flags.add_to(evaluate);
  evaluate->add_option("--format", eval_formats, "table-text, csv, json, markdown (default: all)")->delimiter(',');

  auto* report = app.add_subcommand("report", "render reports from a saved bundle");
  std::string report_bundle, report_out, report_sort = "mcc";
  std::vector<std::string> report_formats;
  report->add_option("--bundle", report_bundle)->required()->check(CLI::ExistingFile);
  report->add_option("--out", report_out)->required();
  report->add_option("--format", report_formats)->delimiter(',');
  report->add_option("--sort-by", report_sort);

  auto* agreement = app.add_subcommand("agreement", "inter-annotator agreement tables");
  std::string agr_corpus, agr_config, agr_log, agr_gold_out;
  bool agr_json = false;
  agreement->add_option("--corpus", agr_corpus)->required();
  agreement->add_option("--annotation-config", agr_config, "defaults to the published preset");
  agreement->add_option("--log", agr_log, "judgment log (JSONL)")->required();
  agreement->add_option("--gold-out", agr_gold_out, "write majority-vote gold labels");
  agreement->add_flag("--json", agr_json);

  auto* serve = app.add_subcommand("serve", "run the annotation service");
  std::string srv_corpus, srv_config, srv_log, srv_host = "127.0.0.1", srv_static;
  int srv_port = 8080;
  serve->add_option("--corpus", srv_corpus)->required();
  serve->add_option("--annotation-config", srv_config, "defaults to the published preset");
  serve->add_option("--log", srv_log, "judgment log (JSONL)")->required();
  serve->add_option("--host", srv_host);
  serve->add_option("--port", srv_port);
  serve->add_option("--static", srv_static, "UI build directory to serve at /");

  auto* proxy = app.add_subcommand("ui-dev-proxy", "serve the UI build, forwarding /api");
  std::string px_static, px_api, px_host = "127.0.0.1";
  int px_port = 5173;
  proxy->add_option("--static", px_static)->required()->check(CLI::ExistingDirectory);
  proxy->add_option("--api", px_api, "annotation service origin, e.g. http://127.0.0.1:8080");
  proxy->add_option("--host", px_host);
  proxy->add_option("--port", px_port);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : to_code(ExitCode::validation);
  }

  try {
    if (*ingest)
      return cmd_ingest(ingest_corpus, ingest_questions, ingest_answers, ingest_out, ingest_name,
                        ingest_expect, ingest_published);
    if (*score) return cmd_score(score_flags, score_scorer, score_out);
    if (*calibrate) {
      cal_opt.use_intercept = !cal_no_intercept;
      cal_opt.class_weighting = parse_class_weighting(cal_weighting);
      return cmd_calibrate(cal_corpus, cal_gold, cal_se, cal_lm, cal_out, cal_opt, cal_threshold);
    }
    if (*evaluate) return cmd_evaluate(eval_flags, eval_formats);
    if (*report) return cmd_report(report_bundle, report_out, report_formats, report_sort);
    if (*agreement) return cmd_agreement(agr_corpus, agr_config, agr_log, agr_json, agr_gold_out);
    if (*serve) return cmd_serve(srv_corpus, srv_config, srv_log, srv_host, srv_port, srv_static);
    if (*proxy) return cmd_ui_dev_proxy(px_static, px_api, px_host, px_port);
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return to_code(ExitCode::validation);
  } catch (const IoError& e) {
    std::fprintf(stderr, "I/O error: %s\n", e.what());
    return to_code(ExitCode::io);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return to_code(ExitCode::partial_failure);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return to_code(ExitCode::validation);
  }
  return 0;
}
