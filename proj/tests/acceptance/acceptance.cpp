// Acceptance checks. One PASS/FAIL line per criterion; exit status is the
// number of failures. Tolerances and time limits are fixed below.

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <thread>

#include <nlilex/nlilex.hpp>

#include "annotation_fixture.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace nlilex;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

constexpr double kRandomTol = 1e-10;
constexpr double kWorkedTol = 1e-4;
constexpr double kExactTol = 1e-12;
constexpr double kGradRelTol = 1e-4;
constexpr double kDupTol = 1e-6;

const fs::path kSamples = NLILEX_SAMPLES_DIR;
const fs::path kGolden = fs::path(NLILEX_TEST_DATA_DIR) / "golden";

// Collects the first few mismatches of a criterion.
struct Check {
  std::vector<std::string> problems;
  void expect(bool ok, const std::string& what) {
    if (!ok && problems.size() < 8) problems.push_back(what);
  }
  void near(double got, double want, double tol, const std::string& what) {
    std::ostringstream s;
    s.precision(17);
    s << what << ": got " << got << " want " << want;
    expect(std::abs(got - want) <= tol, s.str());
  }
};

int failures = 0;

void criterion(const std::string& name, double limit_s, const std::function<void(Check&)>& body) {
  Check c;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(c);
  } catch (const std::exception& e) {
    c.problems.push_back(std::string("exception: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (limit_s > 0) {
    std::ostringstream s;
    s << "runtime " << secs << " s exceeds " << limit_s << " s";
    c.expect(secs < limit_s, s.str());
  }
  const bool ok = c.problems.empty();
  failures += !ok;
  std::printf("%s %s (%.2f s", ok ? "PASS" : "FAIL", name.c_str(), secs);
  if (limit_s > 0) std::printf(", limit %.0f s", limit_s);
  std::printf(")\n");
  for (const auto& p : c.problems) std::printf("    %s\n", p.c_str());
  std::fflush(stdout);
}

double mcc_oracle(const std::vector<int>& v, const std::vector<int>& g) {
  const double r = oracle::pearson(v, g);
  return std::isnan(r) ? 0.0 : r;
}

ConfusionMatrix cm(std::uint64_t tp, std::uint64_t tn, std::uint64_t fp, std::uint64_t fn) {
  ConfusionMatrix m;
  m.tp = tp;
  m.tn = tn;
  m.fp = fp;
  m.fn = fn;
  return m;
}

// --- metric oracles ---------------------------------------------------------

void metric_oracles(Check& c) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> len(1, 60);
  std::uniform_real_distribution<double> bias(0.0, 1.0);
  for (int i = 0; i < 1500; ++i) {
    const std::size_t n = len(rng);
    const auto v = oracle::random_bits(rng, n, bias(rng));
    const auto g = oracle::random_bits(rng, n, bias(rng));
    const auto m = confusion(v, g);
    c.near(mcc(m), mcc_oracle(v, g), kRandomTol, "mcc instance " + std::to_string(i));
    c.near(accuracy(m), oracle::accuracy(v, g), kRandomTol, "accuracy instance " + std::to_string(i));
    c.near(f1(m), oracle::f1(v, g), kRandomTol, "f1 instance " + std::to_string(i));
  }
  for (int i = 0; i < 1500; ++i) {
    const auto a = oracle::random_tokens(rng, 10);
    const auto b = oracle::random_tokens(rng, 10);
    c.near(token_f1(a, b), oracle::token_f1(a, b), kRandomTol, "token_f1 " + oracle::join(a) + " | " + oracle::join(b));
    c.near(rouge_l(a, b), oracle::rouge_l(a, b), kRandomTol, "rouge_l " + oracle::join(a) + " | " + oracle::join(b));
  }
  // Worked examples.
  c.near(token_f1("the cat sat", "the cat"), 0.8, kWorkedTol, "token_f1 worked");
  c.near(rouge_l("the cat sat on the mat", "the cat on a mat"), 0.7272727272727273, kWorkedTol,
         "rouge_l worked");
  c.near(accuracy(cm(2, 2, 1, 1)), 2.0 / 3.0, kWorkedTol, "accuracy(2,2,1,1)");
  c.near(f1(cm(600, 245, 90, 65)), 0.8856088560885609, kWorkedTol, "f1 0.8450 fixture");
  c.near(mcc(cm(600, 245, 90, 65)), 0.646609772525495, kWorkedTol, "mcc 0.8450 fixture");
}

void mcc_fixtures(Check& c) {
  c.near(mcc(cm(2, 2, 1, 1)), 1.0 / 3.0, kExactTol, "mcc(2,2,1,1)");
  c.near(mcc(cm(5, 7, 0, 0)), 1.0, kExactTol, "perfect");
  c.near(mcc(cm(0, 0, 4, 6)), -1.0, kExactTol, "inverted");
  c.near(mcc(cm(10, 0, 3, 0)), 0.0, kExactTol, "all predicted and gold positive");
  c.near(mcc(cm(0, 8, 0, 0)), 0.0, kExactTol, "all negative");
  c.near(mcc(cm(3, 0, 0, 0)), 0.0, kExactTol, "all positive");
  c.near(mcc(cm(0, 4, 0, 5)), 0.0, kExactTol, "constant negative verdict");
}

// --- hybrid -----------------------------------------------------------------

CalibrationModel weights(double w1, double w2, double b) {
  CalibrationModel m;
  m.w_semantic = w1;
  m.w_lexical = w2;
  m.intercept = b;
  return m;
}

std::vector<FeatureRow> overlapping_rows(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<FeatureRow> rows;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = u(rng) < 0.5;
    const double se = std::clamp(0.35 + 0.3 * y + 0.5 * (u(rng) - 0.5), 0.0, 1.0);
    const int lm = u(rng) < (y ? 0.6 : 0.15);
    rows.push_back({se, lm, y});
  }
  return rows;
}

void hybrid(Check& c) {
  c.near(combine(0.37, 1, weights(0, 0, 0)), 0.5, kWorkedTol, "combine zero weights");
  c.near(combine(0.9, 1, weights(4, 2, -3)), 0.9309, kWorkedTol, "combine (0.9,1)");
  c.near(combine(0.1, 0, weights(4, 2, -3)), 0.0691, kWorkedTol, "combine (0.1,0)");

  const auto rows = overlapping_rows(60, 8);
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> p(-3, 3);
  TrainOptions opt;
  opt.l2 = 0.05;
  for (int i = 0; i < 100; ++i) {
    const CalibrationParams theta{p(rng), p(rng), p(rng)};
    const auto g = calibration_gradient(rows, theta, opt);
    for (int k = 0; k < 3; ++k) {
      auto hi = theta, lo = theta;
      hi[k] += 1e-5;
      lo[k] -= 1e-5;
      const double fd = (calibration_loss(rows, hi, opt) - calibration_loss(rows, lo, opt)) / 2e-5;
      const double rel = std::abs(fd - g[k]) / std::max(1e-8, std::max(std::abs(fd), std::abs(g[k])));
      c.expect(rel <= kGradRelTol, "gradient point " + std::to_string(i) + " component " +
                                       std::to_string(k) + " rel err " + std::to_string(rel));
    }
  }

  std::vector<FeatureRow> separable;
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 200; ++i) {
    const int lm = u(rng) < 0.5;
    separable.push_back({u(rng), lm, lm});
  }
  const auto fit = train_calibration(separable);
  c.expect(fit.training_meta.training_accuracy == 1.0,
           "separable training accuracy " + std::to_string(fit.training_meta.training_accuracy));
  c.expect(fit.training_meta.iterations <= 5000,
           "separable iterations " + std::to_string(fit.training_meta.iterations));

  TrainOptions tight;
  tight.class_weighting = ClassWeighting::none;
  tight.learning_rate = 1.0;
  tight.max_iterations = 200000;
  tight.gradient_tolerance = 1e-10;
  const auto base_rows = overlapping_rows(80, 5);
  const auto base = train_calibration(base_rows, tight);
  for (int k : {2, 3}) {
    std::vector<FeatureRow> dup;
    for (int i = 0; i < k; ++i) dup.insert(dup.end(), base_rows.begin(), base_rows.end());
    const auto m = train_calibration(dup, tight);
    const auto tag = "duplicated x" + std::to_string(k);
    c.near(m.w_semantic, base.w_semantic, kDupTol, tag + " w_semantic");
    c.near(m.w_lexical, base.w_lexical, kDupTol, tag + " w_lexical");
    c.near(m.intercept, base.intercept, kDupTol, tag + " intercept");
  }
}

// --- end to end -------------------------------------------------------------

// Report outputs under `root`. Score files are skipped: they carry measured latency.
std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    const auto rel = fs::relative(e.path(), root);
    if (e.is_regular_file() && *rel.begin() != "scores") out[rel.string()] = slurp(e.path());
  }
  return out;
}

struct EndToEnd {
  TempDir dir;
  SyntheticSet set = synthetic(4, 5, 5, 17, "synthetic-100");

  EndToEnd() {
    save_corpus(set.corpus, dir / "corpus.jsonl");
    save_golds(set.golds, dir / "gold.json");
  }

  RunConfig config(const std::string& out) const {
    RunConfig c;
    c.corpus = dir / "corpus.jsonl";
    c.gold = dir / "gold.json";
    c.scorers = {descriptor("oracle-nli", ScorerKind::nli, 400'000'000),
                 descriptor("lexical", ScorerKind::lexical), descriptor("token-f1", ScorerKind::token_f1),
                 descriptor("rouge-l", ScorerKind::rouge_l)};
    c.output_dir = dir / out;
    c.cache_dir = dir / (out + "-cache");
    c.parallelism = 4;
    return c;
  }

  BackendRegistry registry(std::function<void()> before_call = {}) const {
    auto inner = ScriptedSemantic::oracle(set.corpus, set.golds);
    BackendRegistry reg;
    reg.register_semantic("oracle-nli", std::make_shared<ScriptedSemantic>([inner, before_call](const NliInput& in) {
                            if (before_call) before_call();
                            return inner->infer(in);
                          }));
    return reg;
  }

  void run(const RunConfig& cfg, const BackendRegistry& reg) const {
    const auto bundle = run_evaluation(cfg, reg);
    report_emit(bundle, *cfg.output_dir);
    save_bundle(bundle, *cfg.output_dir / "bundle.json");
  }
};

void end_to_end(Check& c) {
  EndToEnd e;
  c.expect(e.set.corpus.size() == 100, "corpus has " + std::to_string(e.set.corpus.size()) + " pairs");

  // (a) and (b)
  const auto bundle = run_evaluation(e.config("a"), e.registry());
  c.expect(bundle.failed_scorers.empty(), "a scorer failed");
  for (const auto& r : bundle.reports) {
    if (r.scorer_name != "oracle-nli") continue;
    c.near(r.accuracy, 1.0, 0, "oracle accuracy");
    c.near(r.f1, 1.0, 0, "oracle f1");
    c.near(r.mcc, 1.0, 0, "oracle mcc");
    c.expect(r.n == 100, "oracle n");
  }
  for (const auto* slices : {&bundle.by_candidate_model, &bundle.by_source_dataset}) {
    std::map<std::string, ConfusionMatrix> sum;
    for (const auto& [key, rows] : *slices)
      for (const auto& r : rows) sum[r.scorer_name] += *r.confusion;
    for (const auto& r : bundle.reports)
      c.expect(sum[r.scorer_name] == *r.confusion, "slices of " + r.scorer_name + " do not sum to global");
  }

  // (c) two identical runs
  e.run(e.config("run1"), e.registry());
  e.run(e.config("run2"), e.registry());
  const auto r1 = tree_bytes(e.dir / "run1"), r2 = tree_bytes(e.dir / "run2");
  c.expect(r1.size() > 10, "too few output files");
  c.expect(r1 == r2, "two identical runs differ");

  // (d) a child process is SIGKILLed mid-scoring, then the run resumes from its cache
  const auto killed_cfg = e.config("resumed");
  std::fflush(stdout);
  const pid_t child = ::fork();
  if (child == 0) {
    auto calls = std::make_shared<std::atomic<int>>(0);
    auto reg = e.registry([calls] {
      if (calls->fetch_add(1) == 37) ::kill(::getpid(), SIGKILL);
    });
    try {
      e.run(killed_cfg, reg);
    } catch (...) {
    }
    ::_exit(0);
  }
  int status = 0;
  ::waitpid(child, &status, 0);
  c.expect(WIFSIGNALED(status) && WTERMSIG(status) == SIGKILL, "child was not killed");
  ScoreCache partial(*killed_cfg.cache_dir);
  const auto cached = partial.size("oracle-nli");
  c.expect(cached > 0 && cached < 100, "cache after kill holds " + std::to_string(cached) + " entries");

  auto resumed_calls = std::make_shared<std::atomic<int>>(0);
  e.run(killed_cfg, e.registry([resumed_calls] { resumed_calls->fetch_add(1); }));
  c.expect(resumed_calls->load() + int(cached) <= 100,
           "resume re-scored cached pairs (" + std::to_string(resumed_calls->load()) + " calls)");
  c.expect(tree_bytes(e.dir / "resumed") == r1, "resumed run differs from uninterrupted run");
}

// --- annotation -------------------------------------------------------------

void annotation(Check& c) {
  const std::vector<PartitionAssignment> table = {{"1", {"d1", "d2", "d4"}},
                                                  {"2", {"d1", "d3", "d5"}},
                                                  {"3", {"d1", "d3", "d5"}},
                                                  {"4", {"d2", "d3", "d4"}},
                                                  {"5", {"d2", "d4", "d5"}}};
  c.expect(published_assignment_preset() == table, "preset differs from the published table");

  const auto corpus = annotation_fixture::corpus();
  c.expect(corpus.size() == 60, "partition has " + std::to_string(corpus.size()) + " pairs");
  TempDir dir;
  JudgmentStore store(corpus, annotation_fixture::config(), dir / "log.jsonl");
  std::vector<std::thread> annotators;
  for (std::string e : {"A", "B", "C"}) {
    annotators.emplace_back([&store, e] {
      while (auto task = store.next_task(e)) {
        const int q = std::stoi(task->question_id.substr(1));
        store.record(e, task->pair_id, annotation_fixture::verdict(e, q, task->candidate_model));
      }
    });
  }
  for (auto& t : annotators) t.join();
  c.expect(store.incomplete_pairs() == 0, "pairs left incomplete");

  const auto golds = store.gold_labels();
  c.expect(golds.size() == 60, "gold count " + std::to_string(golds.size()));
  for (const auto& p : corpus) {
    const int q = std::stoi(p.question_id.substr(1));
    std::vector<int> votes;
    for (const char* e : {"A", "B", "C"}) votes.push_back(annotation_fixture::verdict(e, q, p.candidate_model));
    const auto it = golds.find(p.pair_id);
    c.expect(it != golds.end() && it->second == majority_vote(p.pair_id, votes),
             "gold differs from batch majority for " + p.pair_id);
  }
  JudgmentStore replayed(corpus, annotation_fixture::config(), dir / "log.jsonl");
  c.expect(replayed.gold_labels() == golds, "golds differ after replaying the log");

  const auto report = iaa_report(store);
  c.expect(report.partitions.size() == 1 && report.partitions[0].complete, "partition report incomplete");
  if (!report.partitions.empty()) {
    const auto& models = report.partitions[0].models;
    c.expect(models.size() == 5, "model tables " + std::to_string(models.size()));
    for (const auto& t : models) {
      const auto expected = annotation_fixture::expected_rows(t.candidate_model);
      for (std::size_t i = 0; i < std::min<std::size_t>(3, t.rows.size()); ++i) {
        const auto got_mcc = format_fixed(t.rows[i].agreement.mcc, 3);
        const auto got_acc = format_fixed(t.rows[i].agreement.accuracy, 3);
        c.expect(got_mcc == expected[i].mcc && got_acc == expected[i].accuracy,
                 t.candidate_model + " " + t.rows[i].label + ": " + got_mcc + "/" + got_acc +
                     " want " + expected[i].mcc + "/" + expected[i].accuracy);
      }
    }
  }

  std::map<std::string, int> a, b;
  std::vector<std::string> scope;
  for (int i = 0; i < 120; ++i) {
    const auto id = "p" + std::to_string(i);
    scope.push_back(id);
    a[id] = 1;
    b[id] = i == 41 ? 0 : 1;
  }
  const auto one = pairwise_agreement(a, b, scope);
  c.expect(format_fixed(one.accuracy, 3) == "0.992", "single disagreement accuracy " + format_fixed(one.accuracy, 3));
  c.expect(format_fixed(one.mcc, 3) == "0.000", "single disagreement mcc " + format_fixed(one.mcc, 3));
}

// --- lexical fixture and replication hook -----------------------------------

void lexical(Check& c) {
  c.expect(lexical_match("Scott Derrickson is an American Director, while Ed Wood was a American "
                         "filmmaker. Both are of the same nationality.",
                         "yes") == 0,
           "verbose answer vs \"yes\" matched");
  c.expect(lexical_match("Paris", "Paris") == 1, "identity");
  c.expect(lexical_match("the answer is PARIS", "paris") == 1, "case fold");
  c.expect(lexical_match("STRASSE", "straße") == 1, "full case fold");
  c.expect(lexical_match("Newark", "new york") == 0, "near miss matched");
}

void replication(Check& c) {
  const auto bundle = load_bundle(kSamples / "published_table.json");
  TempDir out;
  report_emit(bundle, out.path(), {{ReportFormat::text}, SortKey::mcc});
  c.expect(slurp(out / "global.txt") == slurp(kGolden / "published_table.txt"), "MCC-ordered table differs");
  report_emit(bundle, out.path(), {{ReportFormat::text}, SortKey::accuracy});
  c.expect(slurp(out / "global.txt") == slurp(kGolden / "published_table_by_accuracy.txt"),
           "accuracy-ordered table differs");
  for (const auto& r : bundle.reports) {
    if (r.scorer_name != "NLI + lex") continue;
    c.expect(format_fixed(r.accuracy, 4) == "0.8450" && format_fixed(r.f1, 4) == "0.8865" &&
                 format_fixed(r.mcc, 4) == "0.6603",
             "NLI + lex row does not carry the published values");
  }
}

}  // namespace

int main() {
  criterion("metric oracle equivalence", 30, metric_oracles);
  criterion("mcc fixtures", 0, mcc_fixtures);
  criterion("hybrid correctness", 10, hybrid);
  criterion("end-to-end synthetic run", 60, end_to_end);
  criterion("annotation pipeline", 0, annotation);
  criterion("lexical-match fixture", 0, lexical);
  criterion("published table replication hook", 0, replication);
  std::printf("%d failed\n", failures);
  return failures == 0 ? 0 : 1;
}
