#include <cmath>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include <nlilex/hybrid.hpp>

#include "support.hpp"

using namespace nlilex;
using testing_support::TempDir;

namespace {

CalibrationModel model(double w1, double w2, double b, double t = 0.5) {
  CalibrationModel m;
  m.w_semantic = w1;
  m.w_lexical = w2;
  m.intercept = b;
  m.threshold = t;
  return m;
}

std::vector<FeatureRow> rows_label_is_lm(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  std::bernoulli_distribution coin(0.5);
  std::vector<FeatureRow> rows;
  for (std::size_t i = 0; i < n; ++i) {
    const int lm = coin(rng) ? 1 : 0;
    rows.push_back({u(rng), lm, lm});
  }
  return rows;
}

std::vector<FeatureRow> noisy_rows(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  std::bernoulli_distribution coin(0.5);
  std::vector<FeatureRow> rows;
  for (std::size_t i = 0; i < n; ++i) {
    // Informative but overlapping classes.
    const int y = coin(rng) ? 1 : 0;
    const double se = std::clamp(0.35 + 0.3 * y + 0.25 * (u(rng) - 0.5) * 2, 0.0, 1.0);
    const int lm = u(rng) < (y ? 0.6 : 0.15) ? 1 : 0;
    rows.push_back({se, lm, y});
  }
  return rows;
}

}  // namespace

TEST(Combine, WorkedExamples) {
  EXPECT_DOUBLE_EQ(combine(0.37, 1, model(0, 0, 0)), 0.5);
  EXPECT_NEAR(combine(0.9, 1, model(4, 2, -3)), 0.9308615796566533, 1e-12);
  EXPECT_NEAR(combine(0.1, 0, model(4, 2, -3)), 0.06913842034334682, 1e-12);
}

TEST(Classify, WorkedExamples) {
  EXPECT_EQ(classify(0.9, 1, model(4, 2, -3)), 1);
  EXPECT_EQ(classify(0.1, 0, model(4, 2, -3)), 0);
  EXPECT_EQ(classify(0.5, 0, model(0, 0, 0)), 0);  // exactly 0.5
}

TEST(Combine, RejectsOutOfRangeFeatures) {
  EXPECT_THROW(combine(1.5, 0, model(1, 1, 0)), ValidationError);
  EXPECT_THROW(combine(0.5, 2, model(1, 1, 0)), ValidationError);
  EXPECT_THROW(combine(std::nan(""), 0, model(1, 1, 0)), ValidationError);
}

TEST(Combine, MonotoneAndOpenUnitInterval) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> w(0.01, 8), b(-8, 8), u(0, 1);
  for (int i = 0; i < 1000; ++i) {
    const auto m = model(w(rng), w(rng), b(rng));
    double a = u(rng), c = u(rng);
    if (a > c) std::swap(a, c);
    if (a == c) continue;
    for (int lm : {0, 1}) {
      const double pa = combine(a, lm, m), pc = combine(c, lm, m);
      ASSERT_LT(pa, pc);
      ASSERT_GT(pa, 0.0);
      ASSERT_LT(pc, 1.0);
    }
    ASSERT_LT(combine(a, 0, m), combine(a, 1, m));
  }
  EXPECT_GT(combine(0, 0, model(0, 0, -700)), 0.0);
  EXPECT_LT(combine(0, 0, model(0, 0, 30)), 1.0);
}

TEST(Classify, EquivalentToLogitComparison) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> w(-6, 6), u(0, 1), t(0.05, 0.95);
  int checked = 0;
  for (int i = 0; i < 2000; ++i) {
    const auto m = model(w(rng), w(rng), w(rng), t(rng));
    const double se = u(rng);
    const int lm = i % 2;
    const double z = linear_score(se, lm, m);
    const double margin = z - logit(m.threshold);
    if (std::abs(margin) < 1e-12) continue;
    ASSERT_EQ(classify(se, lm, m), margin > 0 ? 1 : 0);
    ++checked;
  }
  EXPECT_GT(checked, 1900);
}

TEST(Training, GradientMatchesCentralDifferences) {
  const auto rows = noisy_rows(60, 8);
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> p(-3, 3);
  for (auto weighting : {ClassWeighting::none, ClassWeighting::inverse_frequency}) {
    TrainOptions opt;
    opt.class_weighting = weighting;
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
        ASSERT_LE(rel, 1e-4) << "k=" << k << " analytic=" << g[k] << " fd=" << fd;
      }
    }
  }
}

TEST(Training, SeparableLexicalLabelsFitPerfectly) {
  const auto rows = rows_label_is_lm(200, 21);
  const auto m = train_calibration(rows);
  EXPECT_GT(m.w_lexical, 0.0);
  EXPECT_DOUBLE_EQ(m.training_meta.training_accuracy, 1.0);
  EXPECT_LE(m.training_meta.iterations, 5000u);
  EXPECT_EQ(m.training_meta.sample_count, 200u);
}

TEST(Training, IndependentLabelsStayNearChance) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0, 1);
  std::bernoulli_distribution coin(0.5);
  std::vector<FeatureRow> rows;
  for (int i = 0; i < 500; ++i) rows.push_back({u(rng), coin(rng) ? 1 : 0, coin(rng) ? 1 : 0});
  const auto m = train_calibration(rows);
  EXPECT_GE(m.training_meta.training_accuracy, 0.4);
  EXPECT_LE(m.training_meta.training_accuracy, 0.6);
}

TEST(Training, SingleClassInputIsRejected) {
  std::vector<FeatureRow> rows = {{0.1, 0, 1}, {0.9, 1, 1}};
  try {
    train_calibration(rows);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("single-class input"), std::string::npos);
  }
}

TEST(Training, DuplicatedDatasetGivesSameWeights) {
  const auto rows = noisy_rows(80, 5);
  TrainOptions opt;
  opt.class_weighting = ClassWeighting::none;
  opt.l2 = 0;
  opt.max_iterations = 200000;
  opt.gradient_tolerance = 1e-10;
  opt.learning_rate = 1.0;
  const auto base = train_calibration(rows, opt);
  for (int k : {2, 3, 5}) {
    std::vector<FeatureRow> dup;
    for (int i = 0; i < k; ++i) dup.insert(dup.end(), rows.begin(), rows.end());
    const auto m = train_calibration(dup, opt);
    EXPECT_NEAR(m.w_semantic, base.w_semantic, 1e-6) << k;
    EXPECT_NEAR(m.w_lexical, base.w_lexical, 1e-6) << k;
    EXPECT_NEAR(m.intercept, base.intercept, 1e-6) << k;
  }
}

TEST(Training, LossNonIncreasingAtSmallLearningRate) {
  for (std::uint64_t seed : {1, 2, 3}) {
    TrainOptions opt;
    opt.learning_rate = 0.01;
    opt.max_iterations = 3000;
    std::vector<double> trace;
    train_calibration(noisy_rows(100, seed), opt, &trace);
    ASSERT_GT(trace.size(), 2u);
    for (std::size_t i = 1; i < trace.size(); ++i) ASSERT_LE(trace[i], trace[i - 1] + 1e-15) << i;
  }
}

TEST(Training, NoInterceptModeKeepsInterceptZero) {
  TrainOptions opt;
  opt.use_intercept = false;
  const auto m = train_calibration(noisy_rows(100, 4), opt);
  EXPECT_EQ(m.intercept, 0.0);
  EXPECT_NE(m.w_semantic, 0.0);
}

TEST(Training, InverseFrequencyWeightsRecorded) {
  std::vector<FeatureRow> rows = {{0.9, 1, 1}, {0.2, 0, 0}, {0.1, 0, 0}, {0.3, 0, 0}};
  const auto m = train_calibration(rows);
  EXPECT_DOUBLE_EQ(m.training_meta.weight_positive, 2.0);
  EXPECT_NEAR(m.training_meta.weight_negative, 4.0 / 6.0, 1e-15);
}

TEST(Training, Deterministic) {
  const auto rows = noisy_rows(150, 6);
  EXPECT_EQ(train_calibration(rows), train_calibration(rows));
}

TEST(PredictCorpus, CoverageAndFailures) {
  const Corpus c("c", {testing_support::make_pair("s", "1", "m", "Q", "r", "a"),
                       testing_support::make_pair("s", "2", "m", "Q", "r", "b")});
  const auto& p = c.pairs();
  std::vector<ScoreRecord> se = {{p[0].pair_id, "nli", 0.9, 1, std::nullopt, std::nullopt},
                                 {p[1].pair_id, "nli", 0.1, 0, std::nullopt, std::nullopt}};
  std::vector<ScoreRecord> lm = {{p[0].pair_id, "lex", 1, 1, std::nullopt, std::nullopt},
                                 {p[1].pair_id, "lex", 0, 0, std::nullopt, std::nullopt}};
  const auto out = predict_corpus(c, se, lm, model(4, 2, -3));
  ASSERT_EQ(out.size(), 2u);
  EXPECT_NEAR(out[0].raw_score, 0.9308615796566533, 1e-12);
  EXPECT_EQ(out[0].verdict, 1);
  EXPECT_EQ(out[1].verdict, 0);
  EXPECT_EQ(out[0].scorer_name, "nli+lex");

  auto missing = lm;
  missing.pop_back();
  try {
    predict_corpus(c, se, missing, model(4, 2, -3));
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find(p[1].pair_id), std::string::npos);
  }

  se[1].failure_note = "timeout";
  const auto degraded = predict_corpus(c, se, lm, model(4, 2, -3));
  EXPECT_TRUE(degraded[1].failed());
  EXPECT_FALSE(degraded[0].failed());
}

TEST(ModelFile, RoundTrip) {
  TempDir dir;
  auto m = train_calibration(noisy_rows(50, 3), TrainOptions{.corpus_name = "cal"});
  save_model(m, dir / "m.json");
  EXPECT_EQ(load_model(dir / "m.json"), m);
}

TEST(ModelFile, MissingFieldAndBadVersionRejected) {
  TempDir dir;
  std::ofstream(dir / "a.json") << R"({"version":1,"w_semantic":4,"intercept":-3,"threshold":0.5})";
  EXPECT_THROW(load_model(dir / "a.json"), ValidationError);
  std::ofstream(dir / "b.json") << R"({"version":2,"w_semantic":4,"w_lexical":2,"intercept":-3,"threshold":0.5})";
  EXPECT_THROW(load_model(dir / "b.json"), ValidationError);
  std::ofstream(dir / "c.json") << R"({"version":1,"w_semantic":4,"w_lexical":2,"intercept":-3,"threshold":1.5})";
  EXPECT_THROW(load_model(dir / "c.json"), ValidationError);
}

TEST(ModelFile, HandWrittenFileReproducesWorkedExamples) {
  TempDir dir;
  std::ofstream(dir / "hand.json")
      << R"({"version":1,"w_semantic":4,"w_lexical":2,"intercept":-3,"threshold":0.5,"training_meta":{}})";
  const auto m = load_model(dir / "hand.json");
  EXPECT_NEAR(combine(0.9, 1, m), 0.9308615796566533, 1e-12);
  EXPECT_NEAR(combine(0.1, 0, m), 0.06913842034334682, 1e-12);
}
