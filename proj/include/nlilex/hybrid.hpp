#pragma once

// NLI+lex: a logistic model over the entailment probability and the
// lexical-match flag, with a small full-batch gradient-descent trainer.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nlilex/dataset.hpp"
#include "nlilex/detail/io.hpp"
#include "nlilex/error.hpp"
#include "nlilex/scorers.hpp"

namespace nlilex {

inline constexpr const char* kHybridScorerName = "nli+lex";
inline constexpr int kModelFileVersion = 1;

enum class ClassWeighting { none, inverse_frequency };

struct TrainingMeta {
  std::string corpus_name;
  std::size_t sample_count = 0;
  ClassWeighting class_weighting = ClassWeighting::inverse_frequency;
  double weight_negative = 1.0;
  double weight_positive = 1.0;
  std::size_t iterations = 0;
  std::string stop_reason;  // "gradient_tolerance" or "max_iterations"
  double final_loss = 0.0;
  double gradient_max_norm = 0.0;
  double training_accuracy = 0.0;

  friend bool operator==(const TrainingMeta&, const TrainingMeta&) = default;
};

struct CalibrationModel {
  double w_semantic = 0.0;
  double w_lexical = 0.0;
  double intercept = 0.0;
  double threshold = 0.5;
  TrainingMeta training_meta;

  void validate() const {
    if (!(threshold > 0.0 && threshold < 1.0))
      throw ValidationError("calibration threshold must lie in (0,1)");
    if (!std::isfinite(w_semantic) || !std::isfinite(w_lexical) || !std::isfinite(intercept))
      throw ValidationError("calibration weights must be finite");
  }

  friend bool operator==(const CalibrationModel&, const CalibrationModel&) = default;
};

struct FeatureRow {
  double se = 0.0;
  int lm = 0;
  int label = 0;  // ignored at prediction time
};

inline void check_features(double se, int lm) {
  if (!std::isfinite(se)) throw ValidationError("non-finite semantic score");
  if (se < 0.0 || se > 1.0) throw ValidationError("semantic score outside [0,1]");
  if (lm != 0 && lm != 1) throw ValidationError("lexical match must be 0 or 1");
}

inline double sigmoid(double z) {
  // Branches keep exp() from overflowing on large |z|.
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline double linear_score(double se, int lm, const CalibrationModel& m) {
  return m.w_semantic * se + m.w_lexical * lm + m.intercept;
}

// Probability of correctness.
inline double combine(double se, int lm, const CalibrationModel& model) {
  check_features(se, lm);
  return sigmoid(linear_score(se, lm, model));
}

inline int classify(double se, int lm, const CalibrationModel& model) {
  return binarize(combine(se, lm, model), model.threshold);
}

inline int classify(const FeatureRow& row, const CalibrationModel& model) {
  return classify(row.se, row.lm, model);
}

// --- training ---------------------------------------------------------------

struct TrainOptions {
  bool use_intercept = true;
  ClassWeighting class_weighting = ClassWeighting::inverse_frequency;
  double l2 = 0.0;
  double learning_rate = 0.1;
  std::size_t max_iterations = 5000;
  double gradient_tolerance = 1e-8;
  std::string corpus_name;
};

// Parameters in the order (w_semantic, w_lexical, intercept).
using CalibrationParams = std::array<double, 3>;

namespace detail {

struct ClassWeights {
  double negative = 1.0;
  double positive = 1.0;
};

inline ClassWeights class_weights(const std::vector<FeatureRow>& rows, ClassWeighting mode) {
  if (mode == ClassWeighting::none) return {};
  const auto pos = static_cast<double>(
      std::count_if(rows.begin(), rows.end(), [](const FeatureRow& r) { return r.label == 1; }));
  const auto n = static_cast<double>(rows.size());
  const double neg = n - pos;
  return {n / (2.0 * neg), n / (2.0 * pos)};
}

}  // namespace detail

// Weighted mean log-loss plus (l2/2)·(w_semantic² + w_lexical²). The
// intercept is never penalized.
inline double calibration_loss(const std::vector<FeatureRow>& rows, const CalibrationParams& theta,
                               const TrainOptions& opt) {
  const auto cw = detail::class_weights(rows, opt.class_weighting);
  double total = 0.0, weight_sum = 0.0;
  for (const auto& r : rows) {
    const double z = theta[0] * r.se + theta[1] * r.lm + (opt.use_intercept ? theta[2] : 0.0);
    const double c = r.label == 1 ? cw.positive : cw.negative;
    // log(1 + e^z) - y·z, written to stay finite for large |z|.
    const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    total += c * (softplus - r.label * z);
    weight_sum += c;
  }
  return total / weight_sum + 0.5 * opt.l2 * (theta[0] * theta[0] + theta[1] * theta[1]);
}

inline CalibrationParams calibration_gradient(const std::vector<FeatureRow>& rows,
                                              const CalibrationParams& theta,
                                              const TrainOptions& opt) {
  const auto cw = detail::class_weights(rows, opt.class_weighting);
  CalibrationParams g{0.0, 0.0, 0.0};
  double weight_sum = 0.0;
  for (const auto& r : rows) {
    const double z = theta[0] * r.se + theta[1] * r.lm + (opt.use_intercept ? theta[2] : 0.0);
    const double c = r.label == 1 ? cw.positive : cw.negative;
    const double residual = c * (sigmoid(z) - r.label);
    g[0] += residual * r.se;
    g[1] += residual * r.lm;
    if (opt.use_intercept) g[2] += residual;
    weight_sum += c;
  }
  for (auto& v : g) v /= weight_sum;
  g[0] += opt.l2 * theta[0];
  g[1] += opt.l2 * theta[1];
  return g;
}

// Full-batch gradient descent from zero. Deterministic for fixed input.
// `loss_trace`, when given, receives the loss before every step and at the end.
inline CalibrationModel train_calibration(const std::vector<FeatureRow>& rows,
                                          const TrainOptions& opt = {},
                                          std::vector<double>* loss_trace = nullptr) {
  if (rows.size() < 2) throw ValidationError("calibration needs at least two rows");
  bool has_pos = false, has_neg = false;
  for (const auto& r : rows) {
    check_features(r.se, r.lm);
    if (r.label != 0 && r.label != 1) throw ValidationError("calibration label must be 0 or 1");
    (r.label == 1 ? has_pos : has_neg) = true;
  }
  if (!has_pos || !has_neg) throw ValidationError("single-class input");
  if (opt.l2 < 0.0) throw ValidationError("l2 penalty must be nonnegative");
  if (!(opt.learning_rate > 0.0)) throw ValidationError("learning rate must be positive");

  CalibrationParams theta{0.0, 0.0, 0.0};
  std::size_t iter = 0;
  std::string stop = "max_iterations";
  double gmax = 0.0;
  for (; iter < opt.max_iterations; ++iter) {
    if (loss_trace) loss_trace->push_back(calibration_loss(rows, theta, opt));
    const auto g = calibration_gradient(rows, theta, opt);
    gmax = std::max({std::abs(g[0]), std::abs(g[1]), std::abs(g[2])});
    if (gmax < opt.gradient_tolerance) {
      stop = "gradient_tolerance";
      break;
    }
    for (std::size_t k = 0; k < theta.size(); ++k) theta[k] -= opt.learning_rate * g[k];
  }
  if (stop == "max_iterations") {
    const auto g = calibration_gradient(rows, theta, opt);
    gmax = std::max({std::abs(g[0]), std::abs(g[1]), std::abs(g[2])});
  }

  CalibrationModel model;
  model.w_semantic = theta[0];
  model.w_lexical = theta[1];
  model.intercept = opt.use_intercept ? theta[2] : 0.0;
  model.validate();

  const auto cw = detail::class_weights(rows, opt.class_weighting);
  std::size_t correct = 0;
  for (const auto& r : rows) correct += classify(r, model) == r.label ? 1 : 0;
  auto& meta = model.training_meta;
  meta.corpus_name = opt.corpus_name;
  meta.sample_count = rows.size();
  meta.class_weighting = opt.class_weighting;
  meta.weight_negative = cw.negative;
  meta.weight_positive = cw.positive;
  meta.iterations = iter;
  meta.stop_reason = stop;
  meta.final_loss = calibration_loss(rows, theta, opt);
  meta.gradient_max_norm = gmax;
  meta.training_accuracy = static_cast<double>(correct) / static_cast<double>(rows.size());
  if (loss_trace) loss_trace->push_back(meta.final_loss);
  return model;
}

// --- prediction over a corpus -----------------------------------------------

inline std::vector<ScoreRecord> predict_corpus(const Corpus& corpus,
                                               const std::vector<ScoreRecord>& se_records,
                                               const std::vector<ScoreRecord>& lm_records,
                                               const CalibrationModel& model,
                                               const std::string& scorer_name = kHybridScorerName) {
  model.validate();
  std::map<std::string, const ScoreRecord*> se, lm;
  for (const auto& r : se_records) se[r.pair_id] = &r;
  for (const auto& r : lm_records) lm[r.pair_id] = &r;
  std::vector<ScoreRecord> out;
  out.reserve(corpus.size());
  for (const QAPair& p : corpus) {
    auto s = se.find(p.pair_id);
    auto l = lm.find(p.pair_id);
    if (s == se.end()) throw ValidationError("coverage gap: no semantic score for '" + p.pair_id + "'");
    if (l == lm.end()) throw ValidationError("coverage gap: no lexical match for '" + p.pair_id + "'");
    ScoreRecord rec{p.pair_id, scorer_name, 0.0, 0, std::nullopt, std::nullopt};
    if (s->second->failed()) {
      rec.failure_note = "semantic score failed: " + *s->second->failure_note;
    } else if (l->second->failed()) {
      rec.failure_note = "lexical match failed: " + *l->second->failure_note;
    } else {
      const int lm_flag = l->second->raw_score > 0.5 ? 1 : 0;
      rec.raw_score = combine(s->second->raw_score, lm_flag, model);
      rec.verdict = binarize(rec.raw_score, model.threshold);
      rec.latency_ms = s->second->latency_ms;
    }
    out.push_back(std::move(rec));
  }
  return out;
}

// --- model files ------------------------------------------------------------

inline std::string to_string(ClassWeighting w) {
  return w == ClassWeighting::none ? "none" : "inverse_frequency";
}

inline ClassWeighting parse_class_weighting(const std::string& s) {
  if (s == "none") return ClassWeighting::none;
  if (s == "inverse_frequency") return ClassWeighting::inverse_frequency;
  throw ValidationError("unknown class weighting '" + s + "'");
}

inline nlohmann::ordered_json to_json(const CalibrationModel& m) {
  nlohmann::ordered_json meta;
  const auto& t = m.training_meta;
  meta["corpus_name"] = t.corpus_name;
  meta["sample_count"] = t.sample_count;
  meta["class_weighting"] = to_string(t.class_weighting);
  meta["weight_negative"] = t.weight_negative;
  meta["weight_positive"] = t.weight_positive;
  meta["iterations"] = t.iterations;
  meta["stop_reason"] = t.stop_reason;
  meta["final_loss"] = t.final_loss;
  meta["gradient_max_norm"] = t.gradient_max_norm;
  meta["training_accuracy"] = t.training_accuracy;

  nlohmann::ordered_json j;
  j["version"] = kModelFileVersion;
  j["w_semantic"] = m.w_semantic;
  j["w_lexical"] = m.w_lexical;
  j["intercept"] = m.intercept;
  j["threshold"] = m.threshold;
  j["training_meta"] = meta;
  return j;
}

inline CalibrationModel model_from_json(const nlohmann::json& j) {
  CalibrationModel m;
  try {
    if (!j.contains("version")) throw ValidationError("model file has no version");
    if (j.at("version").get<int>() != kModelFileVersion) {
      throw ValidationError("model file version " + j.at("version").dump() +
                            " is not supported (expected " + std::to_string(kModelFileVersion) + ")");
    }
    m.w_semantic = j.at("w_semantic").get<double>();
    m.w_lexical = j.at("w_lexical").get<double>();
    m.intercept = j.at("intercept").get<double>();
    m.threshold = j.at("threshold").get<double>();
    if (j.contains("training_meta")) {
      const auto& meta = j.at("training_meta");
      auto& t = m.training_meta;
      t.corpus_name = meta.value("corpus_name", "");
      t.sample_count = meta.value("sample_count", std::size_t{0});
      t.class_weighting = parse_class_weighting(meta.value("class_weighting", "inverse_frequency"));
      t.weight_negative = meta.value("weight_negative", 1.0);
      t.weight_positive = meta.value("weight_positive", 1.0);
      t.iterations = meta.value("iterations", std::size_t{0});
      t.stop_reason = meta.value("stop_reason", "");
      t.final_loss = meta.value("final_loss", 0.0);
      t.gradient_max_norm = meta.value("gradient_max_norm", 0.0);
      t.training_accuracy = meta.value("training_accuracy", 0.0);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed model file: ") + e.what());
  }
  m.validate();
  return m;
}

inline void save_model(const CalibrationModel& model, const std::filesystem::path& path) {
  detail::write_file(path, to_json(model).dump(2) + "\n");
}

inline CalibrationModel load_model(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path.string() + ": malformed model file: " + e.what());
  }
  try {
    return model_from_json(j);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

}  // namespace nlilex
