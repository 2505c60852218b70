#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sloclas/coding.hpp"
#include "sloclas/error.hpp"
#include "sloclas/slcnet.hpp"

namespace sloclas {

namespace detail {

template <typename A, typename B>
void require_same_nonempty(std::span<const A> a, std::span<const B> b) {
  if (a.size() != b.size())
    throw Error(Errc::validation, "length mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  if (a.empty()) throw Error(Errc::validation, "empty inputs");
}

}  // namespace detail

/// Mean circular angular error in degrees.
inline double mae(std::span<const int> truths, std::span<const int> estimates) {
  detail::require_same_nonempty(truths, estimates);
  double acc = 0.0;
  for (std::size_t i = 0; i < truths.size(); ++i) acc += circular_distance_deg(truths[i], estimates[i]);
  return acc / static_cast<double>(truths.size());
}

/// Percentage of estimates whose circular error is at most eta degrees.
inline double acc_theta(std::span<const int> truths, std::span<const int> estimates, double eta_deg) {
  detail::require_same_nonempty(truths, estimates);
  if (!(eta_deg >= 0.0)) throw Error(Errc::validation, "eta must be non-negative");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truths.size(); ++i)
    if (circular_distance_deg(truths[i], estimates[i]) <= eta_deg) ++hits;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(truths.size());
}

/// Rows are true classes, columns predicted classes.
using ConfusionMatrix = std::vector<std::vector<long long>>;

/// Exact-match percentage. When `confusion` is given it is resized to
/// num_classes x num_classes (num_classes inferred if 0) and filled.
inline double acc_event(std::span<const int> true_classes, std::span<const int> predicted,
                        ConfusionMatrix* confusion = nullptr, int num_classes = 0) {
  detail::require_same_nonempty(true_classes, predicted);
  if (confusion) {
    if (num_classes <= 0) {
      for (std::size_t i = 0; i < true_classes.size(); ++i)
        num_classes = std::max({num_classes, true_classes[i] + 1, predicted[i] + 1});
    }
    confusion->assign(static_cast<std::size_t>(num_classes), std::vector<long long>(static_cast<std::size_t>(num_classes), 0));
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < true_classes.size(); ++i) {
    if (true_classes[i] == predicted[i]) ++hits;
    if (confusion) {
      if (true_classes[i] < 0 || true_classes[i] >= num_classes || predicted[i] < 0 || predicted[i] >= num_classes)
        throw Error(Errc::validation, "class id outside the confusion matrix");
      ++(*confusion)[static_cast<std::size_t>(true_classes[i])][static_cast<std::size_t>(predicted[i])];
    }
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(true_classes.size());
}

struct EvalReport {
  double mae_deg = 0.0;
  double acc_theta_pct = 0.0;
  double acc_event_pct = 0.0;
  double eta_deg = 5.0;
  std::map<std::string, double> per_class;  // class name -> accuracy (%)
  ConfusionMatrix confusion;
  long long num_samples = 0;

  bool operator==(const EvalReport&) const = default;
};

inline nlohmann::json to_json(const EvalReport& r) {
  return nlohmann::json{{"mae_deg", r.mae_deg},         {"acc_theta_pct", r.acc_theta_pct},
                        {"acc_event_pct", r.acc_event_pct}, {"eta_deg", r.eta_deg},
                        {"confusion", r.confusion},      {"per_class", r.per_class},
                        {"num_samples", r.num_samples}};
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  try {
    EvalReport r;
    r.mae_deg = j.at("mae_deg").get<double>();
    r.acc_theta_pct = j.at("acc_theta_pct").get<double>();
    r.acc_event_pct = j.at("acc_event_pct").get<double>();
    r.eta_deg = j.at("eta_deg").get<double>();
    r.confusion = j.at("confusion").get<ConfusionMatrix>();
    r.per_class = j.at("per_class").get<std::map<std::string, double>>();
    r.num_samples = j.at("num_samples").get<long long>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::format, std::string("report JSON: ") + e.what());
  }
}

/// Plain-text table with one row per metric.
inline std::string to_text(const EvalReport& r, bool event_applicable = true) {
  char buf[160];
  std::string out;
  std::snprintf(buf, sizeof buf, "%-16s %12s\n", "metric", "value");
  out += buf;
  std::snprintf(buf, sizeof buf, "%-16s %11.2f%s\n", "MAE (deg)", r.mae_deg, " ");
  out += buf;
  std::snprintf(buf, sizeof buf, "%-16s %11.2f%%\n", "ACC_theta (%)", r.acc_theta_pct);
  out += buf;
  if (event_applicable)
    std::snprintf(buf, sizeof buf, "%-16s %11.2f%%\n", "ACC_e (%)", r.acc_event_pct);
  else
    std::snprintf(buf, sizeof buf, "%-16s %12s\n", "ACC_e (%)", "NA");
  out += buf;
  std::snprintf(buf, sizeof buf, "%-16s %12.1f\n%-16s %12lld\n", "eta (deg)", r.eta_deg, "samples", r.num_samples);
  out += buf;
  return out;
}

struct SamplePrediction {
  int doa_deg = 1;
  int class_id = 0;
  std::vector<double> class_probs;
};

inline SamplePrediction predict(const SlcModel& model, const FeatureMatrix& segments) {
  const Prediction p = forward(model, segments, Mode::infer);
  SamplePrediction out;
  out.doa_deg = decode_doa(p.doa_posterior);
  out.class_id = static_cast<int>(std::max_element(p.class_probs.begin(), p.class_probs.end()) - p.class_probs.begin());
  out.class_probs = p.class_probs;
  return out;
}

/// Builds a report from ground truth and decoded predictions, one entry per sample.
inline EvalReport make_report(std::span<const int> true_doa, std::span<const int> est_doa,
                              std::span<const int> true_class, std::span<const int> est_class, double eta_deg,
                              std::span<const std::string> class_names) {
  EvalReport r;
  r.eta_deg = eta_deg;
  r.num_samples = static_cast<long long>(true_doa.size());
  r.mae_deg = mae(true_doa, est_doa);
  r.acc_theta_pct = acc_theta(true_doa, est_doa, eta_deg);
  r.acc_event_pct = acc_event(true_class, est_class, &r.confusion, static_cast<int>(class_names.size()));
  for (std::size_t c = 0; c < r.confusion.size(); ++c) {
    long long total = 0;
    for (long long v : r.confusion[c]) total += v;
    if (total > 0) r.per_class[class_names[c]] = 100.0 * static_cast<double>(r.confusion[c][c]) / static_cast<double>(total);
  }
  return r;
}

/// Runs the model on every example (one prediction per sample) and scores it.
inline EvalReport evaluate(const SlcModel& model, std::span<const TrainingExample* const> examples, double eta_deg,
                           std::span<const std::string> class_names) {
  if (examples.empty()) throw Error(Errc::validation, "nothing to evaluate");
  if (class_names.size() != static_cast<std::size_t>(model.shape.num_classes))
    throw Error(Errc::shape, "model has " + std::to_string(model.shape.num_classes) + " classes, " +
                                 std::to_string(class_names.size()) + " names given");
  std::vector<int> td, ed, tc, ec;
  for (const TrainingExample* ex : examples) {
    const SamplePrediction p = predict(model, ex->segments);
    td.push_back(ex->doa_deg);
    ed.push_back(p.doa_deg);
    tc.push_back(ex->class_id);
    ec.push_back(p.class_id);
  }
  return make_report(td, ed, tc, ec, eta_deg, class_names);
}

}  // namespace sloclas
