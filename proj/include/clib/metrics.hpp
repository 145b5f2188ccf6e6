// Any-time accuracy area (A_AUC), end-of-task average (A_avg) and class-wise
// forgetting (F_last).
#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <vector>

#include <json.hpp>

namespace clib {

/// Accuracies f(i * delta_n) for i = 1..k.
struct AccuracyCurve {
  std::size_t delta_n = 100;
  std::vector<double> points;
  friend bool operator==(const AccuracyCurve&, const AccuracyCurve&) = default;
};

/// sum_i f(i * delta_n) * delta_n, in samples x accuracy.
inline double a_auc_raw(const AccuracyCurve& curve) {
  if (curve.points.empty()) throw std::invalid_argument("a_auc: empty curve");
  double s = 0.0;
  for (double p : curve.points) s += p * static_cast<double>(curve.delta_n);
  return s;
}

/// Raw area normalized by k * delta_n, i.e. the mean accuracy along the curve.
inline double a_auc(const AccuracyCurve& curve) {
  return a_auc_raw(curve) / (static_cast<double>(curve.points.size()) * static_cast<double>(curve.delta_n));
}

inline double a_avg(const std::vector<double>& task_accuracies) {
  if (task_accuracies.empty()) throw std::invalid_argument("a_avg: no task accuracies");
  double s = 0.0;
  for (double a : task_accuracies) s += a;
  return s / static_cast<double>(task_accuracies.size());
}

/// Per class, accuracy at every evaluation point since the class first appeared.
using ClassAccHistory = std::map<int, std::vector<double>>;

/// Mean over classes of (best accuracy - last accuracy).
inline double f_last(const ClassAccHistory& history) {
  if (history.empty()) throw std::invalid_argument("f_last: empty history");
  double s = 0.0;
  for (const auto& [cls, accs] : history) {
    if (accs.empty()) throw std::invalid_argument("f_last: class without measurements");
    s += *std::max_element(accs.begin(), accs.end()) - accs.back();
  }
  return s / static_cast<double>(history.size());
}

struct MetricReport {
  double a_auc = 0.0;
  double a_auc_raw = 0.0;
  double a_avg = 0.0;
  double f_last = 0.0;
  std::size_t delta_n = 0;
  friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

inline MetricReport compute_metrics(const AccuracyCurve& curve, const std::vector<double>& task_accuracies,
                                    const ClassAccHistory& history) {
  return {a_auc(curve), a_auc_raw(curve), a_avg(task_accuracies), f_last(history), curve.delta_n};
}

inline nlohmann::json to_json(const MetricReport& m) {
  return {{"a_auc", m.a_auc}, {"a_auc_raw", m.a_auc_raw}, {"a_avg", m.a_avg}, {"f_last", m.f_last},
          {"delta_n", m.delta_n}};
}

inline MetricReport metrics_from_json(const nlohmann::json& j) {
  return {j.at("a_auc").get<double>(), j.at("a_auc_raw").get<double>(), j.at("a_avg").get<double>(),
          j.at("f_last").get<double>(), j.at("delta_n").get<std::size_t>()};
}

}  // namespace clib
