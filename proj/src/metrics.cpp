#include "vflab/metrics.hpp"

#include <fmt/format.h>

#include <cmath>

namespace vflab::metrics {

Metrics from_confusion(const std::vector<std::vector<std::int64_t>>& confusion) {
  const auto k = confusion.size();
  Metrics m;
  m.confusion = confusion;
  m.per_class.resize(k);
  std::int64_t total = 0, correct = 0;
  std::vector<std::int64_t> predicted(k, 0);
  for (std::size_t t = 0; t < k; ++t) {
    if (confusion[t].size() != k) throw ConfigError("confusion matrix is not square");
    for (std::size_t p = 0; p < k; ++p) {
      total += confusion[t][p];
      predicted[p] += confusion[t][p];
    }
    correct += confusion[t][t];
  }
  double f1_sum = 0.0, weighted = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    auto& s = m.per_class[c];
    const auto tp = static_cast<double>(confusion[c][c]);
    for (auto v : confusion[c]) s.support += v;
    s.degenerate = s.support == 0 && predicted[c] == 0;
    const double p = predicted[c] > 0 ? tp / static_cast<double>(predicted[c]) : 0.0;
    const double r = s.support > 0 ? tp / static_cast<double>(s.support) : 0.0;
    const double f = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    s.precision = 100 * p;
    s.recall = 100 * r;
    s.f1 = 100 * f;
    f1_sum += s.f1;
    weighted += s.f1 * static_cast<double>(s.support);
  }
  m.accuracy = total > 0 ? 100.0 * static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  m.macro_f1 = k > 0 ? f1_sum / static_cast<double>(k) : 0.0;
  m.weighted_f1 = total > 0 ? weighted / static_cast<double>(total) : 0.0;
  return m;
}

Metrics compute_metrics(std::span<const int> y_true, std::span<const int> y_pred, int num_classes) {
  if (y_true.size() != y_pred.size())
    throw ConfigError(fmt::format("{} true labels but {} predictions", y_true.size(), y_pred.size()));
  std::vector<std::vector<std::int64_t>> cm(static_cast<std::size_t>(num_classes),
                                            std::vector<std::int64_t>(static_cast<std::size_t>(num_classes), 0));
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] < 0 || y_true[i] >= num_classes || y_pred[i] < 0 || y_pred[i] >= num_classes)
      throw ConfigError(fmt::format("label outside [0, {}) at position {}", num_classes, i));
    ++cm[static_cast<std::size_t>(y_true[i])][static_cast<std::size_t>(y_pred[i])];
  }
  return from_confusion(cm);
}

nlohmann::json Metrics::to_json() const {
  nlohmann::json pc = nlohmann::json::array();
  for (const auto& s : per_class)
    pc.push_back({{"precision", s.precision},
                  {"recall", s.recall},
                  {"f1", s.f1},
                  {"support", s.support},
                  {"degenerate", s.degenerate}});
  return {{"accuracy", accuracy}, {"macro_f1", macro_f1}, {"weighted_f1", weighted_f1},
          {"per_class", pc},      {"confusion", confusion}};
}

Metrics Metrics::from_json(const nlohmann::json& j) {
  Metrics m = from_confusion(j.at("confusion").get<std::vector<std::vector<std::int64_t>>>());
  m.accuracy = j.at("accuracy").get<double>();
  m.macro_f1 = j.at("macro_f1").get<double>();
  m.weighted_f1 = j.value("weighted_f1", m.weighted_f1);
  return m;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  if (values.empty()) return out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(ss / static_cast<double>(values.size()));
  return out;
}

nlohmann::json to_json(const MeanStd& m) { return {{"mean", m.mean}, {"std", m.std}}; }

}  // namespace vflab::metrics
