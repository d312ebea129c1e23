#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "vflab/common.hpp"

namespace vflab::metrics {

struct ClassScores {
  double precision = 0.0;  // percent
  double recall = 0.0;
  double f1 = 0.0;
  std::int64_t support = 0;
  /// Never true and never predicted: F1 is 0 by convention.
  bool degenerate = false;
};

struct Metrics {
  double accuracy = 0.0;  // percent
  double macro_f1 = 0.0;
  double weighted_f1 = 0.0;
  std::vector<ClassScores> per_class;
  std::vector<std::vector<std::int64_t>> confusion;  // [true][predicted]

  nlohmann::json to_json() const;
  static Metrics from_json(const nlohmann::json& j);
};

/// Labels are 0-based class ids in [0, num_classes).
Metrics compute_metrics(std::span<const int> y_true, std::span<const int> y_pred, int num_classes = kNumClasses);
/// Recomputes accuracy and F1 scores from a confusion matrix alone.
Metrics from_confusion(const std::vector<std::vector<std::int64_t>>& confusion);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population (ddof = 0)
};

MeanStd mean_std(std::span<const double> values);
nlohmann::json to_json(const MeanStd& m);

}  // namespace vflab::metrics
