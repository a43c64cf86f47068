#pragma once

#include "gmetro/evaluation.hpp"

#include <span>
#include <string>
#include <vector>

namespace gmetro {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1)
};

MeanStd mean_std(std::span<const double> xs);

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p_value = 1.0;  // two-sided
  bool degenerate = false;  // both samples have zero variance
};

/// Unequal-variance two-sample t-test. With zero pooled standard error the
/// test is degenerate: p = 1 for equal means, 0 otherwise.
WelchResult welch_t_test(std::span<const double> a, std::span<const double> b);

struct SummaryRow {
  std::string environment;  // environment name, or an aggregate label
  int env_id = -1;          // -1 for aggregates
  MeanStd method;
  MeanStd baseline;
  WelchResult test;
  int seeds = 0;
};

inline constexpr const char* kShiftedMeanLabel = "mean (shifted)";
inline constexpr const char* kAllMeanLabel = "mean (all)";

/// Per-environment and aggregate mean/std over seeds with a Welch p-value
/// against the baseline. Aggregates average environments within each seed
/// first; "shifted" skips environment 0. Throws with fewer than two seeds.
std::vector<SummaryRow> summarize_trials(const std::vector<EnvResult>& method,
                                         const std::vector<EnvResult>& baseline);

}  // namespace gmetro
