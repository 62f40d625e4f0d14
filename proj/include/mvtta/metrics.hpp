#pragma once

#include <string>
#include <vector>

#include "mvtta/jsonio.hpp"
#include "mvtta/vecmath.hpp"

namespace mvtta::metrics {

struct MetricsReport {
  std::string granularity;  // "per_image" or "per_patient"
  std::size_t n = 0;
  double acc = 0.0;
  double macro_f1 = 0.0;
  double macro_auc = 0.0;
};

double accuracy(const std::vector<int>& preds, const std::vector<int>& labels);

// Unweighted mean of per-class F1 over all `classes` classes; a class with
// no predictions and no labels contributes 0.
double macro_f1(const std::vector<int>& preds, const std::vector<int>& labels,
                int classes);

// Macro one-vs-rest ROC AUC computed by rank statistic with 0.5 credit for
// ties, averaged over classes with at least one positive and one negative.
// All classes degenerate -> MetricError.
double macro_auc(const std::vector<Vec>& probs, const std::vector<int>& labels,
                 int classes);

MetricsReport compute(const std::string& granularity,
                      const std::vector<int>& preds,
                      const std::vector<Vec>& probs,
                      const std::vector<int>& labels, int classes);

json to_json(const MetricsReport& report);

// Aligned plain-text table, one column per report: rows AUC / ACC / F1.
std::string format_table(const std::vector<MetricsReport>& reports);

}  // namespace mvtta::metrics
