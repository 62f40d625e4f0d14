#include "mvtta/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "mvtta/errors.hpp"

namespace mvtta::metrics {

namespace {

void check_lengths(std::size_t a, std::size_t b) {
  if (a == 0) {
    throw InputError("metrics: empty input");
  }
  if (a != b) {
    throw InputError("metrics: predictions and labels differ in length");
  }
}

// One-vs-rest AUC for a single class from scores and binary positivity,
// via the Mann-Whitney U statistic with average ranks for score ties.
double rank_auc(const std::vector<double>& scores,
                const std::vector<bool>& positive) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });

  std::size_t n_pos = 0;
  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      ++j;
    }
    // Items i..j-1 share a score; each gets the average of ranks i+1..j.
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (positive[order[k]]) {
        ++n_pos;
        pos_rank_sum += avg_rank;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  const double u = pos_rank_sum -
                   static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

}  // namespace

double accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
  check_lengths(preds.size(), labels.size());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] == labels[i]) {
      ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

double macro_f1(const std::vector<int>& preds, const std::vector<int>& labels,
                int classes) {
  check_lengths(preds.size(), labels.size());
  if (classes < 1) {
    throw InputError("macro_f1: class count must be >= 1");
  }
  double sum = 0.0;
  for (int c = 0; c < classes; ++c) {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const bool pred_c = preds[i] == c;
      const bool label_c = labels[i] == c;
      tp += pred_c && label_c;
      fp += pred_c && !label_c;
      fn += !pred_c && label_c;
    }
    const std::size_t denom = 2 * tp + fp + fn;
    sum += denom == 0 ? 0.0
                      : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  }
  return sum / static_cast<double>(classes);
}

double macro_auc(const std::vector<Vec>& probs, const std::vector<int>& labels,
                 int classes) {
  check_lengths(probs.size(), labels.size());
  if (classes < 1) {
    throw InputError("macro_auc: class count must be >= 1");
  }
  for (const Vec& p : probs) {
    if (p.size() != static_cast<std::size_t>(classes)) {
      throw InputError("macro_auc: score vector has wrong class count");
    }
    if (!all_finite(p)) {
      throw InputError("macro_auc: non-finite scores");
    }
  }
  double sum = 0.0;
  int scored = 0;
  std::vector<double> scores(probs.size());
  std::vector<bool> positive(probs.size());
  for (int c = 0; c < classes; ++c) {
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      scores[i] = probs[i][static_cast<std::size_t>(c)];
      positive[i] = labels[i] == c;
      n_pos += positive[i];
    }
    if (n_pos == 0 || n_pos == probs.size()) {
      continue;  // no positives or no negatives: this class is not scorable
    }
    sum += rank_auc(scores, positive);
    ++scored;
  }
  if (scored == 0) {
    throw MetricError("macro_auc: no class has both positives and negatives");
  }
  return sum / scored;
}

MetricsReport compute(const std::string& granularity,
                      const std::vector<int>& preds,
                      const std::vector<Vec>& probs,
                      const std::vector<int>& labels, int classes) {
  MetricsReport report;
  report.granularity = granularity;
  report.n = preds.size();
  report.acc = accuracy(preds, labels);
  report.macro_f1 = macro_f1(preds, labels, classes);
  report.macro_auc = macro_auc(probs, labels, classes);
  return report;
}

json to_json(const MetricsReport& report) {
  return json{{"granularity", report.granularity},
              {"n", report.n},
              {"acc", report.acc},
              {"macro_f1", report.macro_f1},
              {"macro_auc", report.macro_auc}};
}

std::string format_table(const std::vector<MetricsReport>& reports) {
  std::ostringstream out;
  std::vector<std::size_t> widths;
  widths.reserve(reports.size());
  for (const MetricsReport& r : reports) {
    widths.push_back(std::max<std::size_t>(r.granularity.size(), 6));
  }
  out << "metric";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    out << "  "
        << std::string(widths[i] - reports[i].granularity.size(), ' ')
        << reports[i].granularity;
  }
  out << "\n";
  const auto row = [&](const char* name, double MetricsReport::*field) {
    out << name;
    char buf[32];
    for (std::size_t i = 0; i < reports.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.4f", reports[i].*field);
      const std::string cell(buf);
      out << "  "
          << std::string(widths[i] > cell.size() ? widths[i] - cell.size() : 0,
                         ' ')
          << cell;
    }
    out << "\n";
  };
  row("AUC   ", &MetricsReport::macro_auc);
  row("ACC   ", &MetricsReport::acc);
  row("F1    ", &MetricsReport::macro_f1);
  return out.str();
}

}  // namespace mvtta::metrics
