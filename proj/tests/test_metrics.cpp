#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <doctest.h>

#include "helpers.hpp"
#include "mvtta/errors.hpp"
#include "mvtta/metrics.hpp"
#include "mvtta/rng.hpp"
#include "mvtta/vecmath.hpp"

using mvtta::Rng;
using mvtta::Vec;
namespace metrics = mvtta::metrics;

namespace {

// Threshold-sweep ROC with trapezoid integration, as an independent check on
// the rank-statistic implementation. Equal scores move diagonally in one
// step, which the trapezoid rule credits exactly like average ranks.
double trapezoid_auc(const std::vector<double>& scores,
                     const std::vector<bool>& positive) {
  std::vector<double> distinct = scores;
  std::sort(distinct.begin(), distinct.end(),
            [](double a, double b) { return a > b; });
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  double n_pos = 0.0;
  double n_neg = 0.0;
  for (bool p : positive) {
    (p ? n_pos : n_neg) += 1.0;
  }

  double tp = 0.0;
  double fp = 0.0;
  double prev_tpr = 0.0;
  double prev_fpr = 0.0;
  double area = 0.0;
  for (double threshold : distinct) {
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] == threshold) {
        (positive[i] ? tp : fp) += 1.0;
      }
    }
    const double tpr = tp / n_pos;
    const double fpr = fp / n_neg;
    area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
    prev_tpr = tpr;
    prev_fpr = fpr;
  }
  return area;
}

double trapezoid_macro_auc(const std::vector<Vec>& probs,
                           const std::vector<int>& labels, int classes) {
  double sum = 0.0;
  int scored = 0;
  for (int c = 0; c < classes; ++c) {
    std::vector<double> scores;
    std::vector<bool> positive;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      scores.push_back(probs[i][static_cast<std::size_t>(c)]);
      positive.push_back(labels[i] == c);
      n_pos += positive.back();
    }
    if (n_pos == 0 || n_pos == probs.size()) {
      continue;
    }
    sum += trapezoid_auc(scores, positive);
    ++scored;
  }
  return sum / scored;
}

}  // namespace

TEST_CASE("accuracy counts exact matches") {
  CHECK(metrics::accuracy({0, 1, 2}, {0, 1, 1}) ==
        doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(metrics::accuracy({1, 1}, {1, 1}) == 1.0);
  CHECK(metrics::accuracy({0}, {1}) == 0.0);
  CHECK_THROWS_AS((void)metrics::accuracy({}, {}), mvtta::InputError);
  CHECK_THROWS_AS((void)metrics::accuracy({0, 1}, {0}), mvtta::InputError);
}

TEST_CASE("macro F1 averages per-class scores over all classes") {
  CHECK(metrics::macro_f1({0, 1, 2}, {0, 1, 2}, 3) == 1.0);

  // Class 0: tp=1 fp=1 fn=0 -> 2/3. Class 1: tp=1 fp=0 fn=1 -> 2/3.
  CHECK(metrics::macro_f1({0, 0, 1}, {0, 1, 1}, 2) ==
        doctest::Approx(2.0 / 3.0).epsilon(1e-12));

  // An absent class still counts in the denominator with score 0.
  CHECK(metrics::macro_f1({0, 0, 1}, {0, 1, 1}, 3) ==
        doctest::Approx(4.0 / 9.0).epsilon(1e-12));

  CHECK_THROWS_AS((void)metrics::macro_f1({0}, {0}, 0), mvtta::InputError);
}

TEST_CASE("macro AUC matches hand-ranked examples") {
  // Perfectly separating scores in both one-vs-rest directions.
  const std::vector<Vec> clean = {{0.9, 0.1}, {0.8, 0.2}, {0.1, 0.9}};
  CHECK(metrics::macro_auc(clean, {0, 0, 1}, 2) == 1.0);

  // Identical scores everywhere: every pair ties, so AUC is 0.5.
  const std::vector<Vec> flat = {{0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}};
  CHECK(metrics::macro_auc(flat, {0, 1, 0}, 2) ==
        doctest::Approx(0.5).epsilon(1e-12));

  // Tied pair across the class boundary: ranks 2 and 3 average to 2.5,
  // giving U = 3.5 of 4 pairs for both classes.
  const std::vector<Vec> tied = {
      {0.8, 0.2}, {0.2, 0.8}, {0.2, 0.8}, {0.1, 0.9}};
  CHECK(metrics::macro_auc(tied, {0, 1, 0, 1}, 2) ==
        doctest::Approx(0.875).epsilon(1e-12));
}

TEST_CASE("AUC is invariant to strictly increasing score transforms") {
  Rng rng = Rng::stream(31, mvtta::StreamKind::Test);
  std::vector<Vec> probs;
  std::vector<int> labels;
  for (int i = 0; i < 30; ++i) {
    probs.push_back(testutil::random_probs(3, rng));
    labels.push_back(static_cast<int>(rng.next_below(3)));
  }
  labels[0] = 0;
  labels[1] = 1;
  labels[2] = 2;

  std::vector<Vec> cubed = probs;
  for (Vec& p : cubed) {
    for (double& x : p) {
      x = x * x * x;
    }
  }
  CHECK(metrics::macro_auc(probs, labels, 3) ==
        doctest::Approx(metrics::macro_auc(cubed, labels, 3)).epsilon(1e-12));
}

TEST_CASE("rank AUC agrees with trapezoid ROC integration") {
  Rng rng = Rng::stream(32, mvtta::StreamKind::Test);
  for (int trial = 0; trial < 100; ++trial) {
    const int classes = 2 + static_cast<int>(rng.next_below(3));
    const std::size_t n = 5 + rng.next_below(36);
    std::vector<Vec> probs;
    std::vector<int> labels;
    for (std::size_t i = 0; i < n; ++i) {
      Vec p = testutil::random_probs(static_cast<std::size_t>(classes), rng);
      // Quantize scores so exact ties are common.
      for (double& x : p) {
        x = std::round(x * 10.0) / 10.0;
      }
      probs.push_back(std::move(p));
      labels.push_back(static_cast<int>(
          rng.next_below(static_cast<std::uint64_t>(classes))));
    }
    labels[0] = 0;
    labels[1] = 1;  // at least one scorable class

    const double ranked = metrics::macro_auc(probs, labels, classes);
    const double swept = trapezoid_macro_auc(probs, labels, classes);
    CHECK(ranked == doctest::Approx(swept).epsilon(1e-12));
  }
}

TEST_CASE("classes without both positives and negatives are excluded") {
  // Class 2 never appears in the labels, so only classes 0 and 1 score.
  const std::vector<Vec> probs = {
      {0.7, 0.2, 0.1}, {0.2, 0.7, 0.1}, {0.6, 0.3, 0.1}, {0.1, 0.8, 0.1}};
  const std::vector<int> labels = {0, 1, 0, 1};
  const double with_empty = metrics::macro_auc(probs, labels, 3);

  std::vector<Vec> two_class;
  for (const Vec& p : probs) {
    two_class.push_back({p[0], p[1]});
  }
  CHECK(with_empty ==
        doctest::Approx(metrics::macro_auc(two_class, labels, 2))
            .epsilon(1e-12));

  // Single-class labels leave nothing scorable at all.
  CHECK_THROWS_AS(
      (void)metrics::macro_auc({{0.5, 0.5}, {0.4, 0.6}}, {1, 1}, 2),
      mvtta::MetricError);
}

TEST_CASE("score vectors are validated") {
  CHECK_THROWS_AS((void)metrics::macro_auc({{0.5, 0.5}, {1.0}}, {0, 1}, 2),
                  mvtta::InputError);
  const double nan = std::nan("");
  CHECK_THROWS_AS((void)metrics::macro_auc({{nan, 0.5}, {0.5, 0.5}}, {0, 1}, 2),
                  mvtta::InputError);
}

TEST_CASE("report assembly and serialization") {
  const std::vector<int> preds = {0, 1, 1, 0};
  const std::vector<int> labels = {0, 1, 0, 0};
  const std::vector<Vec> probs = {
      {0.9, 0.1}, {0.2, 0.8}, {0.4, 0.6}, {0.7, 0.3}};

  const metrics::MetricsReport report =
      metrics::compute("per_patient", preds, probs, labels, 2);
  CHECK(report.granularity == "per_patient");
  CHECK(report.n == 4);
  CHECK(report.acc == metrics::accuracy(preds, labels));
  CHECK(report.macro_f1 == metrics::macro_f1(preds, labels, 2));
  CHECK(report.macro_auc == metrics::macro_auc(probs, labels, 2));

  const mvtta::json doc = metrics::to_json(report);
  CHECK(doc.at("granularity") == "per_patient");
  CHECK(doc.at("n") == 4);
  CHECK(doc.at("acc").get<double>() == report.acc);
  CHECK(doc.at("macro_f1").get<double>() == report.macro_f1);
  CHECK(doc.at("macro_auc").get<double>() == report.macro_auc);

  metrics::MetricsReport other = report;
  other.granularity = "per_image";
  const std::string table = metrics::format_table({other, report});
  CHECK(table.find("per_image") != std::string::npos);
  CHECK(table.find("per_patient") != std::string::npos);
  CHECK(table.find("AUC") != std::string::npos);
  CHECK(table.find("ACC") != std::string::npos);
  CHECK(table.find("F1") != std::string::npos);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", report.acc);
  CHECK(table.find(buf) != std::string::npos);
  // Every line ends in a newline and shares one column layout.
  CHECK(table.back() == '\n');
}
