#include "mvtta/vecmath.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mvtta/errors.hpp"

namespace mvtta {

double dot(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) {
    throw InputError("dot: length mismatch (" + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()) + ")");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sum += a[i] * b[i];
  }
  return sum;
}

double l2_norm(const Vec& v) { return std::sqrt(dot(v, v)); }

Vec l2_normalized(const Vec& v) {
  const double norm = l2_norm(v);
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw InputError("l2_normalized: zero or non-finite vector");
  }
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = v[i] / norm;
  }
  return out;
}

int argmax_lowest(const Vec& v) {
  if (v.empty()) {
    throw InputError("argmax_lowest: empty vector");
  }
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i) {
    if (v[static_cast<std::size_t>(i)] > v[static_cast<std::size_t>(best)]) {
      best = i;
    }
  }
  return best;
}

bool all_finite(const Vec& v) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      return false;
    }
  }
  return true;
}

Vec stable_softmax(const Vec& logits) {
  if (logits.empty()) {
    throw InputError("stable_softmax: empty logits");
  }
  const double shift = *std::max_element(logits.begin(), logits.end());
  Vec out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - shift);
    sum += out[i];
  }
  for (double& p : out) {
    p /= sum;
  }
  return out;
}

void require_probability(const Vec& p, double tol, const char* what) {
  if (p.empty()) {
    throw InputError(std::string(what) + ": empty probability vector");
  }
  double sum = 0.0;
  for (double x : p) {
    if (!std::isfinite(x) || x < 0.0) {
      throw InputError(std::string(what) +
                       ": probability entries must be finite and >= 0");
    }
    sum += x;
  }
  if (std::abs(sum - 1.0) > tol) {
    throw InputError(std::string(what) + ": probabilities sum to " +
                     std::to_string(sum) + ", expected 1");
  }
}

}  // namespace mvtta
