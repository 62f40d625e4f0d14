#pragma once

#include <vector>

namespace mvtta {

using Vec = std::vector<double>;

double dot(const Vec& a, const Vec& b);
double l2_norm(const Vec& v);

// Returns v / ||v||. Raises InputError on (near-)zero input.
Vec l2_normalized(const Vec& v);

// Index of the largest element; ties resolve to the lowest index.
int argmax_lowest(const Vec& v);

bool all_finite(const Vec& v);

// Numerically stable softmax (max-shifted). Output is non-negative and
// sums to 1 within a few ulps.
Vec stable_softmax(const Vec& logits);

// Checks that p is a probability vector: finite, entries >= 0, sum within
// `tol` of 1. Raises InputError mentioning `what` otherwise.
void require_probability(const Vec& p, double tol, const char* what);

}  // namespace mvtta
