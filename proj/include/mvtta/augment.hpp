#pragma once

#include "mvtta/rng.hpp"
#include "mvtta/vecmath.hpp"

namespace mvtta::aug {

// Two-strength feature-space augmentation. Weak augmentation adds small
// gaussian jitter; strong augmentation first zeroes random coordinates, then
// adds larger jitter to every coordinate.
struct AugmentSpec {
  double weak_sigma = 0.05;
  double strong_sigma = 0.2;
  double mask_prob = 0.2;
};

// Throws ConfigError unless 0 <= weak_sigma <= strong_sigma and
// mask_prob lies in [0, 1].
void validate(const AugmentSpec& spec);

Vec weak_augment(const Vec& x, const AugmentSpec& spec, Rng& rng);
Vec strong_augment(const Vec& x, const AugmentSpec& spec, Rng& rng);

}  // namespace mvtta::aug
