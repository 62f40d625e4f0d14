#include "mvtta/augment.hpp"

#include "mvtta/errors.hpp"

namespace mvtta::aug {

void validate(const AugmentSpec& spec) {
  if (!(spec.weak_sigma >= 0.0)) {
    throw ConfigError("augment: weak_sigma must be >= 0");
  }
  if (!(spec.strong_sigma >= spec.weak_sigma)) {
    throw ConfigError("augment: strong_sigma must be >= weak_sigma");
  }
  if (!(spec.mask_prob >= 0.0 && spec.mask_prob <= 1.0)) {
    throw ConfigError("augment: mask_prob must lie in [0, 1]");
  }
}

Vec weak_augment(const Vec& x, const AugmentSpec& spec, Rng& rng) {
  validate(spec);
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = x[i] + spec.weak_sigma * rng.next_gaussian();
  }
  return out;
}

Vec strong_augment(const Vec& x, const AugmentSpec& spec, Rng& rng) {
  validate(spec);
  Vec out(x.size());
  // Draw all mask decisions first so the mask pattern does not depend on the
  // noise draws that follow.
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = rng.next_unit() < spec.mask_prob ? 0.0 : x[i];
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] += spec.strong_sigma * rng.next_gaussian();
  }
  return out;
}

}  // namespace mvtta::aug
