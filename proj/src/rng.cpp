#include "mvtta/rng.hpp"

#include <cmath>
#include <limits>

#include "mvtta/errors.hpp"

namespace mvtta {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::uint64_t splitmix64(std::uint64_t& state) {
  state += kGolden;
  return mix64(state);
}

}  // namespace

Rng Rng::stream(std::uint64_t seed, StreamKind kind, std::uint64_t a,
                std::uint64_t b, std::uint64_t c) {
  // Order-sensitive absorption of the key words.
  std::uint64_t h = mix64(seed ^ 0x243F6A8885A308D3ull);
  h = mix64(h + kGolden + static_cast<std::uint64_t>(kind));
  h = mix64(h + kGolden + a);
  h = mix64(h + kGolden + b);
  h = mix64(h + kGolden + c);
  return Rng(h);
}

std::uint64_t Rng::next_u64() { return splitmix64(state_); }

double Rng::next_unit() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::next_gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // u1 in (0, 1] keeps the log finite.
  double u1 = 1.0 - next_unit();
  double u2 = next_unit();
  double radius = std::sqrt(-2.0 * std::log(u1));
  double angle = 2.0 * 3.14159265358979323846 * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::uint64_t Rng::next_below(std::uint64_t n) {
  if (n == 0) {
    throw InputError("Rng::next_below: n must be positive");
  }
  const std::uint64_t limit =
      std::numeric_limits<std::uint64_t>::max() -
      std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t draw;
  do {
    draw = next_u64();
  } while (draw >= limit);
  return draw % n;
}

}  // namespace mvtta
