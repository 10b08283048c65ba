#pragma once

// Counter-based named random streams.
//
// A stream is identified by (seed, name). Output i of a stream is a pure
// function of (key, i), so substreams handed to workers never share state and
// results do not depend on scheduling. Uniform and normal variates are derived
// from the raw 64-bit outputs by fixed formulas, so identical streams give
// identical samples on every platform (no std:: distribution objects, whose
// algorithms are implementation-defined).

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <string_view>

namespace entcal {

namespace detail {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s,
                                std::uint64_t h = 0xCBF29CE484222325ULL) noexcept {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace detail

class RngStream {
 public:
  using result_type = std::uint64_t;

  explicit RngStream(std::uint64_t seed, std::string_view name = "main")
      : seed_(seed), name_(name), key_(derive_key(seed, name)) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    ++counter_;
    return detail::mix64(key_ + counter_ * detail::kGolden);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1), for logs.
  double uniform_open() noexcept {
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() noexcept {
    // Box-Muller, one variate per call.
    double u1 = uniform_open();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Gamma(shape, 1) by Marsaglia-Tsang, with the shape < 1 boost.
  double gamma(double shape) {
    if (!(shape > 0.0)) throw std::domain_error("gamma shape must be positive");
    if (shape < 1.0) {
      double g = gamma(shape + 1.0);
      return g * std::pow(uniform_open(), 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      double u = uniform_open();
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
    }
  }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
  }

  RngStream substream(std::string_view child) const {
    return RngStream(seed_, name_ + "/" + std::string(child));
  }
  RngStream substream(std::uint64_t index) const { return substream(std::to_string(index)); }

  std::uint64_t seed() const noexcept { return seed_; }
  const std::string& name() const noexcept { return name_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  static std::uint64_t derive_key(std::uint64_t seed, std::string_view name) noexcept {
    return detail::mix64(detail::mix64(seed ^ detail::kGolden) ^ detail::fnv1a64(name));
  }

  std::uint64_t seed_;
  std::string name_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace entcal
