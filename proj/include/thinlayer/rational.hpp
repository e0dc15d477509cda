#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace thinlayer {

/// Exact rational number with a positive denominator, always in lowest terms.
struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  Rational() = default;
  Rational(std::int64_t n, std::int64_t d = 1);

  double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }
  std::string str() const;

  static Rational parse(const std::string& text);

  friend bool operator==(const Rational&, const Rational&) = default;
};

Rational operator*(const Rational& a, const Rational& b);
Rational operator/(const Rational& a, const Rational& b);
bool operator<(const Rational& a, const Rational& b);

/// Exact integer k-th root if `value` is a perfect k-th power.
std::optional<std::int64_t> exact_root(std::int64_t value, std::int64_t k);

/// Integer power with overflow check (throws OutOfRange on overflow).
std::int64_t ipow(std::int64_t base, std::int64_t exponent);

/// Result of the scale admissibility check: eps^alpha expressed exactly.
struct ScalePair {
  Rational eps;
  Rational alpha;
  Rational eps_pow_alpha;     // eps^alpha
  std::int64_t inv_eps;       // 1/eps
  std::int64_t cells_half;    // eps^alpha / eps, micro cells per half thickness
};

/// Checks 0 < eps < 1, 0 < alpha < 1, 1/eps integer, and eps^alpha / eps
/// integer. Throws Error(OutOfRange) or Error(NonRepresentable).
ScalePair check_admissible_scales(const Rational& eps, const Rational& alpha);

}  // namespace thinlayer
