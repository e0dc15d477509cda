#include "thinlayer/rational.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "thinlayer/error.hpp"

namespace thinlayer {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::NonRepresentable: return "NonRepresentable";
    case ErrorCode::InvalidInclusion: return "InvalidInclusion";
    case ErrorCode::DisconnectedFluid: return "DisconnectedFluid";
    case ErrorCode::EmptyFluid: return "EmptyFluid";
    case ErrorCode::GeometryError: return "GeometryError";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::IncompatibleRHS: return "IncompatibleRHS";
    case ErrorCode::EmptyInclusion: return "EmptyInclusion";
    case ErrorCode::FormulaMismatch: return "FormulaMismatch";
    case ErrorCode::NonpositiveProfile: return "NonpositiveProfile";
    case ErrorCode::StructureViolation: return "StructureViolation";
    case ErrorCode::SingularK: return "SingularK";
    case ErrorCode::NonphysicalNegativity: return "NonphysicalNegativity";
    case ErrorCode::SamplerRangeError: return "SamplerRangeError";
    case ErrorCode::InsufficientPoints: return "InsufficientPoints";
    case ErrorCode::NonpositiveValue: return "NonpositiveValue";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ValidationError: return "ValidationError";
  }
  return "Unknown";
}

Rational::Rational(std::int64_t n, std::int64_t d) {
  if (d == 0) throw Error(ErrorCode::OutOfRange, "zero denominator");
  if (d < 0) {
    n = -n;
    d = -d;
  }
  const std::int64_t g = std::gcd(n < 0 ? -n : n, d);
  num = g ? n / g : 0;
  den = g ? d / g : 1;
}

std::string Rational::str() const {
  if (den == 1) return std::to_string(num);
  return std::to_string(num) + "/" + std::to_string(den);
}

Rational Rational::parse(const std::string& text) {
  try {
    const auto slash = text.find('/');
    if (slash == std::string::npos) {
      std::size_t used = 0;
      const long long n = std::stoll(text, &used);
      if (used != text.size()) throw Error(ErrorCode::ParseError, "not a rational: '" + text + "'");
      return Rational(n, 1);
    }
    std::size_t used_n = 0;
    std::size_t used_d = 0;
    const std::string a = text.substr(0, slash);
    const std::string b = text.substr(slash + 1);
    const long long n = std::stoll(a, &used_n);
    const long long d = std::stoll(b, &used_d);
    if (used_n != a.size() || used_d != b.size()) {
      throw Error(ErrorCode::ParseError, "not a rational: '" + text + "'");
    }
    return Rational(n, d);
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::ParseError, "not a rational: '" + text + "'");
  }
}

Rational operator*(const Rational& a, const Rational& b) { return Rational(a.num * b.num, a.den * b.den); }
Rational operator/(const Rational& a, const Rational& b) { return Rational(a.num * b.den, a.den * b.num); }
bool operator<(const Rational& a, const Rational& b) { return a.num * b.den < b.num * a.den; }

std::int64_t ipow(std::int64_t base, std::int64_t exponent) {
  std::int64_t result = 1;
  for (std::int64_t i = 0; i < exponent; ++i) {
    if (base != 0 && std::abs(result) > std::numeric_limits<std::int64_t>::max() / std::abs(base)) {
      throw Error(ErrorCode::OutOfRange, "integer power overflow");
    }
    result *= base;
  }
  return result;
}

std::optional<std::int64_t> exact_root(std::int64_t value, std::int64_t k) {
  if (value < 0 || k <= 0) return std::nullopt;
  if (value <= 1) return value;
  const auto guess = static_cast<std::int64_t>(std::llround(std::pow(static_cast<double>(value), 1.0 / static_cast<double>(k))));
  for (std::int64_t c = std::max<std::int64_t>(guess - 1, 1); c <= guess + 1; ++c) {
    try {
      if (ipow(c, k) == value) return c;
    } catch (const Error&) {
    }
  }
  return std::nullopt;
}

ScalePair check_admissible_scales(const Rational& eps, const Rational& alpha) {
  if (!(Rational(0) < eps) || !(eps < Rational(1))) {
    throw Error(ErrorCode::OutOfRange, "eps must lie in (0,1), got " + eps.str());
  }
  if (!(Rational(0) < alpha) || !(alpha < Rational(1))) {
    throw Error(ErrorCode::OutOfRange, "alpha must lie in (0,1), got " + alpha.str());
  }
  if (eps.num != 1) {
    throw Error(ErrorCode::NonRepresentable, "1/eps is not an integer for eps = " + eps.str());
  }
  // alpha = p/q in lowest terms: eps^alpha is rational iff 1/eps = b^q.
  const std::int64_t inv_eps = eps.den;
  const auto base = exact_root(inv_eps, alpha.den);
  if (!base) {
    throw Error(ErrorCode::NonRepresentable,
                "eps^alpha is irrational for eps = " + eps.str() + ", alpha = " + alpha.str());
  }
  const std::int64_t inv_eps_alpha = ipow(*base, alpha.num);  // 1/eps^alpha
  ScalePair out{eps, alpha, Rational(1, inv_eps_alpha), inv_eps, 0};
  const Rational ratio = out.eps_pow_alpha / eps;
  if (ratio.den != 1) {
    throw Error(ErrorCode::NonRepresentable, "eps^alpha/eps = " + ratio.str() + " is not an integer");
  }
  out.cells_half = ratio.num;
  return out;
}

}  // namespace thinlayer
