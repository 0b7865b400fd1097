#include "ttm/special.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ttm {

namespace {

constexpr double kHalfLn2Pi = 0.91893853320467274178;  // ln(2*pi)/2

// Upward recurrence threshold. Above it the asymptotic series below are
// accurate to well under the contract tolerances.
constexpr double kAsymptoticThreshold = 6.0;

void check_argument(double x, const char* name) {
  if (!std::isfinite(x) || x <= 0.0) {
    throw std::domain_error(std::string(name) + ": argument must be finite and > 0, got " +
                            std::to_string(x));
  }
}

// B_{2n} / (2n (2n-1)) for the Stirling series of ln Gamma.
constexpr double kStirling[] = {
    1.0 / 12.0,           -1.0 / 360.0,          1.0 / 1260.0,
    -1.0 / 1680.0,        1.0 / 1188.0,          -691.0 / 360360.0,
    1.0 / 156.0,          -3617.0 / 122400.0,    43867.0 / 244188.0,
    -174611.0 / 125400.0,
};

// B_{2n} / (2n) for the digamma series.
constexpr double kDigammaSeries[] = {
    1.0 / 12.0,         -1.0 / 120.0,        1.0 / 252.0,  -1.0 / 240.0,
    1.0 / 132.0,        -691.0 / 32760.0,    1.0 / 12.0,   -3617.0 / 8160.0,
};

// B_{2n} for the trigamma series.
constexpr double kTrigammaSeries[] = {
    1.0 / 6.0,   -1.0 / 30.0,      1.0 / 42.0,  -1.0 / 30.0,
    5.0 / 66.0,  -691.0 / 2730.0,  7.0 / 6.0,   -3617.0 / 510.0,
};

}  // namespace

double log_gamma(double x) {
  check_argument(x, "log_gamma");
  // ln Gamma(x) = ln Gamma(x + n) - sum ln(x + i), shifting into the
  // asymptotic regime.
  double shift = 0.0;
  double z = x;
  while (z < kAsymptoticThreshold) {
    shift += std::log(z);
    z += 1.0;
  }
  double result = (z - 0.5) * std::log(z) - z + kHalfLn2Pi;
  const double inv2 = 1.0 / (z * z);
  double term = 1.0 / z;
  for (double coeff : kStirling) {
    result += coeff * term;
    term *= inv2;
  }
  return result - shift;
}

double digamma(double x) {
  check_argument(x, "digamma");
  // psi(x) = psi(x + 1) - 1/x.
  double shift = 0.0;
  double z = x;
  while (z < kAsymptoticThreshold) {
    shift += 1.0 / z;
    z += 1.0;
  }
  const double inv = 1.0 / z;
  const double inv2 = inv * inv;
  double result = std::log(z) - 0.5 * inv;
  double term = inv2;
  for (double coeff : kDigammaSeries) {
    result -= coeff * term;
    term *= inv2;
  }
  return result - shift;
}

double trigamma(double x) {
  check_argument(x, "trigamma");
  // psi'(x) = psi'(x + 1) + 1/x^2.
  double shift = 0.0;
  double z = x;
  while (z < kAsymptoticThreshold) {
    shift += 1.0 / (z * z);
    z += 1.0;
  }
  const double inv = 1.0 / z;
  const double inv2 = inv * inv;
  double result = inv + 0.5 * inv2;
  double term = inv * inv2;
  for (double coeff : kTrigammaSeries) {
    result += coeff * term;
    term *= inv2;
  }
  return result + shift;
}

}  // namespace ttm
