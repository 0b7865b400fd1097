#pragma once

namespace ttm {

// Scalar special functions for Dirichlet calculus. All three require a
// strictly positive, finite argument and throw std::domain_error otherwise.

/// ln Gamma(x).
double log_gamma(double x);

/// Digamma psi(x) = d/dx ln Gamma(x).
double digamma(double x);

/// Trigamma psi'(x).
double trigamma(double x);

}  // namespace ttm
