#pragma once

namespace vtg {

/// Regularized lower incomplete gamma P(a, x). Series for x < a + 1,
/// Lentz continued fraction for the complement otherwise.
double regularized_gamma_p(double a, double x);

/// CDF of the chi-squared distribution with `dof` degrees of freedom.
double chi2_cdf(double x, double dof);

/// Threshold τ with chi2_cdf(τ, dof) = p, found by bisection.
/// Throws DomainError unless dof >= 1 and 0 < p < 1.
double chi2_quantile(double dof, double p);

}  // namespace vtg
