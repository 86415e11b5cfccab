#pragma once

#include <cstddef>

// Scalar special functions used by the distribution log-densities and the
// reparameterised gamma sampler. All functions expect arguments in their
// mathematical domain and throw dkp::DomainError otherwise.
namespace dkp::special {

double lgamma(double x);
double digamma(double x);
double trigamma(double x);

// log of the multivariate gamma function Gamma_P(a); requires a > (P-1)/2.
double mvlgamma(double a, int p);
// d/da mvlgamma(a, p) = sum_j digamma(a + (1-j)/2).
double mvlgamma_da(double a, int p);

// Regularized lower incomplete gamma P(a, x), a > 0, x >= 0.
double gammainc_p(double a, double x);
// dP(a, x)/da. Analytic term-wise series for x <= a+1; differenced
// continued-fraction evaluation otherwise.
double gammainc_p_da(double a, double x);
// Inverse of P(a, .) at u in (0, 1): returns x with P(a, x) = u.
double gammainc_p_inv(double a, double u);

// Gamma(shape a, rate 1) log-density at x > 0.
double gamma_logpdf1(double a, double x);

// Standard normal inverse CDF.
double norm_icdf(double u);

}  // namespace dkp::special
