#pragma once

#include <random>

#include "dkp/tape.hpp"

// Samplers and log-densities for the matrix-variate distributions used by the
// model. The ad:: variants record onto a Tape and are pathwise-differentiable
// in every parameter, including non-integer degrees of freedom (Bartlett
// construction with gamma draws by CDF inversion). The plain_ variants are
// fast, gradient-free samplers for diagnostics and prior rollouts.
namespace dkp::dist {

// Lower-triangular Bartlett factor A with A A^T ~ W(I_p, dof); requires
// dof > p - 1. Differentiable w.r.t. dof through the chi-squared diagonal.
ad::Node bartlett_lower(ad::Tape& t, ad::Node dof, int p);

// Alias for the gamma primitive; kept for discoverability next to the
// matrix-variate samplers.
ad::Node gamma_sample_reparam(ad::Tape& t, ad::Node shape, ad::Node rate);

// 1 / Gamma(alpha, rate = beta).
ad::Node invgamma_sample(ad::Tape& t, ad::Node alpha, ad::Node beta);
// Column of independent InvGamma(alpha, beta_j) draws with a shared shape;
// one fused node (used for per-point conditional variances).
ad::Node invgamma_sample_vec(ad::Tape& t, ad::Node alpha, ad::Node beta_col);
ad::Node invgamma_logpdf(ad::Node x, ad::Node alpha, ad::Node beta);

// S ~ W(scale, dof): S = (L A)(L A)^T with L = chol(scale).
ad::Node wishart_sample(ad::Tape& t, ad::Node scale, ad::Node dof);
// log p in the standard normalization; requires dof > P - 1.
ad::Node wishart_logpdf(ad::Node s, ad::Node scale, ad::Node dof);

// G ~ W^{-1}(scale, dof), built as a solve-based inverse of a Wishart draw:
// G = M M^T with M = chol(scale) A^{-T}. No explicit matrix inverses.
ad::Node invwishart_sample(ad::Tape& t, ad::Node scale, ad::Node dof);
ad::Node invwishart_logpdf(ad::Node g, ad::Node scale, ad::Node dof);

// mean + chol(row_cov) Z chol(col_cov)^T, Z i.i.d. standard normal.
ad::Node matrix_normal_sample(ad::Tape& t, ad::Node mean, ad::Node row_cov,
                              ad::Node col_cov);

// Gaussian log-density with shared covariance, summed over the columns of x
// (each column an independent P-variate Gaussian).
ad::Node mvn_logpdf(ad::Node x, ad::Node mean, ad::Node cov);

// --- gradient-free samplers -------------------------------------------------

double plain_gamma(std::mt19937_64& rng, double shape, double rate);
Mat plain_wishart(std::mt19937_64& rng, const Mat& scale, double dof);
Mat plain_invwishart(std::mt19937_64& rng, const Mat& scale, double dof);

}  // namespace dkp::dist
