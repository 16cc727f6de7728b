#pragma once

#include <functional>
#include <stdexcept>

#include "mlgamp/model.hpp"

namespace mlgamp {

/// Posterior mean/variance pair. Variance is the total variance
/// (sum over real parts in the complex field).
struct Moments {
  cplx mean{0.0, 0.0};
  double variance = 0.0;
};

/// Gaussian pseudo-prior summary (R, Sigma) or (Z, V).
struct PseudoGaussian {
  cplx mean{0.0, 0.0};
  double variance = 0.0;
};

// --- numerics helpers (tail-safe) ----------------------------------------

/// exp(x^2) * erfc(x), stable for large x.
double erfcx(double x);

double norm_pdf(double x);
double norm_cdf(double x);
/// Q(x) = 1 - Phi(x).
double norm_tail(double x);

/// Moments of a standard normal truncated to (a, b].  Stable deep in
/// either tail.  Returns {probability mass, mean, variance}.
struct TruncatedStdNormal {
  double prob;
  double mean;
  double var;
};
TruncatedStdNormal truncated_std_normal(double a, double b);

/// Moments of z ~ N(prior_mean, prior_var) conditioned on
/// z + n in (lo, hi], n ~ N(0, noise_var).  Also returns the mass of the
/// conditioning event.
struct IntervalPosterior {
  double prob;
  double mean;
  double var;
};
IntervalPosterior interval_posterior(double prior_mean, double prior_var,
                                     double noise_var, double lo, double hi);

/// Product of N(x|m1,v1) N(x|m2,v2), normalized.
Moments gaussian_product(cplx m1, double v1, cplx m2, double v2);

// --- scalar posterior kernels ---------------------------------------------

/// Moments of z under P(y|z) N(z|Z,V), the last-layer tilted density.
Moments output_moments_last(cplx y, const PseudoGaussian& zv, const Channel& ch,
                            Field field);

/// Moments of z under [integral P(x|z) N(x|R,Sigma) dx] N(z|Z,V): mid-layer
/// backward kernel, with (R,Sigma) the pseudo-prior on the layer output x.
Moments output_moments_mid(const PseudoGaussian& rx, const PseudoGaussian& zv,
                           const Channel& ch, Field field);

/// Moments of x under P_X(x) N(x|R,Sigma): first-layer forward kernel.
Moments input_moments_first(const PseudoGaussian& rx, const Prior& prior,
                            Field field);

/// Moments of x under [integral P(x|z) N(z|Z,V) dz] N(x|R,Sigma): mid-layer
/// forward kernel, with (Z,V) the pseudo-prior on the previous layer's z.
Moments input_moments_mid(const PseudoGaussian& rx, const PseudoGaussian& zv,
                          const Channel& ch, Field field);

// --- reference integrator --------------------------------------------------

/// Mean/variance of a 1-D density given by its log, via composite
/// integration on [lo, hi] with the given node count.  Reference
/// implementation used to validate the closed-form kernels.
Moments quadrature_oracle(const std::function<double(double)>& logdensity,
                          double lo, double hi, int nodes);

/// Discrete counterpart: exact summation over a finite support.
Moments discrete_oracle(const std::function<double(double)>& logweight,
                        const std::vector<double>& support);

}  // namespace mlgamp
