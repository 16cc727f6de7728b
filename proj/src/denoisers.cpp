#include "mlgamp/denoisers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mlgamp {

namespace {

constexpr double kSqrt2 = 1.4142135623730951;
constexpr double kInvSqrt2Pi = 0.3989422804014327;
constexpr double kInf = std::numeric_limits<double>::infinity();

double log_norm_pdf(double x, double mean, double var) {
  double d = x - mean;
  return -0.5 * d * d / var - 0.5 * std::log(2.0 * M_PI * var);
}

double part_of(cplx v, int p) { return p == 0 ? v.real() : v.imag(); }

}  // namespace

double erfcx(double x) {
  if (x < 0.0) return 2.0 * std::exp(x * x) - erfcx(-x);
  if (x < 2.5) return std::exp(x * x) * std::erfc(x);
  // Laplace continued fraction, converges fast for x >= 2.5
  double cf = 0.0;
  for (int k = 60; k >= 1; --k) cf = 0.5 * k / (x + cf);
  return (1.0 / std::sqrt(M_PI)) / (x + cf);
}

double norm_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }
double norm_cdf(double x) { return 0.5 * std::erfc(-x / kSqrt2); }
double norm_tail(double x) { return 0.5 * std::erfc(x / kSqrt2); }

TruncatedStdNormal truncated_std_normal(double a, double b) {
  if (!(a < b)) return {0.0, 0.5 * (a + b), 0.0};

  // Reflect so the interval's mass sits in the left half-line; the deep
  // right tail then never appears.
  bool reflected = false;
  if (a > -b) {  // works with infinities: -inf > -b is false, a > -(-inf) true
    std::swap(a, b);
    a = -a;
    b = -b;
    reflected = true;
  }

  double prob, mean, second;  // second = E[zeta^2 | event]
  if (b <= 0.0) {
    // Left-tail interval: scaled complementary error function route.
    double t = -b / kSqrt2;                      // >= 0
    double s = std::isinf(a) ? kInf : -a / kSqrt2;  // >= t
    double ratio = std::isinf(s) ? 0.0 : std::exp(t * t - s * s);
    double d = 0.5 * (erfcx(t) - ratio * erfcx(s));
    if (d <= 0.0) return {0.0, b, 0.0};
    prob = std::exp(-t * t) * d;
    double phi_b_over_p = kInvSqrt2Pi / d;
    double phi_a_over_p = ratio * kInvSqrt2Pi / d;
    mean = phi_a_over_p - phi_b_over_p;
    double a_term = std::isinf(a) ? 0.0 : a * phi_a_over_p;
    second = 1.0 + a_term - b * phi_b_over_p;
  } else {
    prob = norm_cdf(b) - norm_cdf(a);
    if (prob <= 0.0) return {0.0, 0.5 * (a + b), 0.0};
    double phi_a = std::isinf(a) ? 0.0 : norm_pdf(a);
    double phi_b = std::isinf(b) ? 0.0 : norm_pdf(b);
    mean = (phi_a - phi_b) / prob;
    double a_term = std::isinf(a) ? 0.0 : a * phi_a;
    double b_term = std::isinf(b) ? 0.0 : b * phi_b;
    second = 1.0 + (a_term - b_term) / prob;
  }
  double var = std::max(0.0, second - mean * mean);
  if (reflected) mean = -mean;
  return {prob, mean, var};
}

IntervalPosterior interval_posterior(double prior_mean, double prior_var,
                                     double noise_var, double lo, double hi) {
  double s2 = prior_var + noise_var;
  if (s2 <= 0.0) {
    bool inside = prior_mean > lo && prior_mean <= hi;
    return {inside ? 1.0 : 0.0, prior_mean, 0.0};
  }
  double s = std::sqrt(s2);
  TruncatedStdNormal t =
      truncated_std_normal((lo - prior_mean) / s, (hi - prior_mean) / s);
  double k = prior_var / s2;
  double mean = prior_mean + k * s * t.mean;
  double var = prior_var * (1.0 - k) + k * k * s2 * t.var;
  return {t.prob, mean, std::max(0.0, var)};
}

Moments gaussian_product(cplx m1, double v1, cplx m2, double v2) {
  if (std::isinf(v1)) return {m2, v2};
  if (std::isinf(v2)) return {m1, v1};
  double sum = v1 + v2;
  return {(m1 * v2 + m2 * v1) / sum, v1 * v2 / sum};
}

Moments output_moments_last(cplx y, const PseudoGaussian& zv, const Channel& ch,
                            Field field) {
  if (!(zv.variance > 0.0)) throw std::invalid_argument("output_moments_last: V must be positive");
  if (ch.type == Channel::Type::Awgn) {
    return gaussian_product(y, ch.sigma2, zv.mean, zv.variance);
  }
  int parts = field_parts(field);
  double vp = zv.variance / parts;
  double np = ch.sigma2 / parts;
  double mean_part[2] = {0.0, 0.0};
  double var = 0.0;
  for (int p = 0; p < parts; ++p) {
    double yp = part_of(y, p);
    if (!ch.on_grid(yp)) throw std::invalid_argument("output_moments_last: y off the quantizer grid");
    IntervalPosterior ip = interval_posterior(part_of(zv.mean, p), vp, np,
                                              ch.q_low(yp), ch.q_up(yp));
    mean_part[p] = ip.mean;
    var += ip.var;
  }
  return {{mean_part[0], mean_part[1]}, var};
}

namespace {

// Per-part mixture posterior of z ~ N(zm, zv) given that Q(z + n) carries
// the pseudo-prior N(.|rm, rv): weights over codebook levels, conditional
// interval posteriors.
struct PartMoments {
  double mean;
  double var;
};

PartMoments quantized_backward_part(double rm, double rv, double zm, double zv,
                                    double nv, const Channel& ch) {
  int n = ch.num_levels();
  std::vector<double> logw(n), cm(n), cv(n);
  double maxlog = -kInf;
  for (int i = 0; i < n; ++i) {
    double y = ch.level(i);
    IntervalPosterior ip = interval_posterior(zm, zv, nv, ch.q_low(y), ch.q_up(y));
    cm[i] = ip.mean;
    cv[i] = ip.var;
    logw[i] = (ip.prob > 0.0 ? std::log(ip.prob) : -kInf) + log_norm_pdf(y, rm, rv);
    maxlog = std::max(maxlog, logw[i]);
  }
  if (!std::isfinite(maxlog)) throw std::runtime_error("quantized backward kernel: vanishing mixture mass");
  double wsum = 0.0, m1 = 0.0;
  for (int i = 0; i < n; ++i) {
    double w = std::exp(logw[i] - maxlog);
    wsum += w;
    m1 += w * cm[i];
  }
  m1 /= wsum;
  double var = 0.0;
  for (int i = 0; i < n; ++i)
    var += std::exp(logw[i] - maxlog) * (cv[i] + (cm[i] - m1) * (cm[i] - m1));
  return {m1, var / wsum};
}

// Per-part discrete posterior of x in the codebook, prior mass from the
// marginal of z + n, tilted by N(x|rm, rv).
PartMoments quantized_forward_part(double rm, double rv, double zm, double zv,
                                   double nv, const Channel& ch) {
  int n = ch.num_levels();
  double s2 = zv + nv;
  double s = std::sqrt(s2);
  std::vector<double> logw(n);
  double maxlog = -kInf;
  for (int i = 0; i < n; ++i) {
    double y = ch.level(i);
    TruncatedStdNormal t =
        truncated_std_normal((ch.q_low(y) - zm) / s, (ch.q_up(y) - zm) / s);
    logw[i] = (t.prob > 0.0 ? std::log(t.prob) : -kInf) + log_norm_pdf(y, rm, rv);
    maxlog = std::max(maxlog, logw[i]);
  }
  if (!std::isfinite(maxlog)) throw std::runtime_error("quantized forward kernel: vanishing mixture mass");
  double wsum = 0.0, m1 = 0.0;
  for (int i = 0; i < n; ++i) {
    double w = std::exp(logw[i] - maxlog);
    wsum += w;
    m1 += w * ch.level(i);
  }
  m1 /= wsum;
  // centered: the uncentered form cancels badly when one level dominates
  double var = 0.0;
  for (int i = 0; i < n; ++i) {
    double d = ch.level(i) - m1;
    var += std::exp(logw[i] - maxlog) * d * d;
  }
  return {m1, var / wsum};
}

}  // namespace

Moments output_moments_mid(const PseudoGaussian& rx, const PseudoGaussian& zv,
                           const Channel& ch, Field field) {
  if (!(rx.variance > 0.0) || !(zv.variance > 0.0))
    throw std::invalid_argument("output_moments_mid: variances must be positive");
  if (ch.type == Channel::Type::Awgn) {
    return gaussian_product(rx.mean, rx.variance + ch.sigma2, zv.mean, zv.variance);
  }
  int parts = field_parts(field);
  double mean_part[2] = {0.0, 0.0};
  double var = 0.0;
  for (int p = 0; p < parts; ++p) {
    PartMoments pm = quantized_backward_part(
        part_of(rx.mean, p), rx.variance / parts, part_of(zv.mean, p),
        zv.variance / parts, ch.sigma2 / parts, ch);
    mean_part[p] = pm.mean;
    var += pm.var;
  }
  return {{mean_part[0], mean_part[1]}, var};
}

Moments input_moments_first(const PseudoGaussian& rx, const Prior& prior,
                            Field field) {
  if (!(rx.variance > 0.0)) throw std::invalid_argument("input_moments_first: Sigma must be positive");
  if (prior.type == Prior::Type::Gaussian) {
    return gaussian_product(cplx{0.0, 0.0}, prior.variance, rx.mean, rx.variance);
  }
  int parts = field_parts(field);
  double a = 1.0 / std::sqrt(static_cast<double>(parts));
  double sp = rx.variance / parts;
  double mean_part[2] = {0.0, 0.0};
  double var = 0.0;
  for (int p = 0; p < parts; ++p) {
    double arg = a * part_of(rx.mean, p) / sp;
    mean_part[p] = a * std::tanh(arg);
    // a^2 sech^2(arg): stable where 1 - tanh^2 would cancel
    double c = std::cosh(std::min(std::abs(arg), 350.0));
    var += (a / c) * (a / c);
  }
  return {{mean_part[0], mean_part[1]}, std::max(0.0, var)};
}

Moments input_moments_mid(const PseudoGaussian& rx, const PseudoGaussian& zv,
                          const Channel& ch, Field field) {
  if (!(rx.variance > 0.0) || !(zv.variance > 0.0))
    throw std::invalid_argument("input_moments_mid: variances must be positive");
  if (ch.type == Channel::Type::Awgn) {
    return gaussian_product(zv.mean, zv.variance + ch.sigma2, rx.mean, rx.variance);
  }
  int parts = field_parts(field);
  double mean_part[2] = {0.0, 0.0};
  double var = 0.0;
  for (int p = 0; p < parts; ++p) {
    PartMoments pm = quantized_forward_part(
        part_of(rx.mean, p), rx.variance / parts, part_of(zv.mean, p),
        zv.variance / parts, ch.sigma2 / parts, ch);
    mean_part[p] = pm.mean;
    var += pm.var;
  }
  return {{mean_part[0], mean_part[1]}, var};
}

Moments quadrature_oracle(const std::function<double(double)>& logdensity,
                          double lo, double hi, int nodes) {
  if (nodes < 3) throw std::invalid_argument("quadrature_oracle: nodes must be >= 3");
  if (nodes % 2 == 0) ++nodes;  // Simpson needs an odd node count
  double h = (hi - lo) / (nodes - 1);
  std::vector<double> logf(nodes);
  double maxlog = -kInf;
  for (int i = 0; i < nodes; ++i) {
    logf[i] = logdensity(lo + i * h);
    maxlog = std::max(maxlog, logf[i]);
  }
  if (!std::isfinite(maxlog)) throw std::runtime_error("quadrature_oracle: density not normalizable");
  double mass = 0.0, m1 = 0.0;
  for (int i = 0; i < nodes; ++i) {
    double w = (i == 0 || i == nodes - 1) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
    double f = w * std::exp(logf[i] - maxlog);
    mass += f;
    m1 += f * (lo + i * h);
  }
  if (mass <= 0.0 || maxlog + std::log(mass * h / 3.0) < std::log(1e-300))
    throw std::runtime_error("quadrature_oracle: density not normalizable");
  m1 /= mass;
  // centered second pass: m2 - m1^2 cancels badly for saturated posteriors
  double var = 0.0;
  for (int i = 0; i < nodes; ++i) {
    double w = (i == 0 || i == nodes - 1) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
    double x = lo + i * h;
    var += w * std::exp(logf[i] - maxlog) * (x - m1) * (x - m1);
  }
  return {{m1, 0.0}, var / mass};
}

Moments discrete_oracle(const std::function<double(double)>& logweight,
                        const std::vector<double>& support) {
  double maxlog = -kInf;
  std::vector<double> lw(support.size());
  for (size_t i = 0; i < support.size(); ++i) {
    lw[i] = logweight(support[i]);
    maxlog = std::max(maxlog, lw[i]);
  }
  if (!std::isfinite(maxlog)) throw std::runtime_error("discrete_oracle: vanishing mass");
  double mass = 0.0, m1 = 0.0;
  for (size_t i = 0; i < support.size(); ++i) {
    double w = std::exp(lw[i] - maxlog);
    mass += w;
    m1 += w * support[i];
  }
  m1 /= mass;
  double var = 0.0;
  for (size_t i = 0; i < support.size(); ++i)
    var += std::exp(lw[i] - maxlog) * (support[i] - m1) * (support[i] - m1);
  return {{m1, 0.0}, var / mass};
}

}  // namespace mlgamp
