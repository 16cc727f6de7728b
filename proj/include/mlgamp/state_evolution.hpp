#pragma once

#include "mlgamp/model.hpp"

namespace mlgamp {

/// Gauss-Hermite rule rewritten for expectations against N(0,1):
/// E[f(xi)] ~= sum_i weight[i] * f(node[i]).
struct GaussHermite {
  std::vector<double> nodes;
  std::vector<double> weights;
  explicit GaussHermite(int n);
};

struct QuadratureSpec {
  int hermite_nodes = 40;
  int inner_grid = 2001;  // trapezoid/Simpson nodes for continuous inner integrals
};

/// Per-layer scalars of the MSE recursion.
struct SeState {
  std::vector<double> t_x;    // T_X^(l), l = 1..L (plus observation power at back of init chain)
  std::vector<double> t_z;    // T_Z^(l) = T_X^(l)/alpha_l
  std::vector<double> v;      // V^(l)
  std::vector<double> q;      // q^(l)
  std::vector<double> sigma;  // Sigma^(l)
  std::vector<double> d;      // d^(l)
  int iteration = 0;
  int clamp_streak = 0;  // consecutive iterations the Sigma denominator clamp fired
};

SeState se_init(const ModelSpec& spec);

/// Backward half-iteration: V, q, Sigma for l = L..1.
void se_backward_step(SeState& state, const ModelSpec& spec, const QuadratureSpec& quad);

/// Forward half-iteration: d for l = 1..L.  MSE after the step is
/// t_x[0] - d[0].
void se_forward_step(SeState& state, const ModelSpec& spec, const QuadratureSpec& quad);

struct SeTrace {
  std::vector<double> mse;  // one entry per iteration
  SeState final_state;
  bool breakdown = false;
  std::string message;
};

SeTrace se_run(const ModelSpec& spec, int max_iters, const QuadratureSpec& quad);

/// Closed-form-assisted quantized-output SE variance vbar_tilde for the
/// last layer (AWGN + ADC), to cross-check the generic q-path:
/// vbar_tilde = T_Z - q.
double se_adc_vtilde(double t_z, double v, double sigma2, int bits, double delta,
                     Field field, const QuadratureSpec& quad);

// Scalar overlap integrals.  The *_generic variants always integrate
// through the denoiser kernels; the plain ones use closed forms where the
// channel admits them (AWGN, Gaussian prior, QPSK tanh form).
double se_q_last(const Channel& ch, double t_z, double v, Field field,
                 const QuadratureSpec& quad);
double se_q_last_generic(const Channel& ch, double t_z, double v, Field field,
                         const QuadratureSpec& quad);
double se_q_mid(const Channel& ch, double t_z, double v, double sigma_next,
                Field field, const QuadratureSpec& quad);
double se_q_mid_generic(const Channel& ch, double t_z, double v, double sigma_next,
                        Field field, const QuadratureSpec& quad);
double se_d_first(const Prior& prior, double sigma, Field field,
                  const QuadratureSpec& quad);
double se_d_mid(const Channel& ch, double t_z_prev, double v_prev, double sigma,
                Field field, const QuadratureSpec& quad);
double se_d_mid_generic(const Channel& ch, double t_z_prev, double v_prev,
                        double sigma, Field field, const QuadratureSpec& quad);

/// Analytic QPSK symbol error rate for a residual of power mse:
/// SER = 2 Q(g) - Q(g)^2 with g = 1/sqrt(mse).
double ser_from_mse(double mse);

}  // namespace mlgamp
