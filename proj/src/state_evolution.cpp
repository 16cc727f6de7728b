#include "mlgamp/state_evolution.hpp"

#include <cmath>
#include <stdexcept>

#include "mlgamp/denoisers.hpp"

namespace mlgamp {

namespace {
constexpr double kSqrt2 = 1.4142135623730951;
}

GaussHermite::GaussHermite(int n) {
  if (n < 2) throw std::invalid_argument("GaussHermite: need at least 2 nodes");
  // Golub-Welsch on the probabilists' Hermite Jacobi matrix: nodes are the
  // eigenvalues, weights the squared first components of the eigenvectors.
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n, n);
  for (int j = 1; j < n; ++j) {
    double b = std::sqrt(static_cast<double>(j));
    jac(j, j - 1) = b;
    jac(j - 1, j) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jac);
  nodes.resize(n);
  weights.resize(n);
  for (int i = 0; i < n; ++i) {
    nodes[i] = es.eigenvalues()[i];
    double v0 = es.eigenvectors()(0, i);
    weights[i] = v0 * v0;
  }
}

namespace {

// All quadrature paths work at part level: the complex field is two
// independent real parts with halved powers, so overlaps double.
struct PartScaling {
  int parts;
  double t_z, v, sigma2;
  Channel ch_part;  // channel with per-part noise power
};

PartScaling part_scaling(const Channel& ch, double t_z, double v, Field field) {
  PartScaling s;
  s.parts = field_parts(field);
  s.t_z = t_z / s.parts;
  s.v = v / s.parts;
  s.sigma2 = ch.sigma2 / s.parts;
  s.ch_part = ch;
  s.ch_part.sigma2 = s.sigma2;
  return s;
}

double clampv(double v, double floor) { return v > floor ? v : floor; }

}  // namespace

SeState se_init(const ModelSpec& spec) {
  int layers = spec.num_layers();
  SeState st;
  std::vector<double> chain = signal_power_chain(spec);
  st.t_x.assign(chain.begin(), chain.begin() + layers);
  st.t_z = pre_channel_power_chain(spec);
  st.v.assign(layers, 0.0);
  st.q.assign(layers, 0.0);
  st.sigma.assign(layers, 0.0);
  st.d.assign(layers, 0.0);  // uninformed start: V^(l)(1) = T_Z^(l)
  return st;
}

double se_adc_vtilde(double t_z, double v, double sigma2, int bits, double delta,
                     Field field, const QuadratureSpec& quad) {
  int parts = field_parts(field);
  Channel ch = Channel::quantized_awgn(sigma2, bits, delta);
  double zp_var = std::max(0.0, (t_z - v) / parts);  // variance of the Z pseudo-mean
  double s2 = (v + sigma2) / parts;                  // per-part effective variance
  double s = std::sqrt(s2);
  GaussHermite gh(quad.hermite_nodes);
  double acc = 0.0;
  for (size_t i = 0; i < gh.nodes.size(); ++i) {
    double zc = std::sqrt(zp_var) * gh.nodes[i];
    double inner = 0.0;
    for (int li = 0; li < ch.num_levels(); ++li) {
      double y = ch.level(li);
      TruncatedStdNormal t =
          truncated_std_normal((ch.q_low(y) - zc) / s, (ch.q_up(y) - zc) / s);
      inner += t.prob * t.mean * t.mean;  // = [phi(eta1)-phi(eta2)]^2 / mass
    }
    acc += gh.weights[i] * inner;
  }
  return v - v * v / (sigma2 + v) * acc;
}

double se_q_last(const Channel& ch, double t_z, double v, Field field,
                 const QuadratureSpec& quad) {
  if (ch.type == Channel::Type::Awgn) {
    return (t_z - v) + v * v / (v + ch.sigma2);
  }
  return t_z - se_adc_vtilde(t_z, v, ch.sigma2, ch.bits, ch.delta, field, quad);
}

double se_q_last_generic(const Channel& ch, double t_z, double v, Field field,
                         const QuadratureSpec& quad) {
  PartScaling s = part_scaling(ch, t_z, v, field);
  GaussHermite gh(quad.hermite_nodes);
  double zp_std = std::sqrt(std::max(0.0, s.t_z - s.v));
  double q_part = 0.0;
  for (size_t i = 0; i < gh.nodes.size(); ++i) {
    double zc = zp_std * gh.nodes[i];
    PseudoGaussian zv{cplx{zc, 0.0}, s.v};
    double inner = 0.0;
    if (ch.quantized()) {
      for (int li = 0; li < s.ch_part.num_levels(); ++li) {
        double y = s.ch_part.level(li);
        IntervalPosterior ip = interval_posterior(zc, s.v, s.sigma2,
                                                  s.ch_part.q_low(y), s.ch_part.q_up(y));
        if (ip.prob <= 0.0) continue;
        Moments m = output_moments_last(cplx{y, 0.0}, zv, s.ch_part, Field::Real);
        inner += ip.prob * m.mean.real() * m.mean.real();
      }
    } else {
      double y_std = std::sqrt(s.v + s.sigma2);
      for (size_t j = 0; j < gh.nodes.size(); ++j) {
        double y = zc + y_std * gh.nodes[j];
        Moments m = output_moments_last(cplx{y, 0.0}, zv, s.ch_part, Field::Real);
        inner += gh.weights[j] * m.mean.real() * m.mean.real();
      }
    }
    q_part += gh.weights[i] * inner;
  }
  return s.parts * q_part;
}

double se_q_mid(const Channel& ch, double t_z, double v, double sigma_next,
                Field field, const QuadratureSpec& quad) {
  if (ch.type == Channel::Type::Awgn) {
    double g = sigma_next + ch.sigma2;
    double c = v * g / (v + g);
    return (t_z - v) + c * c * (v + g) / (g * g);
  }
  return se_q_mid_generic(ch, t_z, v, sigma_next, field, quad);
}

double se_q_mid_generic(const Channel& ch, double t_z, double v, double sigma_next,
                        Field field, const QuadratureSpec& quad) {
  PartScaling s = part_scaling(ch, t_z, v, field);
  double sig_p = sigma_next / s.parts;
  GaussHermite gh(quad.hermite_nodes);
  double zp_std = std::sqrt(std::max(0.0, s.t_z - s.v));
  double q_part = 0.0;
  for (size_t i = 0; i < gh.nodes.size(); ++i) {
    double zc = zp_std * gh.nodes[i];
    PseudoGaussian zv{cplx{zc, 0.0}, s.v};
    double inner = 0.0;
    if (ch.quantized()) {
      // x discrete: enumerate codebook outcomes, Gauss-Hermite over the
      // pseudo-prior noise around each outcome.
      for (int li = 0; li < s.ch_part.num_levels(); ++li) {
        double x = s.ch_part.level(li);
        IntervalPosterior ip = interval_posterior(zc, s.v, s.sigma2,
                                                  s.ch_part.q_low(x), s.ch_part.q_up(x));
        if (ip.prob <= 0.0) continue;
        double e2 = 0.0;
        for (size_t j = 0; j < gh.nodes.size(); ++j) {
          double r = x + std::sqrt(sig_p) * gh.nodes[j];
          Moments m = output_moments_mid({cplx{r, 0.0}, sig_p}, zv, s.ch_part, Field::Real);
          e2 += gh.weights[j] * m.mean.real() * m.mean.real();
        }
        inner += ip.prob * e2;
      }
    } else {
      // x = z + n continuous: R | Z ~ N(Z, v + sigma2 + sigma_next)
      double r_std = std::sqrt(s.v + s.sigma2 + sig_p);
      for (size_t j = 0; j < gh.nodes.size(); ++j) {
        double r = zc + r_std * gh.nodes[j];
        Moments m = output_moments_mid({cplx{r, 0.0}, sig_p}, zv, s.ch_part, Field::Real);
        inner += gh.weights[j] * m.mean.real() * m.mean.real();
      }
    }
    q_part += gh.weights[i] * inner;
  }
  return s.parts * q_part;
}

double se_d_first(const Prior& prior, double sigma, Field field,
                  const QuadratureSpec& quad) {
  if (prior.type == Prior::Type::Gaussian) {
    double s2 = prior.variance;
    return s2 * s2 / (s2 + sigma);
  }
  (void)field;  // the QPSK tanh form is field-invariant
  double gamma = 1.0 / sigma;
  GaussHermite gh(quad.hermite_nodes);
  double acc = 0.0;
  for (size_t i = 0; i < gh.nodes.size(); ++i)
    acc += gh.weights[i] * std::tanh(gamma + std::sqrt(gamma) * gh.nodes[i]);
  return acc;
}

double se_d_mid(const Channel& ch, double t_z_prev, double v_prev, double sigma,
                Field field, const QuadratureSpec& quad) {
  if (ch.type == Channel::Type::Awgn) {
    double p = v_prev + ch.sigma2;
    double c = p * sigma / (p + sigma);
    return (t_z_prev - v_prev) + c * c * (p + sigma) / (sigma * sigma);
  }
  return se_d_mid_generic(ch, t_z_prev, v_prev, sigma, field, quad);
}

double se_d_mid_generic(const Channel& ch, double t_z_prev, double v_prev,
                        double sigma, Field field, const QuadratureSpec& quad) {
  PartScaling s = part_scaling(ch, t_z_prev, v_prev, field);
  double sig_p = sigma / s.parts;
  GaussHermite gh(quad.hermite_nodes);
  double zp_std = std::sqrt(std::max(0.0, s.t_z - s.v));
  double d_part = 0.0;
  for (size_t i = 0; i < gh.nodes.size(); ++i) {
    double zc = zp_std * gh.nodes[i];
    PseudoGaussian zv{cplx{zc, 0.0}, s.v};
    double inner = 0.0;
    if (ch.quantized()) {
      for (int li = 0; li < s.ch_part.num_levels(); ++li) {
        double x = s.ch_part.level(li);
        IntervalPosterior ip = interval_posterior(zc, s.v, s.sigma2,
                                                  s.ch_part.q_low(x), s.ch_part.q_up(x));
        if (ip.prob <= 0.0) continue;
        double e2 = 0.0;
        for (size_t j = 0; j < gh.nodes.size(); ++j) {
          double r = x + std::sqrt(sig_p) * gh.nodes[j];
          Moments m = input_moments_mid({cplx{r, 0.0}, sig_p}, zv, s.ch_part, Field::Real);
          e2 += gh.weights[j] * m.mean.real() * m.mean.real();
        }
        inner += ip.prob * e2;
      }
    } else {
      double r_std = std::sqrt(s.v + s.sigma2 + sig_p);
      for (size_t j = 0; j < gh.nodes.size(); ++j) {
        double r = zc + r_std * gh.nodes[j];
        Moments m = input_moments_mid({cplx{r, 0.0}, sig_p}, zv, s.ch_part, Field::Real);
        inner += gh.weights[j] * m.mean.real() * m.mean.real();
      }
    }
    d_part += gh.weights[i] * inner;
  }
  return s.parts * d_part;
}

void se_backward_step(SeState& st, const ModelSpec& spec, const QuadratureSpec& quad) {
  int layers = spec.num_layers();
  bool clamped = false;
  for (int l = layers - 1; l >= 0; --l) {
    const Channel& ch = spec.layers[l].channel;
    double alpha = spec.layers[l].alpha();
    st.v[l] = clampv((st.t_x[l] - st.d[l]) / alpha, 1e-14 * st.t_z[l]);
    if (l == layers - 1)
      st.q[l] = se_q_last(ch, st.t_z[l], st.v[l], spec.field, quad);
    else
      st.q[l] = se_q_mid(ch, st.t_z[l], st.v[l], st.sigma[l + 1], spec.field, quad);
    double den = st.v[l] - st.t_z[l] + st.q[l];
    double floor = 1e-12 * st.t_z[l];
    if (den < floor) {
      den = floor;
      clamped = true;
    }
    st.sigma[l] = st.v[l] * st.v[l] / den;
  }
  st.clamp_streak = clamped ? st.clamp_streak + 1 : 0;
}

void se_forward_step(SeState& st, const ModelSpec& spec, const QuadratureSpec& quad) {
  int layers = spec.num_layers();
  // Layer l > 1 consumes the (Z, V) pair refreshed at layer l-1 within the
  // same sweep, so V here is rebuilt from the d just computed below.
  double v_prev = 0.0;
  for (int l = 0; l < layers; ++l) {
    if (l == 0)
      st.d[l] = se_d_first(spec.prior, st.sigma[l], spec.field, quad);
    else
      st.d[l] = se_d_mid(spec.layers[l - 1].channel, st.t_z[l - 1], v_prev,
                         st.sigma[l], spec.field, quad);
    v_prev = clampv((st.t_x[l] - st.d[l]) / spec.layers[l].alpha(), 1e-14 * st.t_z[l]);
  }
  ++st.iteration;
}

SeTrace se_run(const ModelSpec& spec, int max_iters, const QuadratureSpec& quad) {
  SeTrace trace;
  SeState st = se_init(spec);
  double prev_d1 = 0.0;
  for (int t = 0; t < max_iters; ++t) {
    se_backward_step(st, spec, quad);
    se_forward_step(st, spec, quad);
    trace.mse.push_back(st.t_x[0] - st.d[0]);
    if (st.clamp_streak > 3) {
      trace.breakdown = true;
      trace.message = "Sigma denominator clamp active for more than 3 consecutive iterations";
      break;
    }
    if (t > 0 && std::abs(st.d[0] - prev_d1) <= 1e-12) break;
    prev_d1 = st.d[0];
  }
  trace.final_state = st;
  return trace;
}

double ser_from_mse(double mse) {
  if (mse < 0.0) throw std::invalid_argument("ser_from_mse: mse must be >= 0");
  // Effective-SNR argument: a hard per-part QPSK decision on x + e with
  // E|e|^2 = mse errs with probability Q(1/sqrt(mse)).
  double arg = mse > 0.0 ? 1.0 / std::sqrt(mse) : std::numeric_limits<double>::infinity();
  double qv = norm_tail(arg);
  return 2.0 * qv - qv * qv;
}

}  // namespace mlgamp
