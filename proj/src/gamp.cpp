#include "mlgamp/gamp.hpp"

#include <cmath>
#include <stdexcept>

#include "mlgamp/denoisers.hpp"

namespace mlgamp {

namespace {

Eigen::MatrixXd abs2(const Mat& h) { return h.cwiseAbs2(); }

bool finite(const Vec& v) { return v.allFinite(); }
bool finite(const Eigen::VectorXd& v) { return v.allFinite(); }

}  // namespace

GampState init_state(const ModelSpec& spec, const Instance& inst,
                     const GampOptions& opts) {
  std::vector<std::string> errors = validate(spec);
  if (!errors.empty()) throw std::invalid_argument("init_state: invalid spec: " + errors.front());
  if (static_cast<int>(inst.matrices.size()) != spec.num_layers())
    throw std::invalid_argument("init_state: instance does not match spec");

  GampState st;
  st.layers.resize(spec.num_layers());
  std::vector<double> t_z = pre_channel_power_chain(spec);
  std::vector<double> t_x = signal_power_chain(spec);
  double alpha_prod = 1.0;
  for (int l = 0; l < spec.num_layers(); ++l) {
    const LayerSpec& ls = spec.layers[l];
    alpha_prod *= ls.alpha();
    LayerState& lay = st.layers[l];
    lay.z_ext = Vec::Constant(ls.n_out, opts.zero_init ? cplx{0.0, 0.0}
                                                       : cplx{alpha_prod, 0.0});
    lay.v_ext = Eigen::VectorXd::Constant(ls.n_out, opts.zero_init ? t_z[l] : 1.0);
    lay.s = Vec::Zero(ls.n_out);
    lay.r = Vec::Zero(ls.n_in);
    lay.sigma = Eigen::VectorXd::Constant(ls.n_in, t_x[l]);
    lay.m_hat = Vec::Zero(ls.n_in);
    lay.v_hat = Eigen::VectorXd::Constant(ls.n_in, t_x[l]);
  }
  return st;
}

void backward_sweep(GampState& st, const ModelSpec& spec, const Instance& inst,
                    const GampOptions& opts) {
  int layers = spec.num_layers();
  double v_cap = 1.0 / opts.variance_floor;
  for (int l = layers - 1; l >= 0; --l) {
    LayerState& lay = st.layers[l];
    const Channel& ch = spec.layers[l].channel;
    int n_out = spec.layers[l].n_out;

    Vec z_tilde(n_out);
    Eigen::VectorXd v_tilde(n_out);
    for (int a = 0; a < n_out; ++a) {
      PseudoGaussian zv{lay.z_ext[a], lay.v_ext[a]};
      Moments m;
      if (l == layers - 1) {
        m = output_moments_last(inst.y[a], zv, ch, spec.field);
      } else {
        const LayerState& up = st.layers[l + 1];
        m = output_moments_mid({up.r[a], up.sigma[a]}, zv, ch, spec.field);
      }
      z_tilde[a] = m.mean;
      v_tilde[a] = m.variance;
    }

    Eigen::VectorXd tau(n_out);
    for (int a = 0; a < n_out; ++a) {
      double v = lay.v_ext[a];
      lay.s[a] = (z_tilde[a] - lay.z_ext[a]) / v;
      tau[a] = std::clamp((v - v_tilde[a]) / (v * v), 0.0, v_cap);
    }

    Eigen::MatrixXd h2 = abs2(inst.matrices[l]);
    if (opts.scalar_variance) {
      double v_bar = lay.v_ext.mean();
      double tau_bar = std::clamp((v_bar - v_tilde.mean()) / (v_bar * v_bar), 0.0, v_cap);
      double sigma = 1.0 / std::max(tau_bar, opts.variance_floor);
      lay.sigma.setConstant(std::min(sigma, v_cap));
      for (int a = 0; a < n_out; ++a)
        lay.s[a] = (z_tilde[a] - lay.z_ext[a]) / v_bar;
    } else {
      Eigen::VectorXd denom = h2.transpose() * tau;
      for (int i = 0; i < lay.sigma.size(); ++i)
        lay.sigma[i] = std::min(1.0 / std::max(denom[i], opts.variance_floor), v_cap);
    }
    Vec ht_s = inst.matrices[l].adjoint() * lay.s;
    for (int i = 0; i < lay.r.size(); ++i)
      lay.r[i] = lay.m_hat[i] + lay.sigma[i] * ht_s[i];
  }
}

void forward_sweep(GampState& st, const ModelSpec& spec, const Instance& inst,
                   const GampOptions& opts) {
  int layers = spec.num_layers();
  double rho = opts.effective_damping(layers);
  for (int l = 0; l < layers; ++l) {
    LayerState& lay = st.layers[l];
    const LayerSpec& ls = spec.layers[l];
    for (int i = 0; i < ls.n_in; ++i) {
      PseudoGaussian rx{lay.r[i], lay.sigma[i]};
      Moments m;
      if (l == 0) {
        m = input_moments_first(rx, spec.prior, spec.field);
      } else {
        const LayerState& down = st.layers[l - 1];
        m = input_moments_mid(rx, {down.z_ext[i], down.v_ext[i]},
                              spec.layers[l - 1].channel, spec.field);
      }
      lay.m_hat[i] = m.mean;
      lay.v_hat[i] = std::max(m.variance, 0.0);
    }

    Eigen::MatrixXd h2 = abs2(inst.matrices[l]);
    Eigen::VectorXd v_fresh;
    if (opts.scalar_variance) {
      v_fresh = Eigen::VectorXd::Constant(ls.n_out, lay.v_hat.mean() / ls.alpha());
    } else {
      v_fresh = h2 * lay.v_hat;
    }
    lay.v_ext = rho * v_fresh + (1.0 - rho) * lay.v_ext;
    for (int a = 0; a < ls.n_out; ++a)
      lay.v_ext[a] = std::max(lay.v_ext[a], opts.variance_floor);

    // The correction term uses the damped variance.
    Vec z_fresh = inst.matrices[l] * lay.m_hat;
    if (opts.onsager)
      for (int a = 0; a < ls.n_out; ++a) z_fresh[a] -= lay.v_ext[a] * lay.s[a];
    lay.z_ext = rho * z_fresh + (1.0 - rho) * lay.z_ext;
  }
  ++st.iteration;
}

GampTrace run(const ModelSpec& spec, const Instance& inst, const GampOptions& opts) {
  GampTrace trace;
  GampState st = init_state(spec, inst, opts);
  Vec prev = st.layers[0].m_hat;
  for (int t = 0; t < opts.max_iters; ++t) {
    backward_sweep(st, spec, inst, opts);
    forward_sweep(st, spec, inst, opts);

    bool ok = true;
    for (const LayerState& lay : st.layers)
      ok = ok && finite(lay.z_ext) && finite(lay.v_ext) && finite(lay.m_hat) &&
           finite(lay.v_hat) && finite(lay.r) && finite(lay.sigma);
    if (!ok) {
      trace.diverged = true;
      break;
    }

    trace.m_hat_first.push_back(st.layers[0].m_hat);
    std::vector<double> mv, ms;
    for (const LayerState& lay : st.layers) {
      mv.push_back(lay.v_ext.mean());
      ms.push_back(lay.sigma.mean());
    }
    trace.mean_v.push_back(std::move(mv));
    trace.mean_sigma.push_back(std::move(ms));
    trace.iterations = t + 1;

    double change = (st.layers[0].m_hat - prev).squaredNorm() / spec.n_signal();
    prev = st.layers[0].m_hat;
    if (opts.early_stop && t > 0 && change <= opts.stop_tol) {
      trace.converged = true;
      break;
    }
  }
  return trace;
}

}  // namespace mlgamp
