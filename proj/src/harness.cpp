#include "mlgamp/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <thread>

#include "mlgamp/denoisers.hpp"

namespace mlgamp {

double nmse(const Vec& est, const Vec& truth) {
  double denom = truth.squaredNorm();
  if (denom == 0.0) throw std::invalid_argument("nmse: zero reference signal");
  return (est - truth).squaredNorm() / denom;
}

double ser_qpsk(const Vec& est, const Vec& truth, Field field) {
  if (est.size() != truth.size()) throw std::invalid_argument("ser_qpsk: size mismatch");
  int errors = 0;
  for (int i = 0; i < est.size(); ++i) {
    bool bad = std::signbit(est[i].real()) != std::signbit(truth[i].real());
    if (field == Field::Complex)
      bad = bad || std::signbit(est[i].imag()) != std::signbit(truth[i].imag());
    errors += bad;
  }
  return static_cast<double>(errors) / est.size();
}

Vec brute_force_posterior(const ModelSpec& spec, const Instance& inst) {
  if (spec.prior.type != Prior::Type::Qpsk)
    throw std::invalid_argument("brute_force_posterior: QPSK prior required");
  int layers = spec.num_layers();
  bool quantized_last = spec.layers.back().channel.quantized();
  for (int l = 0; l < layers; ++l) {
    const Channel& ch = spec.layers[l].channel;
    if (ch.quantized() && l != layers - 1)
      throw std::invalid_argument("brute_force_posterior: unsupported channel");
    if (quantized_last && l != layers - 1 && ch.sigma2 != 0.0)
      throw std::invalid_argument(
          "brute_force_posterior: quantized output needs noiseless inner layers");
  }

  int parts = field_parts(spec.field);
  int n1 = spec.n_signal();
  int bits_total = parts * n1;
  if (bits_total > 24)
    throw std::invalid_argument("brute_force_posterior: constellation too large");

  Mat h_eff = inst.matrices[0];
  for (int l = 1; l < layers; ++l) h_eff = inst.matrices[l] * h_eff;

  int m = spec.n_obs();
  Eigen::MatrixXcd cov;  // effective noise covariance for the AWGN chain
  Eigen::MatrixXcd cov_inv;
  if (!quantized_last) {
    cov = Eigen::MatrixXcd::Zero(m, m);
    Mat tail = Mat::Identity(m, m);  // H^(L) ... H^(l+1)
    for (int l = layers - 1; l >= 0; --l) {
      cov += spec.layers[l].channel.sigma2 * (tail * tail.adjoint());
      tail = tail * inst.matrices[l];
    }
    cov += 1e-14 * Eigen::MatrixXcd::Identity(m, m);
    cov_inv = cov.inverse();
  }

  double a = 1.0 / std::sqrt(static_cast<double>(parts));
  std::vector<double> logw(static_cast<size_t>(1) << bits_total);
  std::vector<Vec> points(logw.size());
  const Channel& last = spec.layers.back().channel;
  double part_sigma2 = last.sigma2 / parts;
  double part_std = std::sqrt(std::max(part_sigma2, 1e-300));

  for (size_t idx = 0; idx < logw.size(); ++idx) {
    Vec x(n1);
    for (int i = 0; i < n1; ++i) {
      double re = (idx >> (parts * i)) & 1 ? a : -a;
      double im = parts == 2 ? ((idx >> (parts * i + 1)) & 1 ? a : -a) : 0.0;
      x[i] = {re, im};
    }
    Vec mu = h_eff * x;
    double lw = 0.0;
    if (quantized_last) {
      for (int r = 0; r < m; ++r) {
        double mus[2] = {mu[r].real(), mu[r].imag()};
        double ys[2] = {inst.y[r].real(), inst.y[r].imag()};
        for (int p = 0; p < parts; ++p) {
          TruncatedStdNormal t = truncated_std_normal(
              (last.q_low(ys[p]) - mus[p]) / part_std,
              (last.q_up(ys[p]) - mus[p]) / part_std);
          lw += std::log(std::max(t.prob, 1e-300));
        }
      }
    } else {
      Vec diff = inst.y - mu;
      cplx quad = diff.adjoint() * (cov_inv * diff);
      // circular complex Gaussian: exp(-d^H C^-1 d); real: exp(-d^T C^-1 d / 2)
      lw = parts == 2 ? -quad.real() : -0.5 * quad.real();
    }
    logw[idx] = lw;
    points[idx] = std::move(x);
  }

  double lmax = *std::max_element(logw.begin(), logw.end());
  double norm = 0.0;
  Vec mean = Vec::Zero(n1);
  for (size_t idx = 0; idx < logw.size(); ++idx) {
    double w = std::exp(logw[idx] - lmax);
    norm += w;
    mean += w * points[idx];
  }
  return mean / norm;
}

namespace {

TrialResult run_trial(const ExperimentConfig& cfg, std::uint64_t seed) {
  Instance inst = sample_instance(cfg.spec, seed);
  GampTrace trace = run(cfg.spec, inst, cfg.opts);
  TrialResult res;
  res.converged = trace.converged;
  res.diverged = trace.diverged;
  for (const Vec& m : trace.m_hat_first) {
    res.nmse.push_back(nmse(m, inst.x0));
    res.ser.push_back(cfg.spec.prior.type == Prior::Type::Qpsk
                          ? ser_qpsk(m, inst.x0, cfg.spec.field)
                          : 0.0);
  }
  return res;
}

std::vector<double> padded_mean(const std::vector<TrialResult>& trials,
                                std::vector<double> TrialResult::*member) {
  size_t len = 0;
  for (const TrialResult& t : trials) len = std::max(len, (t.*member).size());
  std::vector<double> mean(len, 0.0);
  if (len == 0) return mean;
  int counted = 0;
  for (const TrialResult& t : trials) {
    const std::vector<double>& v = t.*member;
    if (v.empty()) continue;
    ++counted;
    for (size_t i = 0; i < len; ++i) mean[i] += i < v.size() ? v[i] : v.back();
  }
  for (double& x : mean) x /= std::max(counted, 1);
  return mean;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  ExperimentResult out;
  out.trials.resize(cfg.trials);

  int jobs = cfg.jobs > 0 ? cfg.jobs
                          : static_cast<int>(std::thread::hardware_concurrency());
  jobs = std::max(1, std::min(jobs, cfg.trials));

  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      int k = next.fetch_add(1);
      if (k >= cfg.trials) return;
      out.trials[k] = run_trial(cfg, cfg.seed + static_cast<std::uint64_t>(k));
    }
  };
  std::vector<std::thread> pool;
  for (int j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();

  out.mean_nmse = padded_mean(out.trials, &TrialResult::nmse);
  out.mean_ser = padded_mean(out.trials, &TrialResult::ser);

  if (cfg.with_se) {
    out.se = se_run(cfg.spec, cfg.opts.max_iters, cfg.quad);
    out.has_se = true;
  }
  return out;
}

}  // namespace mlgamp
