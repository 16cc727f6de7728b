#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mlgamp {

using cplx = std::complex<double>;
using Vec = Eigen::VectorXcd;
using Mat = Eigen::MatrixXcd;

enum class Field { Real, Complex };

/// Number of independent real components per symbol.
inline int field_parts(Field f) { return f == Field::Complex ? 2 : 1; }

struct Prior {
  enum class Type { Qpsk, Gaussian };
  Type type = Type::Qpsk;
  double variance = 1.0;  // Gaussian only; QPSK is unit-energy

  static Prior qpsk() { return {Type::Qpsk, 1.0}; }
  static Prior gaussian(double var) { return {Type::Gaussian, var}; }

  double second_moment() const { return type == Type::Qpsk ? 1.0 : variance; }
  cplx mean() const { return {0.0, 0.0}; }
};

/// Per-layer conditional law P(x^(l+1) | z^(l)): plain AWGN or AWGN
/// followed by a uniform B-bit quantizer applied per real component.
struct Channel {
  enum class Type { Awgn, QuantizedAwgn };
  Type type = Type::Awgn;
  double sigma2 = 0.0;  // total noise power (per-part sigma2/2 in the complex field)
  int bits = 0;
  double delta = 0.0;   // quantization step

  static Channel awgn(double sigma2) { return {Type::Awgn, sigma2, 0, 0.0}; }
  static Channel quantized_awgn(double sigma2, int bits, double delta) {
    return {Type::QuantizedAwgn, sigma2, bits, delta};
  }

  bool quantized() const { return type == Type::QuantizedAwgn; }

  int num_levels() const { return 1 << bits; }
  // Codebook R_B = {(-1/2 + b) * delta : b = -2^B/2 + 1, ..., 2^B/2}
  double level(int idx) const {
    int b = idx - num_levels() / 2 + 1;
    return (b - 0.5) * delta;
  }
  double min_level() const { return level(0); }
  double max_level() const { return level(num_levels() - 1); }
  double q_low(double y) const;
  double q_up(double y) const;
  double quantize(double w) const;
  bool on_grid(double y, double tol = 1e-9) const;
};

struct LayerSpec {
  int n_in = 0;    // N_l
  int n_out = 0;   // N_{l+1}
  Channel channel;

  double alpha() const { return static_cast<double>(n_out) / n_in; }
};

struct ModelSpec {
  std::vector<LayerSpec> layers;
  Prior prior;
  Field field = Field::Complex;

  int num_layers() const { return static_cast<int>(layers.size()); }
  int n_signal() const { return layers.front().n_in; }
  int n_obs() const { return layers.back().n_out; }
};

/// A sampled problem realization. Hidden per-layer signals are kept for
/// layer-wise diagnostics.
struct Instance {
  Vec x0;                   // length N_1, prior-distributed
  std::vector<Mat> matrices;  // H^(l), shape N_{l+1} x N_l
  std::vector<Vec> z;       // z^(l) = H^(l) x^(l)
  std::vector<Vec> x;       // x^(l); x[0] aliases x0, x[L] aliases y
  Vec y;                    // observation, length N_{L+1}
};

std::vector<std::string> validate(const ModelSpec& spec);

Instance sample_instance(const ModelSpec& spec, std::uint64_t seed);

/// sigma2 = t_z * 10^(-snr_db/10), with t_z the analytic pre-channel power.
double snr_to_sigma2(double snr_db, double t_z);

/// Analytic signal powers down the chain: T_X^(1..L+1).  T_X^(1) is the
/// prior power; T_X^(l+1) is the channel-output power under a Gaussian
/// input of variance T_Z^(l) = T_X^(l)/alpha_l.
std::vector<double> signal_power_chain(const ModelSpec& spec);

/// T_Z^(l) = T_X^(l)/alpha_l for l = 1..L.
std::vector<double> pre_channel_power_chain(const ModelSpec& spec);

/// Default quantizer step: span +-3 standard deviations of the pre-ADC
/// per-part signal with 2^B levels.
double default_quantizer_delta(double t_z, double sigma2, int bits, Field field);

}  // namespace mlgamp
