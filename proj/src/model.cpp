#include "mlgamp/model.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "mlgamp/denoisers.hpp"

namespace mlgamp {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

double Channel::q_low(double y) const {
  return y >= -(num_levels() / 2 - 1) * delta - 1e-12 * delta ? y - delta / 2 : -kInf;
}

double Channel::q_up(double y) const {
  return y <= (num_levels() / 2 - 1) * delta + 1e-12 * delta ? y + delta / 2 : kInf;
}

double Channel::quantize(double w) const {
  int half = num_levels() / 2;
  int b = static_cast<int>(std::ceil(w / delta));
  b = std::max(-half + 1, std::min(half, b));
  return (b - 0.5) * delta;
}

bool Channel::on_grid(double y, double tol) const {
  if (delta <= 0.0) return false;
  double b = std::round(y / delta + 0.5);
  if (b < -num_levels() / 2 + 1 || b > num_levels() / 2) return false;
  return std::abs((b - 0.5) * delta - y) <= tol * std::max(1.0, delta);
}

std::vector<std::string> validate(const ModelSpec& spec) {
  std::vector<std::string> errors;
  auto fail = [&](const std::string& msg) { errors.push_back(msg); };

  if (spec.layers.empty()) fail("model must have at least one layer");
  if (spec.prior.type == Prior::Type::Gaussian && !(spec.prior.variance > 0.0))
    fail("prior variance must be positive");

  for (size_t l = 0; l < spec.layers.size(); ++l) {
    const LayerSpec& ls = spec.layers[l];
    std::ostringstream tag;
    tag << "layer " << l + 1 << ": ";
    if (ls.n_in < 1 || ls.n_out < 1) fail(tag.str() + "dimensions must be >= 1");
    if (l + 1 < spec.layers.size() && ls.n_out != spec.layers[l + 1].n_in) {
      std::ostringstream msg;
      msg << tag.str() << "dimension chain broken (n_out=" << ls.n_out
          << " but next n_in=" << spec.layers[l + 1].n_in << ")";
      fail(msg.str());
    }
    const Channel& ch = ls.channel;
    if (ch.sigma2 < 0.0) fail(tag.str() + "noise power must be >= 0");
    if (ch.quantized()) {
      if (ch.bits < 1) fail(tag.str() + "bits must be >= 1");
      if (!(ch.delta > 0.0)) fail(tag.str() + "quantization step must be positive");
    }
  }
  return errors;
}

namespace {

double channel_output_power(const Channel& ch, double t_z, Field field) {
  if (ch.type == Channel::Type::Awgn) return t_z + ch.sigma2;
  int parts = field_parts(field);
  double s2 = (t_z + ch.sigma2) / parts;
  double s = std::sqrt(s2);
  double acc = 0.0;
  for (int i = 0; i < ch.num_levels(); ++i) {
    double y = ch.level(i);
    double p = norm_cdf(ch.q_up(y) / s) - norm_cdf(ch.q_low(y) / s);
    acc += y * y * p;
  }
  return parts * acc;
}

}  // namespace

std::vector<double> signal_power_chain(const ModelSpec& spec) {
  std::vector<double> t_x;
  t_x.push_back(spec.prior.second_moment());
  for (const LayerSpec& ls : spec.layers) {
    double t_z = t_x.back() / ls.alpha();
    t_x.push_back(channel_output_power(ls.channel, t_z, spec.field));
  }
  return t_x;
}

std::vector<double> pre_channel_power_chain(const ModelSpec& spec) {
  std::vector<double> t_x = signal_power_chain(spec);
  std::vector<double> t_z(spec.layers.size());
  for (size_t l = 0; l < spec.layers.size(); ++l) t_z[l] = t_x[l] / spec.layers[l].alpha();
  return t_z;
}

double snr_to_sigma2(double snr_db, double t_z) {
  if (!(t_z > 0.0)) throw std::invalid_argument("snr_to_sigma2: t_z must be positive");
  return t_z * std::pow(10.0, -snr_db / 10.0);
}

double default_quantizer_delta(double t_z, double sigma2, int bits, Field field) {
  double part_std = std::sqrt((t_z + sigma2) / field_parts(field));
  return 6.0 * part_std / (1 << bits);
}

Instance sample_instance(const ModelSpec& spec, std::uint64_t seed) {
  std::vector<std::string> errors = validate(spec);
  if (!errors.empty()) throw std::invalid_argument("sample_instance: invalid spec: " + errors.front());

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  bool complex_field = spec.field == Field::Complex;
  int parts = field_parts(spec.field);

  auto draw_prior = [&]() -> cplx {
    if (spec.prior.type == Prior::Type::Qpsk) {
      double a = 1.0 / std::sqrt(static_cast<double>(parts));
      double re = coin(rng) ? a : -a;
      double im = complex_field ? (coin(rng) ? a : -a) : 0.0;
      return {re, im};
    }
    double part_std = std::sqrt(spec.prior.variance / parts);
    return {part_std * gauss(rng), complex_field ? part_std * gauss(rng) : 0.0};
  };
  auto draw_noise = [&](double sigma2) -> cplx {
    double part_std = std::sqrt(sigma2 / parts);
    return {part_std * gauss(rng), complex_field ? part_std * gauss(rng) : 0.0};
  };

  Instance inst;
  int n1 = spec.n_signal();
  inst.x0.resize(n1);
  for (int i = 0; i < n1; ++i) inst.x0[i] = draw_prior();

  inst.x.push_back(inst.x0);
  for (const LayerSpec& ls : spec.layers) {
    double entry_std = std::sqrt(1.0 / (parts * static_cast<double>(ls.n_out)));
    Mat h(ls.n_out, ls.n_in);
    for (int r = 0; r < ls.n_out; ++r)
      for (int c = 0; c < ls.n_in; ++c)
        h(r, c) = cplx{entry_std * gauss(rng),
                       complex_field ? entry_std * gauss(rng) : 0.0};
    Vec z = h * inst.x.back();

    Vec next(ls.n_out);
    const Channel& ch = ls.channel;
    for (int a = 0; a < ls.n_out; ++a) {
      cplx noisy = z[a] + (ch.sigma2 > 0.0 ? draw_noise(ch.sigma2) : cplx{0.0, 0.0});
      if (ch.quantized()) {
        next[a] = cplx{ch.quantize(noisy.real()),
                       complex_field ? ch.quantize(noisy.imag()) : 0.0};
      } else {
        next[a] = noisy;
      }
    }
    inst.matrices.push_back(std::move(h));
    inst.z.push_back(std::move(z));
    inst.x.push_back(std::move(next));
  }
  inst.y = inst.x.back();
  return inst;
}

}  // namespace mlgamp
