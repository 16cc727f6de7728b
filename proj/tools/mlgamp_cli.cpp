#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "mlgamp/harness.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void check_keys(const json& obj, const std::string& where,
                std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || it.key() == k;
    if (!ok) throw ConfigError("unknown key \"" + it.key() + "\" in " + where);
  }
}

struct SweepSpec {
  std::string key;  // "bits" or "snr_db"
  int layer = -1;   // 0-based, default last
  std::vector<json> values;
};

struct CliConfig {
  json model_block;  // kept raw: channels are re-resolved per sweep value
  mlgamp::ExperimentConfig exp;
  std::optional<std::uint64_t> file_seed;
  std::optional<SweepSpec> sweep;
  std::string out_path;
  bool early_stop = true;
};

double require_number(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError("key \"" + key + "\" must be a number");
  return v.get<double>();
}

mlgamp::ModelSpec resolve_model(const json& model) {
  check_keys(model, "model", {"layers", "prior", "field"});
  mlgamp::ModelSpec spec;

  std::string field = model.value("field", std::string("complex"));
  if (field == "complex")
    spec.field = mlgamp::Field::Complex;
  else if (field == "real")
    spec.field = mlgamp::Field::Real;
  else
    throw ConfigError("key \"field\" must be \"real\" or \"complex\"");

  if (model.contains("prior")) {
    const json& p = model["prior"];
    if (p.is_string()) {
      if (p != "qpsk") throw ConfigError("key \"prior\" must be \"qpsk\" or an object");
      spec.prior = mlgamp::Prior::qpsk();
    } else {
      check_keys(p, "prior", {"type", "variance"});
      std::string t = p.value("type", std::string("qpsk"));
      if (t == "qpsk")
        spec.prior = mlgamp::Prior::qpsk();
      else if (t == "gaussian")
        spec.prior = mlgamp::Prior::gaussian(require_number(p.at("variance"), "variance"));
      else
        throw ConfigError("key \"prior.type\" must be \"qpsk\" or \"gaussian\"");
    }
  }

  if (!model.contains("layers") || !model["layers"].is_array() || model["layers"].empty())
    throw ConfigError("key \"layers\" must be a non-empty array");

  // Channels are resolved front to back: the SNR -> noise-power mapping for
  // layer l needs the analytic signal power leaving layer l-1.
  double t_x = 1.0;  // overwritten below once the prior is known
  t_x = spec.prior.second_moment();
  for (const json& lj : model["layers"]) {
    check_keys(lj, "layer", {"rows", "cols", "channel"});
    mlgamp::LayerSpec ls;
    ls.n_out = static_cast<int>(require_number(lj.at("rows"), "rows"));
    ls.n_in = static_cast<int>(require_number(lj.at("cols"), "cols"));
    if (ls.n_in < 1 || ls.n_out < 1) throw ConfigError("key \"rows\"/\"cols\" must be >= 1");
    double t_z = t_x / ls.alpha();

    const json& cj = lj.at("channel");
    check_keys(cj, "channel", {"type", "snr_db", "sigma2", "bits", "delta"});
    bool has_snr = cj.contains("snr_db");
    bool has_sigma2 = cj.contains("sigma2");
    if (has_snr == has_sigma2)
      throw ConfigError("channel requires exactly one of \"snr_db\" or \"sigma2\"");
    double sigma2 = has_snr ? mlgamp::snr_to_sigma2(require_number(cj["snr_db"], "snr_db"), t_z)
                            : require_number(cj["sigma2"], "sigma2");
    if (sigma2 < 0.0) throw ConfigError("key \"sigma2\" must be >= 0");

    std::string type = cj.value("type", std::string("awgn"));
    bool bits_null = cj.contains("bits") && cj["bits"].is_null();
    if (type == "awgn" || bits_null) {
      ls.channel = mlgamp::Channel::awgn(sigma2);
    } else if (type == "quantized_awgn") {
      if (!cj.contains("bits")) throw ConfigError("quantized channel requires key \"bits\"");
      int bits = static_cast<int>(require_number(cj["bits"], "bits"));
      if (bits < 1) throw ConfigError("key \"bits\" must be >= 1");
      double delta = cj.contains("delta")
                         ? require_number(cj["delta"], "delta")
                         : mlgamp::default_quantizer_delta(t_z, sigma2, bits, spec.field);
      ls.channel = mlgamp::Channel::quantized_awgn(sigma2, bits, delta);
    } else {
      throw ConfigError("key \"channel.type\" must be \"awgn\" or \"quantized_awgn\"");
    }

    spec.layers.push_back(ls);
    std::vector<mlgamp::LayerSpec> done = spec.layers;
    mlgamp::ModelSpec partial{done, spec.prior, spec.field};
    t_x = mlgamp::signal_power_chain(partial).back();
  }

  std::vector<std::string> errors = mlgamp::validate(spec);
  if (!errors.empty()) throw ConfigError(errors.front());
  return spec;
}

CliConfig parse_config(const json& root) {
  check_keys(root, "config root", {"model", "run", "sweep", "output"});
  if (!root.contains("model")) throw ConfigError("missing key \"model\"");

  CliConfig cfg;
  cfg.model_block = root["model"];
  cfg.exp.spec = resolve_model(cfg.model_block);

  if (root.contains("run")) {
    const json& r = root["run"];
    check_keys(r, "run",
               {"trials", "iters", "damping", "seed", "scalar_variance", "stop_tol",
                "early_stop", "jobs"});
    cfg.exp.trials = r.value("trials", 1);
    cfg.exp.opts.max_iters = r.value("iters", 30);
    if (r.contains("damping") && !r["damping"].is_null())
      cfg.exp.opts.damping = require_number(r["damping"], "damping");
    if (r.contains("seed")) cfg.file_seed = r["seed"].get<std::uint64_t>();
    cfg.exp.opts.scalar_variance = r.value("scalar_variance", false);
    cfg.exp.opts.stop_tol = r.value("stop_tol", 1e-8);
    cfg.early_stop = r.value("early_stop", true);
    cfg.exp.jobs = r.value("jobs", 0);
    if (cfg.exp.trials < 1 || cfg.exp.opts.max_iters < 1)
      throw ConfigError("key \"trials\"/\"iters\" must be >= 1");
  }

  if (root.contains("sweep")) {
    const json& s = root["sweep"];
    check_keys(s, "sweep", {"key", "layer", "values"});
    SweepSpec sw;
    sw.key = s.at("key").get<std::string>();
    if (sw.key != "bits" && sw.key != "snr_db")
      throw ConfigError("key \"sweep.key\" must be \"bits\" or \"snr_db\"");
    sw.layer = s.value("layer", static_cast<int>(cfg.exp.spec.layers.size())) - 1;
    if (sw.layer < 0 || sw.layer >= static_cast<int>(cfg.exp.spec.layers.size()))
      throw ConfigError("key \"sweep.layer\" out of range");
    if (!s.contains("values") || !s["values"].is_array() || s["values"].empty())
      throw ConfigError("key \"sweep.values\" must be a non-empty array");
    for (const json& v : s["values"]) sw.values.push_back(v);
    cfg.sweep = sw;
  }

  if (root.contains("output")) {
    const json& o = root["output"];
    check_keys(o, "output", {"path", "format"});
    cfg.out_path = o.value("path", std::string());
    std::string fmt = o.value("format", std::string("csv"));
    if (fmt != "csv") throw ConfigError("key \"output.format\" must be \"csv\"");
  }
  return cfg;
}

json apply_sweep_value(const json& model_block, const SweepSpec& sw, const json& value) {
  json m = model_block;
  json& ch = m["layers"][sw.layer]["channel"];
  if (sw.key == "bits") {
    ch["bits"] = value;
    ch["type"] = value.is_null() ? "awgn" : "quantized_awgn";
  } else {
    ch.erase("sigma2");
    ch["snr_db"] = value;
  }
  return m;
}

std::string sweep_suffix(const SweepSpec& sw, const json& value) {
  std::string tag = sw.key == "bits" ? "B" : "snr";
  if (value.is_null()) return "_" + tag + "inf";
  std::ostringstream os;
  os << "_" << tag << value;
  std::string s = os.str();
  for (char& c : s)
    if (c == '.') c = 'p';
  return s;
}

std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

double to_db(double x) { return 10.0 * std::log10(std::max(x, 1e-300)); }

json resolved_config_echo(const CliConfig& cfg, const mlgamp::ModelSpec& spec) {
  json out;
  json layers = json::array();
  for (const mlgamp::LayerSpec& ls : spec.layers) {
    json ch{{"sigma2", ls.channel.sigma2}};
    if (ls.channel.quantized()) {
      ch["type"] = "quantized_awgn";
      ch["bits"] = ls.channel.bits;
      ch["delta"] = ls.channel.delta;
    } else {
      ch["type"] = "awgn";
    }
    layers.push_back({{"rows", ls.n_out}, {"cols", ls.n_in}, {"channel", ch}});
  }
  out["model"] = {
      {"layers", layers},
      {"field", spec.field == mlgamp::Field::Complex ? "complex" : "real"},
      {"prior", spec.prior.type == mlgamp::Prior::Type::Qpsk
                    ? json("qpsk")
                    : json{{"type", "gaussian"}, {"variance", spec.prior.variance}}}};
  out["run"] = {{"trials", cfg.exp.trials},
                {"iters", cfg.exp.opts.max_iters},
                {"damping", cfg.exp.opts.effective_damping(spec.num_layers())},
                {"seed", cfg.exp.seed},
                {"scalar_variance", cfg.exp.opts.scalar_variance},
                {"stop_tol", cfg.exp.opts.stop_tol},
                {"early_stop", cfg.early_stop},
                {"jobs", cfg.exp.jobs}};
  return out;
}

void write_echo(const CliConfig& cfg, const std::string& out_path) {
  std::ofstream f(out_path + ".config.json");
  f << resolved_config_echo(cfg, cfg.exp.spec).dump(2) << "\n";
}

int cmd_run_one(CliConfig cfg, const std::string& out_path) {
  cfg.exp.opts.early_stop = cfg.early_stop;
  cfg.exp.with_se = true;
  mlgamp::ExperimentResult res = mlgamp::run_experiment(cfg.exp);

  std::ofstream f(out_path);
  f << "trial,iter,nmse,nmse_db,ser,se_mse,se_mse_db\n";
  size_t iters = res.mean_nmse.size();
  bool diverged = false;
  for (int k = 0; k < cfg.exp.trials; ++k) {
    const mlgamp::TrialResult& tr = res.trials[k];
    diverged = diverged || tr.diverged;
    for (size_t t = 0; t < iters; ++t) {
      double n = tr.nmse.empty() ? 1.0
                                 : tr.nmse[std::min(t, tr.nmse.size() - 1)];
      double s = tr.ser.empty() ? 1.0 : tr.ser[std::min(t, tr.ser.size() - 1)];
      double se = res.se.mse.empty()
                      ? 0.0
                      : res.se.mse[std::min(t, res.se.mse.size() - 1)];
      f << k + 1 << "," << t + 1 << "," << fmt17(n) << "," << fmt17(to_db(n)) << ","
        << fmt17(s) << "," << fmt17(se) << "," << fmt17(to_db(se)) << "\n";
    }
  }
  f.close();
  write_echo(cfg, out_path);

  double final_nmse = res.mean_nmse.empty() ? 1.0 : res.mean_nmse.back();
  std::cout << out_path << ": final mean NMSE " << fmt17(to_db(final_nmse))
            << " dB after " << iters << " iterations\n";
  if (diverged) {
    std::cerr << "warning: at least one trial diverged; CSV rows padded\n";
    return 2;
  }
  return 0;
}

int cmd_se_one(const CliConfig& cfg, const std::string& out_path) {
  mlgamp::SeTrace trace = mlgamp::se_run(cfg.exp.spec, cfg.exp.opts.max_iters, cfg.exp.quad);
  int layers = cfg.exp.spec.num_layers();

  std::ofstream f(out_path);
  f << "iter,mse,mse_db";
  for (const char* name : {"v", "q", "sigma", "d"})
    for (int l = 1; l <= layers; ++l) f << "," << name << l;
  f << "\n";
  // Per-layer columns reflect the final state; the mse column is the
  // iteration-by-iteration trace.
  const mlgamp::SeState& st = trace.final_state;
  for (size_t t = 0; t < trace.mse.size(); ++t) {
    f << t + 1 << "," << fmt17(trace.mse[t]) << "," << fmt17(to_db(trace.mse[t]));
    bool last = t + 1 == trace.mse.size();
    for (const std::vector<double>* col : {&st.v, &st.q, &st.sigma, &st.d})
      for (int l = 0; l < layers; ++l) f << "," << (last ? fmt17((*col)[l]) : "");
    f << "\n";
  }
  if (trace.breakdown) f << "# breakdown: " << trace.message << "\n";
  f.close();
  write_echo(cfg, out_path);

  double final_mse = trace.mse.empty() ? 1.0 : trace.mse.back();
  std::cout << out_path << ": fixed-point MSE " << fmt17(to_db(final_mse))
            << " dB after " << trace.mse.size() << " iterations\n";
  return trace.breakdown ? 2 : 0;
}

int cmd_compare_one(CliConfig cfg, const std::string& out_path, double threshold_db) {
  cfg.early_stop = false;  // aligned iteration-by-iteration comparison
  cfg.exp.opts.early_stop = false;
  cfg.exp.with_se = true;
  mlgamp::ExperimentResult res = mlgamp::run_experiment(cfg.exp);

  std::ofstream f(out_path);
  f << "iter,nmse_db,se_mse_db,gap_db\n";
  size_t iters = std::min(res.mean_nmse.size(), res.se.mse.size());
  double max_gap = 0.0;
  for (size_t t = 0; t < iters; ++t) {
    double gap = std::abs(to_db(res.mean_nmse[t]) - to_db(res.se.mse[t]));
    max_gap = std::max(max_gap, gap);
    f << t + 1 << "," << fmt17(to_db(res.mean_nmse[t])) << ","
      << fmt17(to_db(res.se.mse[t])) << "," << fmt17(gap) << "\n";
  }
  f.close();
  write_echo(cfg, out_path);

  std::cout << out_path << ": max gap " << fmt17(max_gap) << " dB over " << iters
            << " iterations (threshold " << fmt17(threshold_db) << ")\n";
  return max_gap <= threshold_db ? 0 : 2;
}

std::string with_suffix(const std::string& path, const std::string& suffix) {
  fs::path p(path);
  fs::path stem = p.parent_path() / p.stem();
  return stem.string() + suffix + p.extension().string();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-layer GLM estimator: Monte-Carlo runs and the scalar MSE recursion"};
  app.require_subcommand(1);

  std::string config_path, out_path;
  std::optional<std::uint64_t> seed_flag;
  std::optional<int> trials_flag, iters_flag, jobs_flag;
  std::optional<double> damping_flag;
  double threshold_db = 0.5;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config path")->required();
    sub->add_option("--seed", seed_flag, "RNG seed override");
    sub->add_option("--trials", trials_flag, "trial count override");
    sub->add_option("--iters", iters_flag, "iteration cap override");
    sub->add_option("--damping", damping_flag, "damping factor override");
    sub->add_option("--out", out_path, "output CSV path");
    sub->add_option("--jobs", jobs_flag, "parallel trial workers");
  };
  CLI::App* run_cmd = app.add_subcommand("run", "Monte-Carlo estimation runs");
  CLI::App* se_cmd = app.add_subcommand("se", "scalar MSE recursion only");
  CLI::App* cmp_cmd = app.add_subcommand("compare", "runs vs recursion, per-iteration gap");
  add_common(run_cmd);
  add_common(se_cmd);
  add_common(cmp_cmd);
  cmp_cmd->add_option("--threshold-db", threshold_db, "max allowed gap in dB");

  CLI11_PARSE(app, argc, argv);

  json root;
  CliConfig cfg;
  try {
    std::ifstream f(config_path);
    if (!f) throw ConfigError("cannot open config file " + config_path);
    root = json::parse(f);
    cfg = parse_config(root);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  // Seed precedence: flag > config file > MLGAMP_SEED env > 0.
  if (seed_flag) {
    cfg.exp.seed = *seed_flag;
  } else if (cfg.file_seed) {
    cfg.exp.seed = *cfg.file_seed;
  } else if (const char* env = std::getenv("MLGAMP_SEED")) {
    cfg.exp.seed = std::strtoull(env, nullptr, 10);
  }
  if (trials_flag) cfg.exp.trials = *trials_flag;
  if (iters_flag) cfg.exp.opts.max_iters = *iters_flag;
  if (damping_flag) cfg.exp.opts.damping = *damping_flag;
  if (jobs_flag) cfg.exp.jobs = *jobs_flag;

  std::string cmd = run_cmd->parsed() ? "run" : se_cmd->parsed() ? "se" : "compare";
  if (out_path.empty()) out_path = cfg.out_path.empty() ? cmd + "_out.csv" : cfg.out_path;

  auto dispatch = [&](const CliConfig& c, const std::string& path) -> int {
    if (cmd == "run") return cmd_run_one(c, path);
    if (cmd == "se") return cmd_se_one(c, path);
    return cmd_compare_one(c, path, threshold_db);
  };

  try {
    if (!cfg.sweep) return dispatch(cfg, out_path);
    int worst = 0;
    for (const json& value : cfg.sweep->values) {
      CliConfig point = cfg;
      point.model_block = apply_sweep_value(cfg.model_block, *cfg.sweep, value);
      point.exp.spec = resolve_model(point.model_block);
      point.sweep.reset();
      worst = std::max(worst, dispatch(point, with_suffix(out_path, sweep_suffix(*cfg.sweep, value))));
    }
    return worst;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
