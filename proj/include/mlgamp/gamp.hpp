#pragma once

#include "mlgamp/model.hpp"

namespace mlgamp {

struct GampOptions {
  int max_iters = 30;
  double damping = -1.0;  // < 0: auto (1.0 for L <= 2, 0.8 for deeper stacks)
  double variance_floor = 1e-11;
  bool scalar_variance = false;  // collapse per-index variances to layer means
  double stop_tol = 1e-8;        // on per-symbol change of the signal estimate
  bool early_stop = true;
  bool onsager = true;     // disable only for correction-term diagnostics
  bool zero_init = true;   // Z = 0, V = T_Z; false: constant-offset start Z = prod(alpha), V = 1

  // Undamped by default at every depth: on the shipped configurations
  // damping is never needed for stability, and rho < 1 can settle into a
  // small orbit around the fixed point instead of on it (only z_ext/v_ext
  // are damped).  Pass a rho in [0.7, 1) explicitly for unstable stacks.
  double effective_damping(int) const { return damping >= 0.0 ? damping : 1.0; }
};

/// Per-layer message state.  Output-side vectors (z-domain) have length
/// N_{l+1}; input-side vectors (x-domain) have length N_l.
struct LayerState {
  Vec z_ext;                 // Z^(l)
  Eigen::VectorXd v_ext;     // V^(l)
  Vec s;                     // s^(l)
  Vec r;                     // R^(l)
  Eigen::VectorXd sigma;     // Sigma^(l)
  Vec m_hat;                 // input-side posterior mean
  Eigen::VectorXd v_hat;     // input-side posterior variance
};

struct GampState {
  std::vector<LayerState> layers;
  int iteration = 0;
};

struct GampTrace {
  std::vector<Vec> m_hat_first;         // signal estimate after each iteration
  std::vector<std::vector<double>> mean_v;      // layer means of V per iteration
  std::vector<std::vector<double>> mean_sigma;  // layer means of Sigma per iteration
  bool converged = false;
  bool diverged = false;
  int iterations = 0;
};

GampState init_state(const ModelSpec& spec, const Instance& inst,
                     const GampOptions& opts);

/// One backward sweep l = L..1: output-side posterior moments, s, tau,
/// then (R, Sigma).  Layers below L consume the (R, Sigma) produced at
/// layer l+1 within this same sweep.
void backward_sweep(GampState& st, const ModelSpec& spec, const Instance& inst,
                    const GampOptions& opts);

/// One forward sweep l = 1..L: input-side posterior moments, then damped
/// (Z, V) with the correction term.  Layers above 1 consume the (Z, V)
/// produced at layer l-1 within this same sweep.
void forward_sweep(GampState& st, const ModelSpec& spec, const Instance& inst,
                   const GampOptions& opts);

GampTrace run(const ModelSpec& spec, const Instance& inst, const GampOptions& opts);

}  // namespace mlgamp
