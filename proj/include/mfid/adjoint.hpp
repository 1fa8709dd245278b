#pragma once

// Gradients of a design objective through T iterations of
//   zeta_{t+1} = (1 - eta*tau) zeta_t + eta F(theta, zeta_t)
// computed with a backward adjoint recursion. Only vector-Jacobian products
// of F and G are evaluated; states are checkpointed every `stride` steps and
// segments are recomputed on the way back.

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "mfid/autodiff.hpp"
#include "mfid/mfg.hpp"

namespace mfid {

struct AdjointConfig {
  int T = 0;
  double eta = 1.0;
  double tau = 0.0;
  /// nullopt stores every state ("full cache").
  std::optional<int> checkpoint_stride;

  static int default_stride(int T);
  /// Config with stride ceil(sqrt(T + 1)).
  static AdjointConfig with_default_stride(int T, double eta, double tau);
};

void validate(const AdjointConfig& cfg);

using StateMap = std::function<ad::Var(ad::Tape&, ad::Var theta, ad::Var zeta)>;

/// F and G of the iteration. `update` must return a vector of state_size,
/// `objective` a scalar.
struct IterationProblem {
  std::size_t param_size = 0;
  std::size_t state_size = 0;
  StateMap update;
  StateMap objective;
};

struct AmidDiagnostics {
  double forward_seconds = 0.0;
  double backward_seconds = 0.0;
  /// Most states held in memory at once (checkpoints plus a live segment).
  std::size_t peak_cached_states = 0;
  std::size_t checkpoints = 0;
  std::size_t recomputed_steps = 0;
};

struct AmidResult {
  double objective_value = 0.0;
  std::vector<double> grad_theta;
  std::vector<double> final_logits;
  AmidDiagnostics diagnostics;
};

/// Runs the T updates and evaluates G; no gradient.
std::vector<double> iterate_state(const IterationProblem& p, std::span<const double> theta,
                                  std::span<const double> zeta0, const AdjointConfig& cfg);

AmidResult adjoint_gradient(const IterationProblem& p, std::span<const double> theta,
                            std::span<const double> zeta0, const AdjointConfig& cfg);

/// A gradient map and its inverse, both as tape programs.
struct MirrorMap {
  std::function<ad::Var(ad::Tape&, ad::Var)> forward;
  std::function<ad::Var(ad::Tape&, ad::Var)> inverse;

  static MirrorMap identity();
};

/// Checks ||inverse(forward(x)) - x||_inf <= tol at each probe; returns the
/// worst error seen.
double mirror_roundtrip_error(const MirrorMap& mirror, std::span<const std::vector<double>> probes);

/// Same recursion for F(theta, inverse(zeta)) and G(theta, inverse(zeta));
/// `zeta0` lives in the dual (mirror) coordinates. The mirror is rejected if
/// it fails the round-trip check on inverse(zeta0) and a few seeded probes.
AmidResult adjoint_gradient_bregman(const IterationProblem& p, std::span<const double> theta,
                                    std::span<const double> zeta0, const AdjointConfig& cfg,
                                    const MirrorMap& mirror);

// ---- mean-field game front end -----------------------------------------------

/// F = q^tau(Lambda(softmax zeta)), G = g(theta, Lambda(softmax zeta)).
IterationProblem make_omd_problem(const EnvModel& env, double tau);

double t_step_objective(const EnvModel& env, std::span<const double> theta,
                        const LogPolicy& zeta0, const AdjointConfig& cfg);

/// g(theta, Lambda(softmax z | theta)).
double objective_at(const EnvModel& env, std::span<const double> theta, const LogPolicy& z);

/// Logits after T OMD updates, through the same code path as amid_gradient.
LogPolicy t_step_logits(const EnvModel& env, std::span<const double> theta,
                        const LogPolicy& zeta0, const AdjointConfig& cfg);

AmidResult amid_gradient(const EnvModel& env, std::span<const double> theta,
                         const LogPolicy& zeta0, const AdjointConfig& cfg);

AmidResult amid_gradient_bregman(const EnvModel& env, std::span<const double> theta,
                                 const LogPolicy& zeta0, const AdjointConfig& cfg,
                                 const MirrorMap& mirror);

}  // namespace mfid
