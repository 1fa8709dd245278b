#pragma once

// Finite-horizon parameterized mean-field games: population flows,
// entropy-regularized value/q functions, best responses, exploitability and
// the online mirror descent operator in log-policy space.

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mfid/autodiff.hpp"

namespace mfid {

using ParamVector = std::vector<double>;

struct Dims {
  int horizon = 1;
  int states = 1;
  int actions = 1;

  std::size_t table_size() const {
    return static_cast<std::size_t>(horizon) * static_cast<std::size_t>(states) *
           static_cast<std::size_t>(actions);
  }
  std::size_t dist_size() const {
    return static_cast<std::size_t>(states) * static_cast<std::size_t>(actions);
  }
  std::size_t index(int h, int s, int a) const {
    return (static_cast<std::size_t>(h) * states + s) * actions + a;
  }
  bool operator==(const Dims&) const = default;
};

void validate_dims(const Dims& d);

/// Time-indexed stochastic policy, probs[h][s][a].
class Policy {
 public:
  Policy(Dims dims, std::vector<double> probs);
  static Policy uniform(Dims dims);

  const Dims& dims() const { return dims_; }
  double operator()(int h, int s, int a) const { return probs_[dims_.index(h, s, a)]; }
  std::span<const double> values() const { return probs_; }
  std::span<const double> row(int h, int s) const {
    return std::span<const double>(probs_).subspan(dims_.index(h, s, 0), dims_.actions);
  }

 private:
  Dims dims_;
  std::vector<double> probs_;
};

/// Unconstrained logits; softmax over the action axis gives a Policy.
class LogPolicy {
 public:
  LogPolicy(Dims dims, std::vector<double> logits);
  static LogPolicy zeros(Dims dims);

  const Dims& dims() const { return dims_; }
  double operator()(int h, int s, int a) const { return logits_[dims_.index(h, s, a)]; }
  std::span<const double> values() const { return logits_; }

 private:
  Dims dims_;
  std::vector<double> logits_;
};

/// H state-action distributions L_h, each stored [s][a].
class Flow {
 public:
  Flow(Dims dims, std::vector<std::vector<double>> dists);

  const Dims& dims() const { return dims_; }
  std::span<const double> at(int h) const { return dists_[static_cast<std::size_t>(h)]; }
  double operator()(int h, int s, int a) const {
    return dists_[static_cast<std::size_t>(h)][static_cast<std::size_t>(s) * dims_.actions + a];
  }
  std::vector<double> state_marginal(int h) const;
  const std::vector<std::vector<double>>& dists() const { return dists_; }
  /// Largest |sum - 1| observed (and corrected) while building the flow.
  double renormalization_drift() const { return drift_; }
  void set_renormalization_drift(double d) { drift_ = d; }

 private:
  Dims dims_;
  std::vector<std::vector<double>> dists_;
  double drift_ = 0.0;
};

struct QTable {
  Dims dims;
  std::vector<double> q;  // [h][s][a]
  std::vector<double> v;  // [h][s]
};

/// Kernel [s][a][s'] and reward [s][a] for one round, recorded on a tape.
struct RoundModel {
  ad::Var kernel;
  ad::Var reward;
};

/// Per-evaluation view of an environment. `advance` is called for
/// h = 0..H-1 in order with the population distribution of that round, so
/// environments can carry quantities that accumulate along the flow.
class Rollout {
 public:
  virtual ~Rollout() = default;
  virtual RoundModel advance(int h, ad::Var dist) = 0;
};

/// The PMFG contract. Implementations must be pure: the same (theta, flow)
/// always records the same values.
class EnvModel {
 public:
  virtual ~EnvModel() = default;

  virtual Dims dims() const = 0;
  virtual std::vector<double> initial_distribution() const = 0;
  virtual std::size_t param_size() const = 0;
  virtual std::unique_ptr<Rollout> rollout(ad::Tape& tape, ad::Var theta) const = 0;
  virtual ad::Var objective(ad::Tape& tape, ad::Var theta,
                            std::span<const ad::Var> flow) const = 0;
  virtual std::string name() const = 0;
};

// ---- tape-level building blocks -------------------------------------------

struct TapeFlow {
  std::vector<ad::Var> dists;
  std::vector<RoundModel> rounds;
  double drift = 0.0;
};

/// Records Lambda(pi | theta): L_0 = mu0 * pi_0, L_{h+1} = Gamma_h(L_h, pi_{h+1}).
/// Kernel rows are checked to be distributions within 1e-12; a state
/// marginal whose mass drifts by more than 1e-13 is renormalized.
TapeFlow record_flow(ad::Tape& tape, const EnvModel& env, ad::Var theta, ad::Var probs);

/// Records the round models of an existing flow (no policy involved).
std::vector<RoundModel> record_rounds(ad::Tape& tape, const EnvModel& env, ad::Var theta,
                                      std::span<const ad::Var> dists);

struct TapeQ {
  ad::Var q;   // [h][s][a]
  ad::Var v;   // [h][s]
};

/// Backward recursion for q^tau and V^tau. `entropy` is [h][s] and is
/// ignored when tau == 0.
TapeQ record_q(ad::Tape& tape, const Dims& dims, std::span<const RoundModel> rounds,
               ad::Var probs, ad::Var entropy, double tau);

/// q^tau(. | Lambda(softmax zeta), softmax zeta, theta) as a function of logits.
ad::Var record_q_map(ad::Tape& tape, const EnvModel& env, ad::Var theta, ad::Var logits,
                     double tau);

/// g(theta, Lambda(softmax zeta | theta)).
ad::Var record_objective(ad::Tape& tape, const EnvModel& env, ad::Var theta, ad::Var logits);

/// Row index map i -> i / width for an array of `n` entries.
ad::IndexMap row_index(std::size_t n, std::size_t width);

// ---- plain operations --------------------------------------------------------

Policy softmax_policy(const LogPolicy& logits);

Flow population_flow(const EnvModel& env, std::span<const double> theta, const Policy& pi);

QTable q_values(const EnvModel& env, std::span<const double> theta, const Flow& flow,
                const Policy& pi, double tau);

struct BestResponse {
  Policy policy;
  std::vector<double> value;      // v*_0(s)
  std::vector<double> values;     // v*_h(s), [h][s]
};

BestResponse best_response(const EnvModel& env, std::span<const double> theta,
                           const Flow& flow, double tau);

/// V^tau(L, pi) with s_0 ~ mu0.
double expected_value(const EnvModel& env, std::span<const double> theta, const Flow& flow,
                      const Policy& pi, double tau);

double exploitability(const EnvModel& env, std::span<const double> theta, const Policy& pi,
                      double tau);

/// (1 - eta*tau) * zeta + eta * update, elementwise. Shared by every code
/// path that advances logits so forward passes agree bitwise.
std::vector<double> omd_combine(std::span<const double> zeta, std::span<const double> update,
                                double eta, double tau);

/// Rejects eta <= 0, tau < 0 and eta * tau > 1.
void check_step_sizes(double eta, double tau);

LogPolicy omd_step(const EnvModel& env, std::span<const double> theta, const LogPolicy& zeta,
                   double eta, double tau);

LogPolicy omd_iterate(const EnvModel& env, std::span<const double> theta, const LogPolicy& zeta0,
                      double eta, double tau, int iterations);

/// Entropy of each (h, s) row with 0 log 0 := 0.
std::vector<double> policy_entropy(const Policy& pi);

}  // namespace mfid
