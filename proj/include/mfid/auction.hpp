#pragma once

// Batched-auction mean-field game. States are valuations v_i = i/|V| plus a
// non-participation state (last index); actions are bids a_j = j/|A|. Each
// round a mechanism observes the active bid distribution and the remaining
// goods, allocates a fraction alpha_h of the population to the highest bids
// (uniform tie-breaking at the threshold) and charges winners p_h(a).

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mfid/mfg.hpp"

namespace mfid {

enum class UtilityKind { Linear, RiskAverse, RiskSeeking, Hyperbolic };

struct Utility {
  UtilityKind kind = UtilityKind::Linear;
  double beta = 1.0;    // risk-averse / risk-seeking curvature
  double lambda = 1.0;  // hyperbolic discount rate

  double operator()(double surplus, int h) const;
  ad::Var record(ad::Tape& tape, ad::Var surplus, int h) const;
};

/// Valuation dynamics. Non-winners move by w(.|v): identity, or a Gaussian
/// kernel exp(-(rate*v - v')^2 / (2 sigma^2)) normalized over the grid when
/// `drift` is set. Winners move by w(.|bot): they stay out, except that with
/// probability rho they re-enter with a fresh valuation drawn from mu0.
struct Dynamics {
  bool drift = false;
  double rate = 1.0;
  double sigma = 0.2;
  double rho = 0.0;

  static Dynamics single_minded() { return {}; }
  static Dynamics gaussian_drift(double rate, double sigma) { return {true, rate, sigma, 0.0}; }
  static Dynamics regenerate(double rho) { return {false, 1.0, 0.2, rho}; }
};

enum class AuctionObjective { Revenue, Efficiency, Mix };

struct AuctionConfig {
  int V = 20;
  int A = 20;
  int H = 4;
  double alpha_max = 0.8;
  /// Distribution over valuations; empty means uniform.
  std::vector<double> mu0;
  Utility utility;
  Dynamics dynamics;
  AuctionObjective objective = AuctionObjective::Revenue;

  int states() const { return V + 1; }
  int bottom() const { return V; }
  double value(int i) const { return static_cast<double>(i) / V; }
  double bid(int j) const { return static_cast<double>(j) / A; }
};

void validate(const AuctionConfig& cfg);
std::vector<double> valuation_prior(const AuctionConfig& cfg);
/// w(s'|s) for s in S, [s][s'].
std::vector<double> valuation_kernel(const AuctionConfig& cfg);

// ---- mechanisms --------------------------------------------------------------

struct MechanismOutput {
  ad::Var alpha;     // scalar
  ad::Var payments;  // one per bid
};

class Mechanism {
 public:
  virtual ~Mechanism() = default;
  virtual std::size_t param_size() const = 0;
  /// `nu` is the active bid distribution (size |A|), `remaining` a scalar.
  virtual MechanismOutput evaluate(ad::Tape& tape, ad::Var theta, int h, ad::Var nu,
                                   ad::Var remaining) const = 0;
  virtual std::string name() const = 0;
};

struct MechanismValues {
  double alpha = 0.0;
  std::vector<double> payments;
};

MechanismValues evaluate_mechanism(const Mechanism& m, std::span<const double> theta, int h,
                                   std::span<const double> nu, double remaining);

/// p_h(a) = sigmoid(theta1[h,a]) * a, alpha_h = alpha_max * softmax(theta2)_h.
class StaticMechanism final : public Mechanism {
 public:
  StaticMechanism(int H, int A, double alpha_max);
  std::size_t param_size() const override;
  MechanismOutput evaluate(ad::Tape& tape, ad::Var theta, int h, ad::Var nu,
                           ad::Var remaining) const override;
  std::string name() const override { return "static"; }

 private:
  int H_, A_;
  double alpha_max_;
  std::vector<double> bids_;
};

/// Winners pay their bid; alpha_max / H is allocated every round.
class FirstPriceMechanism final : public Mechanism {
 public:
  FirstPriceMechanism(int H, int A, double alpha_max);
  std::size_t param_size() const override { return 0; }
  MechanismOutput evaluate(ad::Tape& tape, ad::Var theta, int h, ad::Var nu,
                           ad::Var remaining) const override;
  std::string name() const override { return "first_price"; }

 private:
  int H_, A_;
  double alpha_max_;
  std::vector<double> bids_;
};

// ---- population operators (plain values) ------------------------------------

/// nu(a) = sum over active states of L(s, a). `dist` is [s][a] over S.
std::vector<double> nu_active(std::span<const double> dist, int V, int A);

/// Winning probability of an active bidder at every bid:
/// clamp((alpha - mass strictly above a) / nu(a), 0, 1), 0/0 = 0, x/0 = +-inf.
std::vector<double> p_win(std::span<const double> nu, double alpha);
double p_win(int s, int a, std::span<const double> dist, int V, int A, double alpha);

/// Threshold bid: the largest a with sum_{a' >= a} nu(a') >= alpha.
int threshold_bid(std::span<const double> nu, double alpha);

/// Removes alpha of the highest-bid mass from a sub-distribution d over
/// [V x A], splitting the threshold bid proportionally across valuations.
std::vector<double> xi_op(std::span<const double> d, int V, int A, double alpha);

/// State distribution after allocation: survivors keep their valuation,
/// winners (mass min(alpha, active mass)) join the non-participation state.
std::vector<double> post_alloc_xi(std::span<const double> dist, int V, int A, double alpha);

struct NzdViolation {
  int h = 0;
  int a = 0;
  double mass_at = 0.0;
  double mass_above = 0.0;
};

/// Rounds and bids where no active mass sits at a but the mass strictly above
/// equals alpha_h (within 1e-12).
std::vector<NzdViolation> nzd_check(const Flow& flow, std::span<const double> alphas, int V);

// ---- tape versions -----------------------------------------------------------

ad::Var record_nu_active(ad::Tape& tape, ad::Var dist, int V, int A);
ad::Var record_p_win(ad::Tape& tape, ad::Var nu, ad::Var alpha);

// ---- environment -------------------------------------------------------------

struct RoundTrace {
  double remaining = 0.0;
  double alpha = 0.0;
  std::vector<double> nu;
  std::vector<double> payments;
  std::vector<double> p_win;
};

class AuctionEnv final : public EnvModel {
 public:
  AuctionEnv(AuctionConfig cfg, std::shared_ptr<const Mechanism> mechanism);

  const AuctionConfig& config() const { return cfg_; }
  const Mechanism& mechanism() const { return *mech_; }
  std::shared_ptr<const Mechanism> mechanism_ptr() const { return mech_; }
  /// Replaces the valuation prior (used for per-iteration random priors).
  void set_prior(std::vector<double> mu0);

  Dims dims() const override { return {cfg_.H, cfg_.states(), cfg_.A}; }
  std::vector<double> initial_distribution() const override;
  std::size_t param_size() const override { return mech_->param_size(); }
  std::unique_ptr<Rollout> rollout(ad::Tape& tape, ad::Var theta) const override;
  ad::Var objective(ad::Tape& tape, ad::Var theta, std::span<const ad::Var> flow) const override;
  std::string name() const override { return "auction"; }

  /// Mechanism outputs and winning probabilities along a flow.
  std::vector<RoundTrace> trace(std::span<const double> theta, const Flow& flow) const;
  double revenue(std::span<const double> theta, const Flow& flow) const;
  double efficiency(std::span<const double> theta, const Flow& flow) const;

 private:
  friend class AuctionRollout;
  double evaluate_objective(std::span<const double> theta, const Flow& flow,
                            AuctionObjective kind) const;
  ad::Var record_objective_kind(ad::Tape& tape, ad::Var theta, std::span<const ad::Var> flow,
                                AuctionObjective kind) const;

  AuctionConfig cfg_;
  std::shared_ptr<const Mechanism> mech_;
  std::vector<double> stay_;       // [s][a][s'] = w(s'|s)
  std::vector<double> win_delta_;  // [s][a][s'] = w(s'|bot) - w(s'|s)
  std::vector<double> values_;     // [s][a] = v_s (0 at bottom)
  ad::IndexMap kernel_pw_;         // [s][a][s'] -> a, or A at bottom
  ad::IndexMap pair_pw_;           // [s][a] -> a, or A at bottom
  ad::IndexMap pair_bid_;          // [s][a] -> a
};

}  // namespace mfid
