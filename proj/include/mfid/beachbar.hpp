#pragma once

// Beach-bar congestion pricing: agents on a line of K positions move left,
// stay or move right; the planner sets a per-position price to spread them.

#include <atomic>
#include <span>
#include <vector>

#include "mfid/mfg.hpp"

namespace mfid {

struct BeachBarConfig {
  int K = 10;
  int H = 5;
  double p_max = 1.0;
  /// Sign in front of the |a|/K movement term.
  double move_sign = 1.0;

  int bar() const { return K / 2; }
};

void validate(const BeachBarConfig& cfg);

/// Actions are indexed 0, 1, 2 for moves -1, 0, +1.
constexpr int kBeachBarActions = 3;
inline int bb_move(int action) { return action - 1; }

/// Deterministic clamped moves, [s][a][s'].
std::vector<double> bb_transition(const BeachBarConfig& cfg);

/// theta_s = p_max * sigmoid(xi_s).
std::vector<double> bb_price_map(std::span<const double> xi, double p_max);

/// Reward [s][a] given the state marginal and the prices (not xi).
std::vector<double> bb_reward(const BeachBarConfig& cfg, std::span<const double> marginal,
                              std::span<const double> prices);

/// -sum_{h,s} exp(K * m_h(s)) over state marginals.
double bb_objective(const BeachBarConfig& cfg, const Flow& flow);

class BeachBarEnv final : public EnvModel {
 public:
  explicit BeachBarEnv(BeachBarConfig cfg);

  const BeachBarConfig& config() const { return cfg_; }
  Dims dims() const override { return {cfg_.H, cfg_.K, kBeachBarActions}; }
  std::vector<double> initial_distribution() const override;
  std::size_t param_size() const override { return static_cast<std::size_t>(cfg_.K); }
  std::unique_ptr<Rollout> rollout(ad::Tape& tape, ad::Var theta) const override;
  ad::Var objective(ad::Tape& tape, ad::Var theta, std::span<const ad::Var> flow) const override;
  std::string name() const override { return "beachbar"; }

  /// Number of times a state marginal was floored at 1e-12 inside the log.
  static long floor_events();

 private:
  BeachBarConfig cfg_;
  std::vector<double> kernel_;
  std::vector<double> base_reward_;
  ad::IndexMap pair_state_;
};

}  // namespace mfid
