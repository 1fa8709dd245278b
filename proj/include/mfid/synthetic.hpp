#pragma once

// Random smooth PMFG instances. Kernel rows are softmaxes and rewards are
// sigmoids of affine functions of (theta, state marginal), so every map is
// smooth everywhere. Used for gradient checks.

#include <cstdint>

#include "mfid/mfg.hpp"

namespace mfid {

struct SyntheticConfig {
  int S = 3;
  int A = 2;
  int H = 2;
  int params = 3;
  std::uint64_t seed = 0;
  /// Scale of every theta dependence; 0 makes the game ignore theta.
  double theta_coupling = 1.0;
  /// Scale of the population (mean-field) dependence.
  double flow_coupling = 0.5;
};

void validate(const SyntheticConfig& cfg);

class SyntheticEnv final : public EnvModel {
 public:
  explicit SyntheticEnv(SyntheticConfig cfg);

  const SyntheticConfig& config() const { return cfg_; }
  Dims dims() const override { return {cfg_.H, cfg_.S, cfg_.A}; }
  std::vector<double> initial_distribution() const override { return mu0_; }
  std::size_t param_size() const override { return static_cast<std::size_t>(cfg_.params); }
  std::unique_ptr<Rollout> rollout(ad::Tape& tape, ad::Var theta) const override;
  ad::Var objective(ad::Tape& tape, ad::Var theta, std::span<const ad::Var> flow) const override;
  std::string name() const override { return "synthetic"; }

  /// A parameter vector drawn from the instance's own generator.
  std::vector<double> sample_theta(std::uint64_t seed) const;

 private:
  friend class SyntheticRollout;
  SyntheticConfig cfg_;
  std::vector<double> mu0_;
  // Per round: kernel logits [s][a][s'] and reward logits [s][a].
  std::vector<std::vector<double>> kernel_base_;
  std::vector<std::vector<double>> reward_base_;
  std::vector<double> kernel_theta_;   // [s a s'] x params
  std::vector<double> kernel_flow_;    // [s a s'] x S
  std::vector<double> reward_theta_;   // [s a] x params
  std::vector<double> reward_flow_;    // [s a] x S
  std::vector<double> objective_weight_;  // [s a]
  std::vector<double> objective_theta_;   // params
  ad::IndexMap pair_state_;
};

}  // namespace mfid
