#include "mfid/synthetic.hpp"

#include <random>

#include "mfid/error.hpp"

namespace mfid {

class SyntheticRollout final : public Rollout {
 public:
  SyntheticRollout(const SyntheticEnv& env, ad::Tape& tape, ad::Var theta)
      : env_(env), tape_(tape), theta_(theta) {}

  RoundModel advance(int h, ad::Var dist) override {
    const auto& c = env_.cfg_;
    const auto S = static_cast<std::size_t>(c.S);
    const auto SA = S * static_cast<std::size_t>(c.A);
    const auto P = static_cast<std::size_t>(c.params);
    ad::Var m = tape_.scatter_add(dist, env_.pair_state_, S);

    ad::Var k = tape_.constant(env_.kernel_base_[static_cast<std::size_t>(h)]);
    ad::Var r = tape_.constant(env_.reward_base_[static_cast<std::size_t>(h)]);
    if (c.theta_coupling != 0.0) {
      k = tape_.add(k, tape_.matvec(tape_.constant(env_.kernel_theta_), theta_, SA * S, P));
      r = tape_.add(r, tape_.matvec(tape_.constant(env_.reward_theta_), theta_, SA, P));
    }
    if (c.flow_coupling != 0.0) {
      k = tape_.add(k, tape_.matvec(tape_.constant(env_.kernel_flow_), m, SA * S, S));
      r = tape_.add(r, tape_.matvec(tape_.constant(env_.reward_flow_), m, SA, S));
    }
    return {tape_.softmax_rows(k, S), tape_.sigmoid(r)};
  }

 private:
  const SyntheticEnv& env_;
  ad::Tape& tape_;
  ad::Var theta_;
};

void validate(const SyntheticConfig& cfg) {
  require(cfg.S >= 1 && cfg.A >= 1 && cfg.H >= 1, "synthetic: S, A, H must be positive");
  require(cfg.params >= 1, "synthetic: params must be positive");
}

SyntheticEnv::SyntheticEnv(SyntheticConfig cfg) : cfg_(cfg) {
  validate(cfg_);
  std::mt19937_64 rng(cfg_.seed);
  std::normal_distribution<double> normal;
  auto draw = [&](std::size_t n, double scale) {
    std::vector<double> v(n);
    for (double& x : v) x = scale * normal(rng);
    return v;
  };
  const auto S = static_cast<std::size_t>(cfg_.S);
  const auto SA = S * static_cast<std::size_t>(cfg_.A);
  const auto P = static_cast<std::size_t>(cfg_.params);

  std::gamma_distribution<double> gamma(2.0);
  mu0_.resize(S);
  double total = 0.0;
  for (double& x : mu0_) total += (x = gamma(rng) + 0.1);
  for (double& x : mu0_) x /= total;

  for (int h = 0; h < cfg_.H; ++h) {
    kernel_base_.push_back(draw(SA * S, 1.0));
    reward_base_.push_back(draw(SA, 1.0));
  }
  kernel_theta_ = draw(SA * S * P, 0.5 * cfg_.theta_coupling);
  reward_theta_ = draw(SA * P, 0.5 * cfg_.theta_coupling);
  kernel_flow_ = draw(SA * S * S, cfg_.flow_coupling);
  reward_flow_ = draw(SA * S, cfg_.flow_coupling);
  objective_weight_ = draw(SA, 1.0);
  objective_theta_ = draw(P, 0.3 * cfg_.theta_coupling);
  pair_state_ = row_index(SA, static_cast<std::size_t>(cfg_.A));
}

std::unique_ptr<Rollout> SyntheticEnv::rollout(ad::Tape& tape, ad::Var theta) const {
  require(theta.size() == param_size(), "synthetic: parameter vector has wrong size");
  return std::make_unique<SyntheticRollout>(*this, tape, theta);
}

// g = sum_h <w, L_h> + sum_h (<w, L_h>)^2 / 2 - <c, theta^2>.
ad::Var SyntheticEnv::objective(ad::Tape& tape, ad::Var theta,
                                std::span<const ad::Var> flow) const {
  ad::Var w = tape.constant(objective_weight_);
  std::vector<ad::Var> terms;
  for (const auto& dist : flow) {
    ad::Var lin = tape.sum(tape.mul(w, dist));
    terms.push_back(tape.add(lin, tape.scale(tape.mul(lin, lin), 0.5)));
  }
  ad::Var g = tape.sum(tape.concat(terms));
  if (cfg_.theta_coupling != 0.0)
    g = tape.sub(g, tape.sum(tape.mul(tape.constant(objective_theta_), tape.mul(theta, theta))));
  return g;
}

std::vector<double> SyntheticEnv::sample_theta(std::uint64_t seed) const {
  std::mt19937_64 rng(seed ^ (cfg_.seed * 0x9e3779b97f4a7c15ULL));
  std::normal_distribution<double> normal;
  std::vector<double> th(param_size());
  for (double& x : th) x = normal(rng);
  return th;
}

}  // namespace mfid
