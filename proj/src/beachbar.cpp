#include "mfid/beachbar.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mfid/error.hpp"

namespace mfid {

namespace {

constexpr double kMarginalFloor = 1e-12;
std::atomic<long> g_floor_events{0};

double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

std::vector<double> base_reward(const BeachBarConfig& cfg) {
  std::vector<double> r(static_cast<std::size_t>(cfg.K) * kBeachBarActions);
  for (int s = 0; s < cfg.K; ++s)
    for (int a = 0; a < kBeachBarActions; ++a)
      r[static_cast<std::size_t>(s) * kBeachBarActions + a] =
          -std::abs(s - cfg.bar()) / static_cast<double>(cfg.K) +
          cfg.move_sign * std::abs(bb_move(a)) / static_cast<double>(cfg.K);
  return r;
}

class BeachBarRollout final : public Rollout {
 public:
  BeachBarRollout(const BeachBarEnv& env, ad::Tape& tape, ad::Var theta,
                  const std::vector<double>& kernel, const std::vector<double>& base,
                  ad::IndexMap pair_state)
      : env_(env), tape_(tape), kernel_(kernel), base_(base), pair_state_(std::move(pair_state)) {
    prices_ = tape_.scale(tape_.sigmoid(theta), env_.config().p_max);
  }

  RoundModel advance(int, ad::Var dist) override {
    const auto K = static_cast<std::size_t>(env_.config().K);
    ad::Var m = tape_.scatter_add(dist, pair_state_, K);
    for (double x : m.value()) {
      if (x < kMarginalFloor) {
        g_floor_events.fetch_add(1, std::memory_order_relaxed);
        break;
      }
    }
    ad::Var floored = tape_.clamp(m, kMarginalFloor, std::numeric_limits<double>::infinity());
    ad::Var congestion = tape_.scale(tape_.log(floored), -1.0 / 3.0);
    ad::Var per_state = tape_.sub(congestion, prices_);
    ad::Var reward = tape_.add(tape_.constant(base_), tape_.gather(per_state, pair_state_));
    return {tape_.constant(kernel_), reward};
  }

 private:
  const BeachBarEnv& env_;
  ad::Tape& tape_;
  const std::vector<double>& kernel_;
  const std::vector<double>& base_;
  ad::IndexMap pair_state_;
  ad::Var prices_;
};

}  // namespace

void validate(const BeachBarConfig& cfg) {
  require(cfg.K >= 2, "beachbar: K must be at least 2");
  require(cfg.H >= 1, "beachbar: H must be at least 1");
  require(cfg.p_max > 0.0 && cfg.p_max <= 1.0, "beachbar: p_max must lie in (0, 1]");
  require(std::isfinite(cfg.move_sign), "beachbar: move_sign must be finite");
}

std::vector<double> bb_transition(const BeachBarConfig& cfg) {
  validate(cfg);
  const auto K = static_cast<std::size_t>(cfg.K);
  std::vector<double> k(K * kBeachBarActions * K, 0.0);
  for (int s = 0; s < cfg.K; ++s)
    for (int a = 0; a < kBeachBarActions; ++a) {
      const int next = std::clamp(s + bb_move(a), 0, cfg.K - 1);
      k[(static_cast<std::size_t>(s) * kBeachBarActions + a) * K + next] = 1.0;
    }
  return k;
}

std::vector<double> bb_price_map(std::span<const double> xi, double p_max) {
  std::vector<double> out(xi.size());
  for (std::size_t i = 0; i < xi.size(); ++i) out[i] = p_max * sigmoid(xi[i]);
  return out;
}

std::vector<double> bb_reward(const BeachBarConfig& cfg, std::span<const double> marginal,
                              std::span<const double> prices) {
  validate(cfg);
  require(marginal.size() == static_cast<std::size_t>(cfg.K), "bb_reward: marginal size");
  require(prices.size() == static_cast<std::size_t>(cfg.K), "bb_reward: price size");
  auto r = base_reward(cfg);
  for (int s = 0; s < cfg.K; ++s) {
    double m = marginal[static_cast<std::size_t>(s)];
    if (m < kMarginalFloor) {
      g_floor_events.fetch_add(1, std::memory_order_relaxed);
      m = kMarginalFloor;
    }
    const double term = -std::log(m) / 3.0 - prices[static_cast<std::size_t>(s)];
    for (int a = 0; a < kBeachBarActions; ++a)
      r[static_cast<std::size_t>(s) * kBeachBarActions + a] += term;
  }
  return r;
}

double bb_objective(const BeachBarConfig& cfg, const Flow& flow) {
  validate(cfg);
  require(flow.dims().states == cfg.K, "bb_objective: flow has wrong state count");
  double total = 0.0;
  for (int h = 0; h < flow.dims().horizon; ++h)
    for (double m : flow.state_marginal(h)) total -= std::exp(cfg.K * m);
  return total;
}

BeachBarEnv::BeachBarEnv(BeachBarConfig cfg) : cfg_(cfg) {
  validate(cfg_);
  kernel_ = bb_transition(cfg_);
  base_reward_ = base_reward(cfg_);
  pair_state_ = row_index(static_cast<std::size_t>(cfg_.K) * kBeachBarActions, kBeachBarActions);
}

std::vector<double> BeachBarEnv::initial_distribution() const {
  return std::vector<double>(static_cast<std::size_t>(cfg_.K), 1.0 / cfg_.K);
}

std::unique_ptr<Rollout> BeachBarEnv::rollout(ad::Tape& tape, ad::Var theta) const {
  require(theta.size() == param_size(), "beachbar: parameter vector has wrong size");
  return std::make_unique<BeachBarRollout>(*this, tape, theta, kernel_, base_reward_, pair_state_);
}

ad::Var BeachBarEnv::objective(ad::Tape& tape, ad::Var, std::span<const ad::Var> flow) const {
  const auto K = static_cast<std::size_t>(cfg_.K);
  std::vector<ad::Var> terms;
  for (const auto& dist : flow) {
    ad::Var m = tape.scatter_add(dist, pair_state_, K);
    terms.push_back(tape.sum(tape.exp(tape.scale(m, static_cast<double>(cfg_.K)))));
  }
  return tape.scale(tape.sum(tape.concat(terms)), -1.0);
}

long BeachBarEnv::floor_events() { return g_floor_events.load(); }

}  // namespace mfid
