#pragma once

// Finite-N batched auction. Agents hold valuations (or sit out at the
// non-participation state), bid from a shared policy, and the mechanism sells
// floor(alpha * N) items per round to the highest bids with uniform random
// tie-breaking at the threshold.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "mfid/auction.hpp"

namespace mfid {

/// Winners among agents with the given bid indices: everyone strictly above
/// the k-th highest bid, plus a uniform subset of the threshold bidders.
/// Returned positions are sorted.
std::vector<std::size_t> allocate(std::span<const int> bids, long k, std::mt19937_64& rng);

/// Exact per-agent winning probability by enumerating every tie-break subset.
/// Agents in state V (non-participating) never win. Requires N <= 12.
std::vector<double> marginal_win_prob_enum(std::span<const int> states, std::span<const int> bids,
                                           long k, int V);

struct SimRound {
  std::vector<int> states;
  std::vector<int> bids;
  std::vector<std::size_t> winners;
  std::vector<int> post_states;
  std::vector<double> empirical;      // L_hat [s][a]
  std::vector<double> nu;             // nu_hat [a]
  std::vector<double> post;           // xi_hat [s]
  double alpha = 0.0;
  double remaining = 0.0;
  long items = 0;
  double revenue = 0.0;               // per capita
};

struct SimTrajectory {
  std::vector<SimRound> rounds;
  std::vector<double> utility;        // per agent, summed over rounds
  double revenue = 0.0;               // per capita, summed over rounds
  long items_sold = 0;
};

SimTrajectory simulate_auction(const AuctionConfig& cfg, const Mechanism& mech,
                               std::span<const double> theta, const Policy& pi, int N,
                               std::uint64_t seed);

/// 64-bit seed for replication r at population size N.
std::uint64_t replication_seed(std::uint64_t master, int N, int r);

struct GapRow {
  int N = 0;
  double mean_gap = 0.0;
  double std_gap = 0.0;
  int reps = 0;
};

struct GapStudy {
  double mean_field_revenue = 0.0;
  std::vector<GapRow> rows;
  /// Least-squares slope of log(mean gap) on log N; NaN if a gap is 0 or
  /// fewer than two sizes were run.
  double slope = 0.0;
};

GapStudy revenue_gap_study(const AuctionEnv& env, std::span<const double> theta, const Policy& pi,
                           std::span<const int> Ns, int reps, std::uint64_t seed);

}  // namespace mfid
