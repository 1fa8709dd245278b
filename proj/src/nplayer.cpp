#include "mfid/nplayer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mfid/error.hpp"

namespace mfid {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct Kahan {
  double sum = 0.0, c = 0.0;
  void add(double x) {
    const double y = x - c;
    const double t = sum + y;
    c = (t - sum) - y;
    sum = t;
  }
};

// Cumulative rows for inverse-CDF sampling.
std::vector<double> cumulative(std::span<const double> p, std::size_t width) {
  std::vector<double> c(p.size());
  for (std::size_t r = 0; r < p.size() / width; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < width; ++j) c[r * width + j] = (acc += p[r * width + j]);
  }
  return c;
}

int sample_row(const std::vector<double>& cum, std::size_t row, std::size_t width, double u) {
  const double* c = cum.data() + row * width;
  const double x = u * c[width - 1];
  for (std::size_t j = 0; j < width; ++j)
    if (x < c[j]) return static_cast<int>(j);
  // Rounding at the top of the row: last entry with positive mass.
  for (std::size_t j = width; j-- > 0;)
    if (c[j] > (j ? c[j - 1] : 0.0)) return static_cast<int>(j);
  return static_cast<int>(width - 1);
}

// Threshold bid and how many agents bid strictly above it.
std::pair<int, long> threshold(std::span<const int> bids, long k) {
  std::vector<int> sorted(bids.begin(), bids.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const int th = sorted[static_cast<std::size_t>(k - 1)];
  long above = 0;
  for (int b : bids) above += b > th;
  return {th, above};
}

}  // namespace

std::vector<std::size_t> allocate(std::span<const int> bids, long k, std::mt19937_64& rng) {
  require(k >= 0, "allocate: item count must be nonnegative");
  require(static_cast<std::size_t>(k) <= bids.size(), "allocate: more items than bidders");
  std::vector<std::size_t> winners;
  if (k == 0) return winners;
  const auto [th, above] = threshold(bids, k);
  std::vector<std::size_t> ties;
  for (std::size_t i = 0; i < bids.size(); ++i) {
    if (bids[i] > th) winners.push_back(i);
    else if (bids[i] == th) ties.push_back(i);
  }
  const auto slots = static_cast<std::size_t>(k - above);
  for (std::size_t i = 0; i < slots; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, ties.size() - 1);
    std::swap(ties[i], ties[pick(rng)]);
    winners.push_back(ties[i]);
  }
  std::sort(winners.begin(), winners.end());
  return winners;
}

std::vector<double> marginal_win_prob_enum(std::span<const int> states, std::span<const int> bids,
                                           long k, int V) {
  require(states.size() == bids.size(), "marginal_win_prob_enum: size mismatch");
  require(states.size() <= 12, "marginal_win_prob_enum: enumeration limited to N <= 12");
  require(k >= 0, "marginal_win_prob_enum: item count must be nonnegative");
  std::vector<std::size_t> active;
  std::vector<int> active_bids;
  for (std::size_t i = 0; i < states.size(); ++i)
    if (states[i] != V) {
      active.push_back(i);
      active_bids.push_back(bids[i]);
    }
  std::vector<double> prob(states.size(), 0.0);
  const long kk = std::min<long>(k, static_cast<long>(active.size()));
  if (kk == 0) return prob;
  const auto [th, above] = threshold(active_bids, kk);
  std::vector<std::size_t> ties;
  for (std::size_t j = 0; j < active.size(); ++j) {
    if (active_bids[j] > th) prob[active[j]] = 1.0;
    else if (active_bids[j] == th) ties.push_back(active[j]);
  }
  const auto slots = static_cast<unsigned>(kk - above);
  const auto m = static_cast<unsigned>(ties.size());
  std::vector<long> wins(m, 0);
  long subsets = 0;
  for (unsigned mask = 0; mask < (1u << m); ++mask) {
    if (static_cast<unsigned>(__builtin_popcount(mask)) != slots) continue;
    ++subsets;
    for (unsigned j = 0; j < m; ++j)
      if (mask & (1u << j)) ++wins[j];
  }
  for (unsigned j = 0; j < m; ++j)
    prob[ties[j]] = static_cast<double>(wins[j]) / static_cast<double>(subsets);
  return prob;
}

std::uint64_t replication_seed(std::uint64_t master, int N, int r) {
  std::uint64_t x = splitmix64(master);
  x = splitmix64(x ^ static_cast<std::uint64_t>(N));
  return splitmix64(x ^ (static_cast<std::uint64_t>(r) << 1));
}

SimTrajectory simulate_auction(const AuctionConfig& cfg, const Mechanism& mech,
                               std::span<const double> theta, const Policy& pi, int N,
                               std::uint64_t seed) {
  validate(cfg);
  require(N >= 1, "simulate_auction: N must be positive");
  const Dims d{cfg.H, cfg.states(), cfg.A};
  require(pi.dims() == d, "simulate_auction: policy dims do not match the auction");
  const auto S = static_cast<std::size_t>(cfg.states());
  const auto A = static_cast<std::size_t>(cfg.A);
  const int bottom = cfg.bottom();

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const auto prior_cum = cumulative(valuation_prior(cfg), static_cast<std::size_t>(cfg.V));
  const auto w_cum = cumulative(valuation_kernel(cfg), S);
  const auto pi_cum = cumulative(pi.values(), A);
  const long budget = static_cast<long>(std::ceil(cfg.alpha_max * N));
  const double inv_n = 1.0 / N;

  SimTrajectory traj;
  traj.utility.assign(static_cast<std::size_t>(N), 0.0);
  std::vector<int> states(static_cast<std::size_t>(N));
  for (int& s : states) s = sample_row(prior_cum, 0, static_cast<std::size_t>(cfg.V), unif(rng));

  double remaining = cfg.alpha_max;
  for (int h = 0; h < cfg.H; ++h) {
    SimRound rd;
    rd.states = states;
    rd.bids.resize(states.size());
    std::vector<long> counts(S * A, 0);
    for (std::size_t i = 0; i < states.size(); ++i) {
      const auto row = static_cast<std::size_t>(h) * S + static_cast<std::size_t>(states[i]);
      rd.bids[i] = sample_row(pi_cum, row, A, unif(rng));
      ++counts[static_cast<std::size_t>(states[i]) * A + static_cast<std::size_t>(rd.bids[i])];
    }
    rd.empirical.resize(S * A);
    for (std::size_t j = 0; j < counts.size(); ++j)
      rd.empirical[j] = static_cast<double>(counts[j]) / N;
    rd.nu = nu_active(rd.empirical, cfg.V, cfg.A);

    rd.remaining = remaining;
    const auto out = evaluate_mechanism(mech, theta, h, rd.nu, std::max(remaining, 0.0));
    rd.alpha = out.alpha;
    remaining -= out.alpha;

    std::vector<std::size_t> active;
    std::vector<int> active_bids;
    for (std::size_t i = 0; i < states.size(); ++i)
      if (states[i] != bottom) {
        active.push_back(i);
        active_bids.push_back(rd.bids[i]);
      }
    rd.items = std::min(static_cast<long>(std::floor(out.alpha * N)), static_cast<long>(active.size()));
    traj.items_sold += rd.items;
    if (traj.items_sold > budget) {
      std::ostringstream os;
      os << "mechanism sold " << traj.items_sold << " items, above the budget of " << budget;
      fail(ErrorCode::Numeric, os.str());
    }
    for (auto j : allocate(active_bids, rd.items, rng)) rd.winners.push_back(active[j]);

    rd.post_states = states;
    for (auto i : rd.winners) {
      const int s = states[i];
      const int b = rd.bids[i];
      const double pay = out.payments[static_cast<std::size_t>(b)];
      rd.revenue += pay * inv_n;
      traj.utility[i] += cfg.utility(cfg.value(s) - pay, h);
      rd.post_states[i] = bottom;
    }
    std::vector<long> post_counts(S, 0);
    for (int z : rd.post_states) ++post_counts[static_cast<std::size_t>(z)];
    rd.post.resize(S);
    for (std::size_t j = 0; j < S; ++j) rd.post[j] = static_cast<double>(post_counts[j]) / N;
    traj.revenue += rd.revenue;

    for (std::size_t i = 0; i < states.size(); ++i)
      states[i] = sample_row(w_cum, static_cast<std::size_t>(rd.post_states[i]), S, unif(rng));
    traj.rounds.push_back(std::move(rd));
  }
  return traj;
}

GapStudy revenue_gap_study(const AuctionEnv& env, std::span<const double> theta, const Policy& pi,
                           std::span<const int> Ns, int reps, std::uint64_t seed) {
  require(reps >= 2, "revenue_gap_study: need at least two replications");
  require(!Ns.empty(), "revenue_gap_study: no population sizes");
  GapStudy study;
  const Flow flow = population_flow(env, theta, pi);
  study.mean_field_revenue = env.revenue(theta, flow);

  for (int N : Ns) {
    std::vector<double> gaps(static_cast<std::size_t>(reps));
    for (int r = 0; r < reps; ++r) {
      const auto traj = simulate_auction(env.config(), env.mechanism(), theta, pi, N,
                                         replication_seed(seed, N, r));
      gaps[static_cast<std::size_t>(r)] = std::abs(traj.revenue - study.mean_field_revenue);
    }
    Kahan sum;
    for (double g : gaps) sum.add(g);
    const double mean = sum.sum / reps;
    Kahan sq;
    for (double g : gaps) sq.add((g - mean) * (g - mean));
    study.rows.push_back({N, mean, std::sqrt(sq.sum / (reps - 1)), reps});
  }

  bool usable = study.rows.size() >= 2;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& row : study.rows) {
    if (!(row.mean_gap > 0.0)) usable = false;
    const double x = std::log(static_cast<double>(row.N));
    const double y = std::log(row.mean_gap);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double n = static_cast<double>(study.rows.size());
  const double denom = n * sxx - sx * sx;
  study.slope = usable && denom != 0.0 ? (n * sxy - sx * sy) / denom : std::nan("");
  return study;
}

}  // namespace mfid
