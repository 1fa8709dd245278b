#include <doctest.h>

#include <cmath>
#include <random>

#include "mfid/adjoint.hpp"
#include "mfid/auction.hpp"
#include "mfid/error.hpp"
#include "support/oracles.hpp"

using namespace mfid;
using oracle::Vec;

namespace {

// Fixed allocation per round and fixed payments, ignoring the population.
class FixedMechanism final : public Mechanism {
 public:
  FixedMechanism(Vec alphas, Vec payments) : alphas_(std::move(alphas)), pay_(std::move(payments)) {}
  std::size_t param_size() const override { return 0; }
  MechanismOutput evaluate(ad::Tape& t, ad::Var, int h, ad::Var, ad::Var) const override {
    return {t.constant(alphas_[h]), t.constant(pay_)};
  }
  std::string name() const override { return "fixed"; }

 private:
  Vec alphas_, pay_;
};

AuctionConfig small_config(int V, int A, int H) {
  AuctionConfig c;
  c.V = V;
  c.A = A;
  c.H = H;
  c.alpha_max = 0.9;
  return c;
}

Vec random_subdist(std::mt19937_64& rng, std::size_t n, double mass, double zero_prob = 0.3) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vec d(n);
  for (double& x : d) x = u(rng) < zero_prob ? 0.0 : u(rng);
  double t = oracle::total(d);
  if (t == 0) {
    d[0] = 1;
    t = 1;
  }
  for (double& x : d) x *= mass / t;
  return d;
}

std::vector<double> col_sums(const Vec& d, int V, int A) {
  Vec nu(A, 0.0);
  for (int v = 0; v < V; ++v)
    for (int a = 0; a < A; ++a) nu[a] += d[v * A + a];
  return nu;
}

}  // namespace

TEST_SUITE("auction") {
  TEST_CASE("active bid distribution") {
    // V = 1, A = 2: states (v, bottom).
    const Vec L{0.3, 0.5, 0.2, 0.0};
    CHECK(nu_active(L, 1, 2) == Vec{0.3, 0.5});
    CHECK(nu_active(Vec{0, 0, 0.4, 0.6}, 1, 2) == Vec{0.0, 0.0});
    const Vec full{0.1, 0.2, 0.3, 0.4, 0.0, 0.0};
    const auto nu = nu_active(full, 2, 2);
    CHECK(nu[0] == doctest::Approx(0.4));
    CHECK(nu[1] == doctest::Approx(0.6));
  }

  TEST_CASE("winning probability examples") {
    const Vec nu{0.5, 0.5};
    auto p = p_win(nu, 0.25);
    CHECK(p[1] == 0.5);
    CHECK(p[0] == 0.0);
    p = p_win(nu, 0.6);
    CHECK(p[1] == 1.0);
    CHECK(p[0] == doctest::Approx(0.2).epsilon(1e-14));
    const Vec L{0.5, 0.5, 0.0, 0.0};
    CHECK(p_win(1, 0, L, 1, 2, 0.6) == 0.0);
    CHECK(p_win(0, 1, L, 1, 2, 0.6) == 1.0);
    for (double x : p_win(Vec{0.2, 0.3, 0.5}, 0.0)) CHECK(x == 0.0);
  }

  TEST_CASE("zero-mass bid conventions") {
    // An empty bid with less than alpha above it wins outright.
    const auto p = p_win(Vec{0.0, 0.4, 0.0}, 0.3);
    CHECK(p[2] == 1.0);
    CHECK(p[1] == doctest::Approx(0.75));
    CHECK(p[0] == 0.0);
    CHECK(p_win(Vec{0.0, 0.0}, 0.0)[0] == 0.0);
  }

  TEST_CASE("clamp form equals the case form") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
      const int A = 2 + trial % 6;
      const double mass = u(rng);
      const Vec nu = random_subdist(rng, A, mass);
      const double alpha = trial % 10 == 0 ? oracle::total(nu) : u(rng) * mass;
      const auto p = p_win(nu, alpha);
      for (int a = 0; a < A; ++a) CHECK(std::abs(p[a] - oracle::p_win_cases(nu, a, alpha)) <= 1e-12);
    }
  }

  TEST_CASE("winning probability is monotone") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 500; ++trial) {
      const Vec nu = random_subdist(rng, 6, 0.5 + 0.5 * u(rng), 0.0);
      const double a1 = u(rng) * 0.5, a2 = a1 + u(rng) * 0.5;
      const auto p1 = p_win(nu, a1), p2 = p_win(nu, a2);
      for (int a = 0; a < 6; ++a) {
        CHECK(p2[a] >= p1[a]);
        if (a > 0) CHECK(p1[a] >= p1[a - 1]);
      }
    }
  }

  TEST_CASE("tape winning probability matches the plain one") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
      const Vec nu = random_subdist(rng, 5, 0.9);
      const double alpha = 0.1 * (trial % 9);
      ad::Tape t;
      const auto pw = record_p_win(t, t.constant(nu), t.constant(alpha));
      const auto ref = p_win(nu, alpha);
      for (int a = 0; a < 5; ++a) CHECK(pw[a] == ref[a]);
    }
  }

  TEST_CASE("threshold removal examples") {
    const Vec d{0.6, 0.4};
    CHECK(xi_op(d, 1, 2, 0.4) == Vec{0.6, 0.0});
    const auto partial = xi_op(d, 1, 2, 0.2);
    CHECK(partial[0] == 0.6);
    CHECK(partial[1] == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(xi_op(d, 1, 2, 0.0) == d);
    CHECK_THROWS_AS(xi_op(d, 1, 2, 1.1), Error);
    CHECK(threshold_bid(Vec{0.6, 0.4}, 0.2) == 1);
    CHECK(threshold_bid(Vec{0.6, 0.4}, 0.5) == 0);
  }

  TEST_CASE("threshold removal matches the naive sweep and accounts for mass") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
      const int V = 1 + trial % 4, A = 2 + trial % 5;
      const Vec d = random_subdist(rng, V * A, u(rng));
      const double alpha = u(rng) * oracle::total(d);
      const auto x = xi_op(d, V, A, alpha);
      CHECK(std::abs(oracle::total(x) - (oracle::total(d) - alpha)) <= 1e-12);
      CHECK(oracle::l1(x, oracle::xi_naive(d, V, A, alpha)) <= 1e-12);
      for (double v : x) CHECK(v >= 0.0);
    }
  }

  TEST_CASE("threshold removal is non-expansive") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
      const int V = 1 + trial % 3, A = 2 + trial % 4;
      const Vec d1 = random_subdist(rng, V * A, u(rng)), d2 = random_subdist(rng, V * A, u(rng));
      const double alpha = u(rng) * std::min(oracle::total(d1), oracle::total(d2));
      CHECK(oracle::l1(xi_op(d1, V, A, alpha), xi_op(d2, V, A, alpha)) <= oracle::l1(d1, d2) + 1e-12);
      const double b1 = u(rng) * oracle::total(d1), b2 = u(rng) * oracle::total(d1);
      CHECK(oracle::l1(xi_op(d1, V, A, b1), xi_op(d1, V, A, b2)) <= std::abs(b1 - b2) + 1e-12);
    }
  }

  TEST_CASE("post-allocation examples") {
    // V = 1, A = 1.
    auto xi = post_alloc_xi(Vec{0.8, 0.2}, 1, 1, 0.3);
    CHECK(xi[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(xi[1] == doctest::Approx(0.5).epsilon(1e-15));
    xi = post_alloc_xi(Vec{0.8, 0.2}, 1, 1, 0.0);
    CHECK(xi[0] == 0.8);
    CHECK(xi[1] == 0.2);
    xi = post_alloc_xi(Vec{0.8, 0.2}, 1, 1, 0.8);
    CHECK(xi[0] == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(xi[1] == doctest::Approx(1.0).epsilon(1e-15));
  }

  TEST_CASE("post-allocation agrees with threshold removal") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
      const int V = 1 + trial % 4, A = 2 + trial % 4;
      const Vec L = random_subdist(rng, (V + 1) * A, 1.0);
      const Vec active(L.begin(), L.begin() + V * A);
      const double alpha = u(rng) * oracle::total(active) * (trial % 7 == 0 ? 1.5 : 1.0);
      const auto xi = post_alloc_xi(L, V, A, alpha);
      CHECK(std::abs(oracle::total(xi) - 1.0) <= 1e-12);
      const auto removed = xi_op(active, V, A, std::min(alpha, oracle::total(active)));
      for (int v = 0; v < V; ++v) {
        double s = 0;
        for (int a = 0; a < A; ++a) s += removed[v * A + a];
        CHECK(std::abs(xi[v] - s) <= 1e-12);
      }
    }
  }

  TEST_CASE("utilities") {
    Utility lin;
    CHECK(lin(0.4, 0) == doctest::Approx(0.4));
    Utility hyp{UtilityKind::Hyperbolic, 1.0, 1.0};
    CHECK(hyp(0.4, 1) == doctest::Approx(0.2));
    Utility ra{UtilityKind::RiskAverse, 1.0, 1.0};
    CHECK(ra(1.0, 0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(ra(0.0, 0) == 0.0);
    Utility rs{UtilityKind::RiskSeeking, 2.0, 1.0};
    CHECK(rs(1.0, 0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(rs(0.0, 0) == 0.0);
    CHECK(ra(0.5, 0) > 0.5);
    CHECK(rs(0.5, 0) < 0.5);
    for (auto u : {lin, hyp, ra, rs}) {
      ad::Tape t;
      auto s = t.constant(Vec{-0.3, 0.0, 0.25, 0.9});
      auto r = u.record(t, s, 2);
      for (std::size_t i = 0; i < 4; ++i) CHECK(r[i] == doctest::Approx(u(s[i], 2)).epsilon(1e-15));
    }
  }

  TEST_CASE("single-minded winners leave") {
    auto cfg = small_config(3, 3, 2);
    AuctionEnv env(cfg, std::make_shared<FirstPriceMechanism>(2, 3, 0.9));
    auto f = population_flow(env, {}, Policy::uniform(env.dims()));
    ad::Tape t;
    auto th = t.constant(Vec{});
    auto ro = env.rollout(t, th);
    auto rm = ro->advance(0, t.constant(Vec(f.at(0).begin(), f.at(0).end())));
    const auto tr = env.trace({}, f);
    const int S = 4;
    for (int s = 0; s < 3; ++s)
      for (int a = 0; a < 3; ++a) {
        CHECK(rm.kernel[(s * 3 + a) * S + 3] == doctest::Approx(tr[0].p_win[a]).epsilon(1e-15));
        CHECK(rm.kernel[(s * 3 + a) * S + s] == doctest::Approx(1 - tr[0].p_win[a]).epsilon(1e-15));
        CHECK(rm.reward[s * 3 + a] ==
              doctest::Approx(tr[0].p_win[a] * (cfg.value(s) - cfg.bid(a))).epsilon(1e-15));
      }
    for (int a = 0; a < 3; ++a) {
      CHECK(rm.kernel[(3 * 3 + a) * S + 3] == 1.0);
      CHECK(rm.reward[3 * 3 + a] == 0.0);
    }
  }

  TEST_CASE("regenerating bidders re-enter through the prior") {
    auto cfg = small_config(2, 2, 2);
    cfg.dynamics = Dynamics::regenerate(0.3);
    cfg.mu0 = {0.25, 0.75};
    const auto w = valuation_kernel(cfg);
    CHECK(w[2 * 3 + 0] == doctest::Approx(0.3 * 0.25));
    CHECK(w[2 * 3 + 1] == doctest::Approx(0.3 * 0.75));
    CHECK(w[2 * 3 + 2] == doctest::Approx(0.7));
    CHECK(w[0 * 3 + 0] == 1.0);
  }

  TEST_CASE("gaussian drift kernel rows are normalized") {
    auto cfg = small_config(5, 5, 2);
    cfg.dynamics = Dynamics::gaussian_drift(0.9, 0.2);
    const auto w = valuation_kernel(cfg);
    for (int s = 0; s < 5; ++s) {
      double row = 0;
      for (int j = 0; j < 6; ++j) row += w[s * 6 + j];
      CHECK(row == doctest::Approx(1.0).epsilon(1e-14));
      CHECK(w[s * 6 + 5] == 0.0);
      const double z0 = std::exp(-std::pow(0.9 * cfg.value(s) - cfg.value(0), 2) / (2 * 0.04));
      const double z1 = std::exp(-std::pow(0.9 * cfg.value(s) - cfg.value(1), 2) / (2 * 0.04));
      CHECK(w[s * 6 + 0] / w[s * 6 + 1] == doctest::Approx(z0 / z1).epsilon(1e-12));
    }
  }

  TEST_CASE("negative payments are rejected") {
    AuctionEnv env(small_config(2, 2, 1), std::make_shared<FixedMechanism>(Vec{0.3}, Vec{0.0, -0.1}));
    CHECK_THROWS_AS(population_flow(env, {}, Policy::uniform(env.dims())), Error);
  }

  TEST_CASE("revenue of a single round") {
    // Everyone active bids the top bid; payment 0.6 there, alpha 0.5.
    auto cfg = small_config(2, 2, 1);
    AuctionEnv env(cfg, std::make_shared<FixedMechanism>(Vec{0.5}, Vec{0.0, 0.6}));
    Policy pi(env.dims(), {0, 1, 0, 1, 1, 0});
    auto f = population_flow(env, {}, pi);
    CHECK(env.revenue({}, f) == doctest::Approx(0.3).epsilon(1e-15));
    AuctionEnv none(cfg, std::make_shared<FixedMechanism>(Vec{0.0}, Vec{0.0, 0.6}));
    CHECK(none.revenue({}, population_flow(none, {}, pi)) == 0.0);
  }

  TEST_CASE("two-round revenue equals the per-round sum") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> n;
    for (int trial = 0; trial < 20; ++trial) {
      auto cfg = small_config(3, 3, 2);
      const Vec pay{0.0, 0.2, 0.5};
      AuctionEnv env(cfg, std::make_shared<FixedMechanism>(Vec{0.3, 0.4}, pay));
      Vec z(env.dims().table_size());
      for (double& x : z) x = n(rng);
      auto f = population_flow(env, {}, softmax_policy(LogPolicy(env.dims(), z)));
      double expect = 0;
      const double alphas[2] = {0.3, 0.4};
      for (int h = 0; h < 2; ++h) {
        const Vec L(f.at(h).begin(), f.at(h).end());
        const auto nu = col_sums(L, 3, 3);
        for (int a = 0; a < 3; ++a) expect += nu[a] * oracle::p_win_cases(nu, a, alphas[h]) * pay[a];
      }
      CHECK(env.revenue({}, f) == doctest::Approx(expect).epsilon(1e-13));
    }
  }

  TEST_CASE("efficiency and the mixed objective") {
    auto cfg = small_config(3, 3, 1);
    // Truthful bids and first-price payments leave no surplus.
    AuctionEnv fp(cfg, std::make_shared<FirstPriceMechanism>(1, 3, 0.9));
    Policy truthful(fp.dims(), {1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 0, 0});
    auto f = population_flow(fp, {}, truthful);
    CHECK(fp.efficiency({}, f) == doctest::Approx(0.0).epsilon(1e-15));

    // Free goods: efficiency is the allocated valuation mass.
    AuctionEnv free(cfg, std::make_shared<FixedMechanism>(Vec{0.5}, Vec{0.0, 0.0, 0.0}));
    auto g = population_flow(free, {}, truthful);
    const Vec L(g.at(0).begin(), g.at(0).end());
    const auto nu = col_sums(L, 3, 3);
    double expect = 0;
    for (int v = 0; v < 3; ++v) expect += L[v * 3 + v] * oracle::p_win_cases(nu, v, 0.5) * cfg.value(v);
    CHECK(free.efficiency({}, g) == doctest::Approx(expect).epsilon(1e-14));

    auto mix_cfg = cfg;
    mix_cfg.objective = AuctionObjective::Mix;
    AuctionEnv mix(mix_cfg, std::make_shared<FixedMechanism>(Vec{0.5}, Vec{0.0, 0.1, 0.3}));
    AuctionEnv parts(cfg, std::make_shared<FixedMechanism>(Vec{0.5}, Vec{0.0, 0.1, 0.3}));
    auto pi = Policy::uniform(mix.dims());
    auto fm = population_flow(mix, {}, pi);
    CHECK(objective_at(mix, {}, LogPolicy::zeros(mix.dims())) ==
          doctest::Approx(parts.revenue({}, fm) + parts.efficiency({}, fm)).epsilon(1e-14));
  }

  TEST_CASE("no-zero-dominance check") {
    // V = 1, A = 2, H = 1.
    Flow f({1, 2, 2}, {{0.0, 1.0, 0.0, 0.0}});
    auto v = nzd_check(f, Vec{1.0}, 1);
    REQUIRE(v.size() == 1);
    CHECK(v[0].a == 0);
    CHECK(v[0].mass_above == 1.0);
    CHECK(nzd_check(f, Vec{0.5}, 1).empty());
    Flow full({1, 2, 2}, {{0.3, 0.7, 0.0, 0.0}});
    for (double alpha : {0.0, 0.3, 0.7, 1.0}) CHECK(nzd_check(full, Vec{alpha}, 1).empty());
  }

  TEST_CASE("static mechanism") {
    StaticMechanism m(3, 4, 0.6);
    CHECK(m.param_size() == 3 * 4 + 3);
    const Vec zero(m.param_size(), 0.0), nu{0.25, 0.25, 0.25, 0.25};
    double sum = 0;
    for (int h = 0; h < 3; ++h) {
      const auto out = evaluate_mechanism(m, zero, h, nu, 0.6);
      CHECK(out.alpha == doctest::Approx(0.2).epsilon(1e-15));
      for (int a = 0; a < 4; ++a) CHECK(out.payments[a] == doctest::Approx(0.5 * a / 4.0).epsilon(1e-15));
    }
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n(0.0, 2.0);
    Vec th(m.param_size());
    for (double& x : th) x = n(rng);
    for (int h = 0; h < 3; ++h) {
      const auto out = evaluate_mechanism(m, th, h, nu, 0.6);
      sum += out.alpha;
      CHECK(out.payments[0] == 0.0);
      for (int a = 0; a < 4; ++a) CHECK(out.payments[a] <= a / 4.0);
    }
    CHECK(sum == doctest::Approx(0.6).epsilon(1e-14));
  }

  TEST_CASE("first-price mechanism") {
    FirstPriceMechanism m(4, 5, 0.8);
    const auto out = evaluate_mechanism(m, {}, 2, Vec{0.2, 0.2, 0.2, 0.2, 0.2}, 0.4);
    CHECK(out.alpha == doctest::Approx(0.2));
    for (int a = 0; a < 5; ++a) CHECK(out.payments[a] == a / 5.0);
  }

  TEST_CASE("recorded rounds replay bitwise") {
    auto cfg = small_config(4, 4, 3);
    AuctionEnv env(cfg, std::make_shared<StaticMechanism>(3, 4, 0.9));
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n;
    Vec th(env.param_size()), z(env.dims().table_size());
    for (double& x : th) x = n(rng);
    for (double& x : z) x = n(rng);
    ad::Tape t;
    const auto pol = softmax_policy(LogPolicy(env.dims(), z));
    const auto pv = pol.values();
    auto flow = record_flow(t, env, t.constant(th), t.constant(Vec(pv.begin(), pv.end())));
    CHECK(t.replay_matches());
    const auto plain = population_flow(env, th, softmax_policy(LogPolicy(env.dims(), z)));
    for (int h = 0; h < 3; ++h)
      for (std::size_t i = 0; i < plain.at(h).size(); ++i) CHECK(flow.dists[h][i] == plain.at(h)[i]);
  }

  TEST_CASE("invalid configurations") {
    auto c = small_config(3, 3, 2);
    c.alpha_max = 1.0;
    CHECK_THROWS_AS(validate(c), Error);
    c = small_config(3, 3, 2);
    c.mu0 = {0.5, 0.5};
    CHECK_THROWS_AS(validate(c), Error);
    c.mu0 = {0.5, 0.6, -0.1};
    CHECK_THROWS_AS(validate(c), Error);
    c = small_config(3, 1, 2);
    CHECK_THROWS_AS(validate(c), Error);
  }
}
