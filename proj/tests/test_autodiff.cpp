#include <doctest.h>

#include <cmath>
#include <random>

#include "mfid/autodiff.hpp"

using namespace mfid::ad;

namespace {

double one = 1.0;
std::span<const double> unit() { return {&one, 1}; }

std::vector<double> grad_of(const ScalarProgram& f, std::vector<double> x) {
  Tape t;
  auto in = t.input(std::move(x));
  auto y = f(t, in);
  return t.vjp(y, unit()).of(in);
}

// A mixed program exercising most ops; smooth at generic inputs.
Var mixed(Tape& t, Var x) {
  auto a = t.exp(t.scale(t.slice(x, 0, 3), 0.5));
  auto b = t.sigmoid(t.slice(x, 3, 3));
  auto c = t.mul(a, b) + t.div(b, t.shift(a, 1.0));
  auto m = t.softmax_rows(t.concat(std::vector<Var>{c, x}), 3);
  auto l = t.log_softmax_rows(x, 2);
  auto idx = make_index_map({5, 0, 2, 2});
  auto g = t.gather(x, idx);
  auto s = t.scatter_add(g, make_index_map({1, 0, 1, 2}), 3);
  auto mv = t.matvec(t.slice(x, 0, 6), t.slice(x, 3, 3), 2, 3);
  auto vm = t.vecmat(t.slice(x, 0, 2), t.slice(x, 0, 6), 2, 3);
  return t.sum(m * m) + t.sum(l) + t.sum(s * s) + t.sum(mv) + t.sum(t.exp(vm)) +
         t.sum(t.log(t.shift(t.mul(x, x), 1.0)));
}

}  // namespace

TEST_SUITE("autodiff") {
  TEST_CASE("identity program records one node") {
    auto rec = record([](Tape&, std::span<const Var> in) { return std::vector<Var>{in[0]}; },
                      {{1.5, -2.0}});
    CHECK(rec.tape->num_nodes() == 1);
    CHECK(rec.outputs[0][0] == 1.5);
    CHECK(rec.outputs[0][1] == -2.0);
  }

  TEST_CASE("sum of squares value and gradient") {
    ScalarProgram f = [](Tape& t, Var x) { return t.sum(x * x); };
    Tape t;
    auto x = t.input({1.0, 2.0});
    CHECK(f(t, x).scalar() == 5.0);
    const auto g = grad_of(f, {1.0, 2.0});
    CHECK(g[0] == 2.0);
    CHECK(g[1] == 4.0);
  }

  TEST_CASE("sum gives all-ones gradient") {
    const auto g = grad_of([](Tape& t, Var x) { return t.sum(x); }, {0.3, -1.0, 7.0});
    for (double v : g) CHECK(v == 1.0);
  }

  TEST_CASE("softmax row Jacobian at (0,0)") {
    Tape t;
    auto x = t.input({0.0, 0.0});
    auto y = t.softmax_rows(x, 2);
    const std::vector<double> u{1.0, 0.0};
    const auto g = t.vjp(y, u).of(x);
    CHECK(g[0] == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(g[1] == doctest::Approx(-0.25).epsilon(1e-15));
  }

  TEST_CASE("domain errors carry the node index") {
    Tape t;
    auto x = t.input({1.0, 0.0});
    auto z = t.input({0.0});
    try {
      t.div(x, z);
      FAIL("division by zero accepted");
    } catch (const TapeError& e) {
      CHECK(e.node() == 2);
    }
    try {
      t.log(x);
      FAIL("log of zero accepted");
    } catch (const TapeError& e) {
      CHECK(e.node() == 2);
    }
    CHECK_THROWS_AS(t.add(x, t.input({1.0, 2.0, 3.0})), TapeError);
  }

  TEST_CASE("vjp rejects cotangent of the wrong size") {
    Tape t;
    auto x = t.input({1.0, 2.0});
    const std::vector<double> u{1.0};
    CHECK_THROWS_AS(t.vjp(x, u), std::invalid_argument);
  }

  TEST_CASE("ratio conventions") {
    Tape t;
    auto a = t.input({0.0, 2.0, -2.0, 3.0});
    auto b = t.input({0.0, 0.0, 0.0, 2.0});
    auto r = t.ratio(a, b);
    CHECK(r[0] == 0.0);
    CHECK(std::isinf(r[1]));
    CHECK(r[1] > 0);
    CHECK(std::isinf(r[2]));
    CHECK(r[2] < 0);
    CHECK(r[3] == 1.5);
    const std::vector<double> u{1, 1, 1, 1};
    auto adj = t.vjp(r, u);
    const auto ga = adj.of(a);
    CHECK(ga[0] == 0.0);
    CHECK(ga[1] == 0.0);
    CHECK(ga[3] == 0.5);
  }

  TEST_CASE("clamp and relu subgradients") {
    Tape t;
    auto x = t.input({-1.0, 0.0, 0.5, 1.0, 2.0});
    auto c = t.clamp(x, 0.0, 1.0);
    const std::vector<double> u(5, 1.0);
    const auto g = t.vjp(c, u).of(x);
    CHECK(g == std::vector<double>{0, 1, 1, 1, 0});
    Tape t2;
    auto y = t2.input({-1.0, 0.0, 2.0});
    auto r = t2.relu(y);
    const std::vector<double> u3(3, 1.0);
    CHECK(t2.vjp(r, u3).of(y) == std::vector<double>{0, 1, 1});
  }

  TEST_CASE("gradcheck on quadratic and linear programs") {
    const std::vector<double> x{0.3, -1.2, 2.0};
    auto quad = gradcheck([](Tape& t, Var v) { return t.sum(t.mul(v, v)) + t.sum(v); }, x, 1e-5);
    CHECK(quad.max_rel_error <= 1e-8);
    // Dyadic point and step keep every probe exact.
    const std::vector<double> xd{0.25, -1.5, 2.0};
    auto lin = gradcheck([](Tape& t, Var v) { return t.sum(t.scale(v, 3.0)); }, xd, std::ldexp(1.0, -17));
    CHECK(lin.max_rel_error <= 1e-12);
  }

  TEST_CASE("gradcheck on a mixed program") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> n(0.0, 0.7);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> x(6);
      for (double& v : x) v = n(rng);
      auto rep = gradcheck(mixed, x, 1e-6);
      CHECK(rep.nonfinite.empty());
      CHECK(rep.max_rel_error <= 1e-6);
    }
  }

  TEST_CASE("gradcheck reports non-finite probes") {
    auto rep = gradcheck([](Tape& t, Var v) { return t.sum(t.log(v)); },
                         std::vector<double>{5e-4, 1.0}, 1e-3);
    REQUIRE(rep.nonfinite.size() == 1);
    CHECK(rep.nonfinite[0] == 0);
    CHECK(rep.max_rel_error <= 1e-6);
  }

  TEST_CASE("replay reproduces recorded values bitwise") {
    Tape t;
    auto x = t.input({0.1, 0.2, -0.3, 0.4, 0.5, -0.6});
    mixed(t, x);
    CHECK(t.replay_matches());
  }

  TEST_CASE("recording twice gives identical tapes") {
    const std::vector<double> x{0.1, 0.2, -0.3, 0.4, 0.5, -0.6};
    Tape a, b;
    auto ya = mixed(a, a.input(x));
    auto yb = mixed(b, b.input(x));
    REQUIRE(a.num_nodes() == b.num_nodes());
    for (std::size_t i = 0; i < a.num_nodes(); ++i) {
      CHECK(a.node(i).op == b.node(i).op);
      CHECK(a.node(i).value == b.node(i).value);
    }
    CHECK(ya.scalar() == yb.scalar());
  }

  TEST_CASE("vjp is linear in the cotangent") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n;
    Tape t;
    std::vector<double> xv(6);
    for (double& v : xv) v = n(rng);
    auto x = t.input(xv);
    auto y = t.softmax_rows(t.mul(t.exp(x), t.sigmoid(x)), 3);
    std::vector<double> u(6), w(6), mix(6);
    const double al = 0.7, be = -1.3;
    for (int i = 0; i < 6; ++i) {
      u[i] = n(rng);
      w[i] = n(rng);
      mix[i] = al * u[i] + be * w[i];
    }
    const auto gu = t.vjp(y, u).of(x), gw = t.vjp(y, w).of(x), gm = t.vjp(y, mix).of(x);
    for (int i = 0; i < 6; ++i) CHECK(std::abs(gm[i] - (al * gu[i] + be * gw[i])) <= 1e-12);
  }

  TEST_CASE("vjp through a composition equals chained vjps") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n;
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> xv(4);
      for (double& v : xv) v = n(rng);
      auto f = [](Tape& t, Var x) { return t.sigmoid(t.matvec(t.constant({1, 2, -1, 0.5, 0.3, -2, 1, 1}), x, 2, 4)); };
      auto g = [](Tape& t, Var y) { return t.sum(t.exp(y) * y); };
      Tape whole;
      auto xw = whole.input(xv);
      const auto direct = whole.vjp(g(whole, f(whole, xw)), unit()).of(xw);

      Tape tf;
      auto xf = tf.input(xv);
      auto yf = f(tf, xf);
      Tape tg;
      auto yg = tg.input(std::vector<double>(yf.value().begin(), yf.value().end()));
      const auto cy = tg.vjp(g(tg, yg), unit()).of(yg);
      const auto chained = tf.vjp(yf, cy).of(xf);
      for (std::size_t i = 0; i < xv.size(); ++i) CHECK(std::abs(direct[i] - chained[i]) <= 1e-12);
    }
  }

  TEST_CASE("broadcasting scalars accumulate gradients") {
    Tape t;
    auto s = t.input({2.0});
    auto x = t.input({1.0, 2.0, 3.0});
    auto y = t.sum(t.mul(s, x));
    auto adj = t.vjp(y, unit());
    CHECK(adj.of(s)[0] == 6.0);
    CHECK(adj.of(x) == std::vector<double>{2.0, 2.0, 2.0});
  }

  TEST_CASE("vars from another tape are rejected") {
    Tape a, b;
    auto x = a.input({1.0});
    CHECK_THROWS_AS(b.exp(x), std::invalid_argument);
  }

  TEST_CASE("index maps are bounds checked") {
    Tape t;
    auto x = t.input({1.0, 2.0});
    CHECK_THROWS_AS(t.gather(x, make_index_map({0, 2})), TapeError);
    CHECK_THROWS_AS(t.scatter_add(x, make_index_map({0, 3}), 3), TapeError);
    CHECK_THROWS_AS(t.slice(x, 1, 2), TapeError);
  }
}
