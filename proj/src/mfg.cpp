#include "mfid/mfg.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mfid/error.hpp"

namespace mfid {

namespace {

constexpr double kDistTol = 1e-12;
constexpr double kDriftTol = 1e-13;

void check_distribution(std::span<const double> p, const std::string& what) {
  double total = 0.0;
  for (double x : p) {
    if (!(x >= -kDistTol)) fail(ErrorCode::Numeric, what + ": negative entry");
    total += x;
  }
  if (std::abs(total - 1.0) > kDistTol) {
    std::ostringstream os;
    os << what << ": mass " << total << " is not 1";
    fail(ErrorCode::Numeric, os.str());
  }
}

ad::IndexMap state_of_pair(std::size_t states, std::size_t actions) {
  std::vector<std::int32_t> idx(states * actions);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<std::int32_t>(i / actions);
  return ad::make_index_map(std::move(idx));
}

void check_kernel(const RoundModel& rm, const Dims& d, int h) {
  const std::size_t sa = d.dist_size();
  const std::size_t s = static_cast<std::size_t>(d.states);
  if (rm.kernel.size() != sa * s || rm.reward.size() != sa)
    fail(ErrorCode::InvalidArgument, "environment returned a round model of the wrong shape");
  auto k = rm.kernel.value();
  for (std::size_t row = 0; row < sa; ++row) {
    double total = 0.0;
    for (std::size_t j = 0; j < s; ++j) {
      const double p = k[row * s + j];
      if (!(p >= -kDistTol)) {
        std::ostringstream os;
        os << "transition kernel at round " << h << " has a negative entry in row " << row;
        fail(ErrorCode::Numeric, os.str());
      }
      total += p;
    }
    if (std::abs(total - 1.0) > kDistTol) {
      std::ostringstream os;
      os << "transition kernel row " << row << " at round " << h << " sums to " << total;
      fail(ErrorCode::Numeric, os.str());
    }
  }
}

}  // namespace

void validate_dims(const Dims& d) {
  require(d.horizon >= 1 && d.states >= 1 && d.actions >= 1, "dims must be positive");
}

Policy::Policy(Dims dims, std::vector<double> probs) : dims_(dims), probs_(std::move(probs)) {
  validate_dims(dims_);
  require(probs_.size() == dims_.table_size(), "policy size does not match dims");
  for (int h = 0; h < dims_.horizon; ++h)
    for (int s = 0; s < dims_.states; ++s) check_distribution(row(h, s), "policy row");
}

Policy Policy::uniform(Dims dims) {
  validate_dims(dims);
  return Policy(dims, std::vector<double>(dims.table_size(), 1.0 / dims.actions));
}

LogPolicy::LogPolicy(Dims dims, std::vector<double> logits)
    : dims_(dims), logits_(std::move(logits)) {
  validate_dims(dims_);
  require(logits_.size() == dims_.table_size(), "logit table size does not match dims");
  for (std::size_t i = 0; i < logits_.size(); ++i) {
    if (!std::isfinite(logits_[i])) {
      std::ostringstream os;
      os << "non-finite logit at flat index " << i;
      fail(ErrorCode::Numeric, os.str());
    }
  }
}

LogPolicy LogPolicy::zeros(Dims dims) {
  validate_dims(dims);
  return LogPolicy(dims, std::vector<double>(dims.table_size(), 0.0));
}

Flow::Flow(Dims dims, std::vector<std::vector<double>> dists)
    : dims_(dims), dists_(std::move(dists)) {
  validate_dims(dims_);
  require(dists_.size() == static_cast<std::size_t>(dims_.horizon), "flow length must equal H");
  for (const auto& l : dists_) {
    require(l.size() == dims_.dist_size(), "flow entry has wrong size");
    check_distribution(l, "flow entry");
  }
}

std::vector<double> Flow::state_marginal(int h) const {
  std::vector<double> m(static_cast<std::size_t>(dims_.states), 0.0);
  const auto& l = dists_[static_cast<std::size_t>(h)];
  for (int s = 0; s < dims_.states; ++s)
    for (int a = 0; a < dims_.actions; ++a)
      m[static_cast<std::size_t>(s)] += l[static_cast<std::size_t>(s) * dims_.actions + a];
  return m;
}

ad::IndexMap row_index(std::size_t n, std::size_t width) {
  std::vector<std::int32_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<std::int32_t>(i / width);
  return ad::make_index_map(std::move(idx));
}

TapeFlow record_flow(ad::Tape& tape, const EnvModel& env, ad::Var theta, ad::Var probs) {
  const Dims d = env.dims();
  const std::size_t sa = d.dist_size();
  const std::size_t s = static_cast<std::size_t>(d.states);
  require(probs.size() == d.table_size(), "policy table does not match environment dims");

  const auto mu0 = env.initial_distribution();
  require(mu0.size() == s, "initial distribution has wrong size");
  check_distribution(mu0, "initial distribution");

  const auto pair_state = state_of_pair(s, static_cast<std::size_t>(d.actions));
  auto rollout = env.rollout(tape, theta);

  TapeFlow out;
  ad::Var dist = tape.mul(tape.gather(tape.constant(mu0), pair_state), tape.slice(probs, 0, sa));
  for (int h = 0; h < d.horizon; ++h) {
    out.dists.push_back(dist);
    RoundModel rm = rollout->advance(h, dist);
    check_kernel(rm, d, h);
    out.rounds.push_back(rm);
    if (h + 1 == d.horizon) break;

    ad::Var marginal = tape.vecmat(dist, rm.kernel, sa, s);
    double total = 0.0;
    for (double m : marginal.value()) {
      if (m < -kDistTol) {
        std::ostringstream os;
        os << "negative population mass " << m << " at round " << h + 1;
        fail(ErrorCode::Numeric, os.str());
      }
      total += m;
    }
    const double drift = std::abs(total - 1.0);
    if (drift > kDriftTol) {
      out.drift = std::max(out.drift, drift);
      marginal = tape.div(marginal, tape.sum(marginal));
    }
    dist = tape.mul(tape.gather(marginal, pair_state),
                    tape.slice(probs, static_cast<std::size_t>(h + 1) * sa, sa));
  }
  return out;
}

std::vector<RoundModel> record_rounds(ad::Tape& tape, const EnvModel& env, ad::Var theta,
                                      std::span<const ad::Var> dists) {
  const Dims d = env.dims();
  require(dists.size() == static_cast<std::size_t>(d.horizon), "flow length must equal H");
  auto rollout = env.rollout(tape, theta);
  std::vector<RoundModel> rounds;
  for (int h = 0; h < d.horizon; ++h) {
    RoundModel rm = rollout->advance(h, dists[static_cast<std::size_t>(h)]);
    check_kernel(rm, d, h);
    rounds.push_back(rm);
  }
  return rounds;
}

TapeQ record_q(ad::Tape& tape, const Dims& d, std::span<const RoundModel> rounds, ad::Var probs,
               ad::Var entropy, double tau) {
  const std::size_t sa = d.dist_size();
  const std::size_t s = static_cast<std::size_t>(d.states);
  const auto rows = row_index(sa, static_cast<std::size_t>(d.actions));
  std::vector<ad::Var> qs(static_cast<std::size_t>(d.horizon));
  std::vector<ad::Var> vs(static_cast<std::size_t>(d.horizon));
  ad::Var v_next;
  for (int h = d.horizon - 1; h >= 0; --h) {
    const auto& rm = rounds[static_cast<std::size_t>(h)];
    ad::Var q = v_next.valid() ? tape.add(rm.reward, tape.matvec(rm.kernel, v_next, sa, s))
                               : rm.reward;
    ad::Var pi_h = tape.slice(probs, static_cast<std::size_t>(h) * sa, sa);
    ad::Var v = tape.scatter_add(tape.mul(pi_h, q), rows, s);
    if (tau > 0.0) {
      v = tape.add(v, tape.scale(tape.slice(entropy, static_cast<std::size_t>(h) * s, s), tau));
    }
    qs[static_cast<std::size_t>(h)] = q;
    vs[static_cast<std::size_t>(h)] = v;
    v_next = v;
  }
  return {tape.concat(qs), tape.concat(vs)};
}

ad::Var record_q_map(ad::Tape& tape, const EnvModel& env, ad::Var theta, ad::Var logits,
                     double tau) {
  const Dims d = env.dims();
  const auto width = static_cast<std::size_t>(d.actions);
  ad::Var probs = tape.softmax_rows(logits, width);
  ad::Var entropy;
  if (tau > 0.0) {
    ad::Var logp = tape.log_softmax_rows(logits, width);
    entropy = tape.scale(
        tape.scatter_add(tape.mul(probs, logp), row_index(d.table_size(), width),
                         static_cast<std::size_t>(d.horizon) * d.states),
        -1.0);
  }
  TapeFlow flow = record_flow(tape, env, theta, probs);
  return record_q(tape, d, flow.rounds, probs, entropy, tau).q;
}

ad::Var record_objective(ad::Tape& tape, const EnvModel& env, ad::Var theta, ad::Var logits) {
  const Dims d = env.dims();
  ad::Var probs = tape.softmax_rows(logits, static_cast<std::size_t>(d.actions));
  TapeFlow flow = record_flow(tape, env, theta, probs);
  ad::Var g = env.objective(tape, theta, flow.dists);
  require(g.size() == 1, "objective must be scalar");
  return g;
}

Policy softmax_policy(const LogPolicy& logits) {
  ad::Tape tape;
  auto z = tape.constant(std::vector<double>(logits.values().begin(), logits.values().end()));
  auto p = tape.softmax_rows(z, static_cast<std::size_t>(logits.dims().actions));
  return Policy(logits.dims(), std::vector<double>(p.value().begin(), p.value().end()));
}

Flow population_flow(const EnvModel& env, std::span<const double> theta, const Policy& pi) {
  require(pi.dims() == env.dims(), "policy dims do not match environment");
  require(theta.size() == env.param_size(), "parameter vector has wrong size");
  ad::Tape tape;
  auto th = tape.constant(std::vector<double>(theta.begin(), theta.end()));
  auto probs = tape.constant(std::vector<double>(pi.values().begin(), pi.values().end()));
  TapeFlow tf = record_flow(tape, env, th, probs);
  std::vector<std::vector<double>> dists;
  for (const auto& v : tf.dists) dists.emplace_back(v.value().begin(), v.value().end());
  Flow flow(env.dims(), std::move(dists));
  flow.set_renormalization_drift(tf.drift);
  return flow;
}

std::vector<double> policy_entropy(const Policy& pi) {
  const Dims d = pi.dims();
  std::vector<double> ent(static_cast<std::size_t>(d.horizon) * d.states, 0.0);
  for (int h = 0; h < d.horizon; ++h)
    for (int s = 0; s < d.states; ++s) {
      double e = 0.0;
      for (double p : pi.row(h, s))
        if (p > 0.0) e -= p * std::log(p);
      ent[static_cast<std::size_t>(h) * d.states + s] = e;
    }
  return ent;
}

QTable q_values(const EnvModel& env, std::span<const double> theta, const Flow& flow,
                const Policy& pi, double tau) {
  require(tau >= 0.0, "tau must be nonnegative");
  require(pi.dims() == env.dims() && flow.dims() == env.dims(), "dims do not match environment");
  require(theta.size() == env.param_size(), "parameter vector has wrong size");
  ad::Tape tape;
  auto th = tape.constant(std::vector<double>(theta.begin(), theta.end()));
  std::vector<ad::Var> dists;
  for (const auto& l : flow.dists()) dists.push_back(tape.constant(l));
  auto rounds = record_rounds(tape, env, th, dists);
  auto probs = tape.constant(std::vector<double>(pi.values().begin(), pi.values().end()));
  auto ent = tape.constant(policy_entropy(pi));
  TapeQ tq = record_q(tape, env.dims(), rounds, probs, ent, tau);
  return QTable{env.dims(), std::vector<double>(tq.q.value().begin(), tq.q.value().end()),
                std::vector<double>(tq.v.value().begin(), tq.v.value().end())};
}

BestResponse best_response(const EnvModel& env, std::span<const double> theta, const Flow& flow,
                           double tau) {
  require(tau >= 0.0, "tau must be nonnegative");
  require(flow.dims() == env.dims(), "flow dims do not match environment");
  require(theta.size() == env.param_size(), "parameter vector has wrong size");
  const Dims d = env.dims();
  const std::size_t S = static_cast<std::size_t>(d.states);
  const std::size_t A = static_cast<std::size_t>(d.actions);

  ad::Tape tape;
  auto th = tape.constant(std::vector<double>(theta.begin(), theta.end()));
  std::vector<ad::Var> dists;
  for (const auto& l : flow.dists()) dists.push_back(tape.constant(l));
  auto rounds = record_rounds(tape, env, th, dists);

  std::vector<double> probs(d.table_size(), 0.0);
  std::vector<double> values(static_cast<std::size_t>(d.horizon) * S, 0.0);
  std::vector<double> v_next(S, 0.0);
  std::vector<double> q(A);
  for (int h = d.horizon - 1; h >= 0; --h) {
    const auto kernel = rounds[static_cast<std::size_t>(h)].kernel.value();
    const auto reward = rounds[static_cast<std::size_t>(h)].reward.value();
    std::vector<double> v(S, 0.0);
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t a = 0; a < A; ++a) {
        const std::size_t row = s * A + a;
        double cont = 0.0;
        if (h + 1 < d.horizon)
          for (std::size_t j = 0; j < S; ++j) cont += kernel[row * S + j] * v_next[j];
        q[a] = reward[row] + cont;
      }
      double* pi = probs.data() + d.index(h, static_cast<int>(s), 0);
      const std::size_t best = static_cast<std::size_t>(std::max_element(q.begin(), q.end()) - q.begin());
      if (tau > 0.0) {
        const double mx = q[best];
        double z = 0.0;
        for (std::size_t a = 0; a < A; ++a) z += std::exp((q[a] - mx) / tau);
        for (std::size_t a = 0; a < A; ++a) pi[a] = std::exp((q[a] - mx) / tau) / z;
        v[s] = mx + tau * std::log(z);
      } else {
        pi[best] = 1.0;
        v[s] = q[best];
      }
    }
    std::copy(v.begin(), v.end(), values.begin() + static_cast<std::ptrdiff_t>(h * S));
    v_next = std::move(v);
  }
  std::vector<double> v0(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(S));
  return BestResponse{Policy(d, std::move(probs)), std::move(v0), std::move(values)};
}

double expected_value(const EnvModel& env, std::span<const double> theta, const Flow& flow,
                      const Policy& pi, double tau) {
  const QTable qt = q_values(env, theta, flow, pi, tau);
  const auto mu0 = env.initial_distribution();
  double total = 0.0;
  for (std::size_t s = 0; s < mu0.size(); ++s) total += mu0[s] * qt.v[s];
  return total;
}

double exploitability(const EnvModel& env, std::span<const double> theta, const Policy& pi,
                      double tau) {
  const Flow flow = population_flow(env, theta, pi);
  const BestResponse br = best_response(env, theta, flow, tau);
  const auto mu0 = env.initial_distribution();
  double best = 0.0;
  for (std::size_t s = 0; s < mu0.size(); ++s) best += mu0[s] * br.value[s];
  return best - expected_value(env, theta, flow, pi, tau);
}

std::vector<double> omd_combine(std::span<const double> zeta, std::span<const double> update,
                                double eta, double tau) {
  require(zeta.size() == update.size(), "omd_combine: size mismatch");
  const double memory = 1.0 - eta * tau;
  std::vector<double> out(zeta.size());
  for (std::size_t i = 0; i < zeta.size(); ++i) out[i] = memory * zeta[i] + eta * update[i];
  return out;
}

void check_step_sizes(double eta, double tau) {
  require(eta > 0.0, "eta must be positive");
  require(tau >= 0.0, "tau must be nonnegative");
  require(eta * tau <= 1.0, "eta * tau must not exceed 1");
}

LogPolicy omd_step(const EnvModel& env, std::span<const double> theta, const LogPolicy& zeta,
                   double eta, double tau) {
  check_step_sizes(eta, tau);
  require(zeta.dims() == env.dims(), "logit dims do not match environment");
  require(theta.size() == env.param_size(), "parameter vector has wrong size");
  ad::Tape tape;
  auto th = tape.constant(std::vector<double>(theta.begin(), theta.end()));
  auto z = tape.constant(std::vector<double>(zeta.values().begin(), zeta.values().end()));
  auto q = record_q_map(tape, env, th, z, tau);
  return LogPolicy(zeta.dims(), omd_combine(zeta.values(), q.value(), eta, tau));
}

LogPolicy omd_iterate(const EnvModel& env, std::span<const double> theta, const LogPolicy& zeta0,
                      double eta, double tau, int iterations) {
  require(iterations >= 0, "iteration count must be nonnegative");
  check_step_sizes(eta, tau);
  LogPolicy z = zeta0;
  for (int t = 0; t < iterations; ++t) z = omd_step(env, theta, z, eta, tau);
  return z;
}

}  // namespace mfid
