#include "mfid/adjoint.hpp"

#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

#include "mfid/error.hpp"

namespace mfid {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// One application of the iteration. Every forward state, including those
// recomputed on the backward pass, goes through here.
std::vector<double> advance(const IterationProblem& p, std::span<const double> theta,
                            std::span<const double> zeta, const AdjointConfig& cfg, int step) {
  ad::Tape tape;
  auto th = tape.constant(std::vector<double>(theta.begin(), theta.end()));
  auto z = tape.constant(std::vector<double>(zeta.begin(), zeta.end()));
  auto f = p.update(tape, th, z);
  if (f.size() != p.state_size) fail(ErrorCode::InvalidArgument, "update returned wrong size");
  auto next = omd_combine(zeta, f.value(), cfg.eta, cfg.tau);
  for (std::size_t i = 0; i < next.size(); ++i) {
    if (!std::isfinite(next[i])) {
      std::ostringstream os;
      os << "non-finite logit at iteration " << step + 1 << ", index " << i;
      fail(ErrorCode::Numeric, os.str());
    }
  }
  return next;
}

struct Pullback {
  double value = 0.0;
  std::vector<double> d_theta;
  std::vector<double> d_zeta;
};

Pullback pull(const StateMap& f, std::span<const double> theta, std::span<const double> zeta,
              std::span<const double> cotangent) {
  ad::Tape tape;
  auto th = tape.input(std::vector<double>(theta.begin(), theta.end()));
  auto z = tape.input(std::vector<double>(zeta.begin(), zeta.end()));
  auto out = f(tape, th, z);
  Pullback res;
  if (out.size() == 1) res.value = out.scalar();
  auto adj = tape.vjp(out, cotangent);
  res.d_theta = adj.of(th);
  res.d_zeta = adj.of(z);
  return res;
}

void check_inputs(const IterationProblem& p, std::span<const double> theta,
                  std::span<const double> zeta0) {
  require(static_cast<bool>(p.update) && static_cast<bool>(p.objective),
          "iteration problem needs update and objective");
  require(theta.size() == p.param_size, "parameter vector has wrong size");
  require(zeta0.size() == p.state_size, "initial state has wrong size");
}

}  // namespace

int AdjointConfig::default_stride(int T) {
  return static_cast<int>(std::ceil(std::sqrt(static_cast<double>(T) + 1.0)));
}

AdjointConfig AdjointConfig::with_default_stride(int T, double eta, double tau) {
  return AdjointConfig{T, eta, tau, default_stride(T)};
}

void validate(const AdjointConfig& cfg) {
  require(cfg.T >= 0, "T must be nonnegative");
  check_step_sizes(cfg.eta, cfg.tau);
  if (cfg.checkpoint_stride) {
    require(*cfg.checkpoint_stride >= 1, "checkpoint stride must be positive");
    require(*cfg.checkpoint_stride <= cfg.T + 1, "checkpoint stride must not exceed T + 1");
  }
}

std::vector<double> iterate_state(const IterationProblem& p, std::span<const double> theta,
                                  std::span<const double> zeta0, const AdjointConfig& cfg) {
  validate(cfg);
  check_inputs(p, theta, zeta0);
  std::vector<double> z(zeta0.begin(), zeta0.end());
  for (int t = 0; t < cfg.T; ++t) z = advance(p, theta, z, cfg, t);
  return z;
}

AmidResult adjoint_gradient(const IterationProblem& p, std::span<const double> theta,
                            std::span<const double> zeta0, const AdjointConfig& cfg) {
  validate(cfg);
  check_inputs(p, theta, zeta0);
  const int T = cfg.T;
  const int stride = cfg.checkpoint_stride ? *cfg.checkpoint_stride : 1;
  AmidResult res;
  auto& diag = res.diagnostics;

  // Forward: keep zeta_t for t % stride == 0 (all of them under full cache).
  auto start = Clock::now();
  std::vector<std::vector<double>> saved;
  saved.emplace_back(zeta0.begin(), zeta0.end());
  std::vector<double> z(zeta0.begin(), zeta0.end());
  for (int t = 0; t < T; ++t) {
    z = advance(p, theta, z, cfg, t);
    if ((t + 1) % stride == 0 && t + 1 < T) saved.push_back(z);
  }
  diag.checkpoints = saved.size();
  // The final state is held alongside the checkpoints until G is pulled back.
  diag.peak_cached_states = saved.size() + (T > 0 ? 1 : 0);

  const double one = 1.0;
  Pullback g = pull(p.objective, theta, z, std::span<const double>(&one, 1));
  res.objective_value = g.value;
  res.final_logits = std::move(z);
  diag.forward_seconds = seconds_since(start);

  start = Clock::now();
  std::vector<double> s = std::move(g.d_theta);
  std::vector<double> a = std::move(g.d_zeta);
  const double memory = 1.0 - cfg.eta * cfg.tau;

  // Backward over segments [c*stride, min((c+1)*stride, T)).
  for (int seg = static_cast<int>(saved.size()) - 1; seg >= 0; --seg) {
    const int begin = seg * stride;
    const int end = std::min(begin + stride, T);
    std::vector<std::vector<double>> states;
    states.reserve(static_cast<std::size_t>(end - begin));
    states.push_back(std::move(saved[static_cast<std::size_t>(seg)]));
    saved.pop_back();
    for (int t = begin; t + 1 < end; ++t) {
      states.push_back(advance(p, theta, states.back(), cfg, t));
      if (cfg.checkpoint_stride) ++diag.recomputed_steps;
    }
    diag.peak_cached_states =
        std::max(diag.peak_cached_states, saved.size() + states.size());
    for (int t = end - 1; t >= begin; --t) {
      Pullback pb = pull(p.update, theta, states[static_cast<std::size_t>(t - begin)], a);
      for (std::size_t i = 0; i < s.size(); ++i) s[i] += cfg.eta * pb.d_theta[i];
      for (std::size_t i = 0; i < a.size(); ++i) a[i] = memory * a[i] + cfg.eta * pb.d_zeta[i];
    }
  }
  if (!cfg.checkpoint_stride) diag.peak_cached_states = static_cast<std::size_t>(T) + 1;
  diag.backward_seconds = seconds_since(start);

  for (double x : s)
    if (!std::isfinite(x)) fail(ErrorCode::Numeric, "non-finite design gradient");
  res.grad_theta = std::move(s);
  return res;
}

MirrorMap MirrorMap::identity() {
  auto id = [](ad::Tape&, ad::Var x) { return x; };
  return MirrorMap{id, id};
}

double mirror_roundtrip_error(const MirrorMap& mirror,
                              std::span<const std::vector<double>> probes) {
  double worst = 0.0;
  for (const auto& x : probes) {
    ad::Tape tape;
    auto in = tape.constant(x);
    auto back = mirror.inverse(tape, mirror.forward(tape, in));
    require(back.size() == x.size(), "mirror map changes dimension");
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double e = std::abs(back[i] - x[i]);
      worst = std::isfinite(e) ? std::max(worst, e) : INFINITY;
    }
  }
  return worst;
}

AmidResult adjoint_gradient_bregman(const IterationProblem& p, std::span<const double> theta,
                                    std::span<const double> zeta0, const AdjointConfig& cfg,
                                    const MirrorMap& mirror) {
  require(static_cast<bool>(mirror.forward) && static_cast<bool>(mirror.inverse),
          "mirror map needs forward and inverse");
  check_inputs(p, theta, zeta0);

  std::vector<std::vector<double>> probes;
  {
    ad::Tape tape;
    auto x = mirror.inverse(tape, tape.constant(std::vector<double>(zeta0.begin(), zeta0.end())));
    probes.emplace_back(x.value().begin(), x.value().end());
  }
  std::mt19937_64 rng(0x6d6972726f72ULL);
  std::normal_distribution<double> normal;
  for (int k = 0; k < 3; ++k) {
    std::vector<double> x(zeta0.size());
    for (double& v : x) v = normal(rng);
    probes.push_back(std::move(x));
  }
  const double err = mirror_roundtrip_error(mirror, probes);
  if (!(err <= 1e-8)) {
    std::ostringstream os;
    os << "mirror inverse fails round trip (error " << err << ")";
    fail(ErrorCode::Tolerance, os.str());
  }

  IterationProblem bar = p;
  bar.update = [f = p.update, inv = mirror.inverse](ad::Tape& t, ad::Var th, ad::Var z) {
    return f(t, th, inv(t, z));
  };
  bar.objective = [g = p.objective, inv = mirror.inverse](ad::Tape& t, ad::Var th, ad::Var z) {
    return g(t, th, inv(t, z));
  };
  return adjoint_gradient(bar, theta, zeta0, cfg);
}

IterationProblem make_omd_problem(const EnvModel& env, double tau) {
  IterationProblem p;
  p.param_size = env.param_size();
  p.state_size = env.dims().table_size();
  p.update = [&env, tau](ad::Tape& t, ad::Var th, ad::Var z) {
    return record_q_map(t, env, th, z, tau);
  };
  p.objective = [&env](ad::Tape& t, ad::Var th, ad::Var z) {
    return record_objective(t, env, th, z);
  };
  return p;
}

LogPolicy t_step_logits(const EnvModel& env, std::span<const double> theta,
                        const LogPolicy& zeta0, const AdjointConfig& cfg) {
  require(zeta0.dims() == env.dims(), "logit dims do not match environment");
  auto z = iterate_state(make_omd_problem(env, cfg.tau), theta, zeta0.values(), cfg);
  return LogPolicy(env.dims(), std::move(z));
}

double t_step_objective(const EnvModel& env, std::span<const double> theta,
                        const LogPolicy& zeta0, const AdjointConfig& cfg) {
  return objective_at(env, theta, t_step_logits(env, theta, zeta0, cfg));
}

double objective_at(const EnvModel& env, std::span<const double> theta, const LogPolicy& z) {
  ad::Tape tape;
  auto th = tape.constant(std::vector<double>(theta.begin(), theta.end()));
  auto zz = tape.constant(std::vector<double>(z.values().begin(), z.values().end()));
  return record_objective(tape, env, th, zz).scalar();
}

AmidResult amid_gradient(const EnvModel& env, std::span<const double> theta,
                         const LogPolicy& zeta0, const AdjointConfig& cfg) {
  require(zeta0.dims() == env.dims(), "logit dims do not match environment");
  return adjoint_gradient(make_omd_problem(env, cfg.tau), theta, zeta0.values(), cfg);
}

AmidResult amid_gradient_bregman(const EnvModel& env, std::span<const double> theta,
                                 const LogPolicy& zeta0, const AdjointConfig& cfg,
                                 const MirrorMap& mirror) {
  require(zeta0.dims() == env.dims(), "logit dims do not match environment");
  return adjoint_gradient_bregman(make_omd_problem(env, cfg.tau), theta, zeta0.values(), cfg,
                                  mirror);
}

}  // namespace mfid
