#include "mfid/auction.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mfid/error.hpp"

namespace mfid {

namespace {

constexpr double kNzdTol = 1e-12;

std::vector<double> bid_grid(int A) {
  std::vector<double> b(static_cast<std::size_t>(A));
  for (int j = 0; j < A; ++j) b[static_cast<std::size_t>(j)] = static_cast<double>(j) / A;
  return b;
}

// U[a][a'] = 1 for a' > a, so U nu gives the mass strictly above each bid.
const std::vector<double>& upper_mask(std::size_t A) {
  thread_local std::vector<std::vector<double>> cache;
  if (cache.size() <= A) cache.resize(A + 1);
  auto& u = cache[A];
  if (u.empty()) {
    u.assign(A * A, 0.0);
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t b = a + 1; b < A; ++b) u[a * A + b] = 1.0;
  }
  return u;
}

void check_payments(std::span<const double> p, int h) {
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (!(p[j] >= 0.0)) {
      std::ostringstream os;
      os << "mechanism returned payment " << p[j] << " at round " << h << ", bid " << j;
      fail(ErrorCode::Numeric, os.str());
    }
  }
}

}  // namespace

double Utility::operator()(double x, int h) const {
  switch (kind) {
    case UtilityKind::Linear:
      return x;
    case UtilityKind::RiskAverse:
      return (1.0 - std::exp(-beta * x)) / (1.0 - std::exp(-beta));
    case UtilityKind::RiskSeeking:
      return (std::exp(beta * x) - 1.0) / (std::exp(beta) - 1.0);
    case UtilityKind::Hyperbolic:
      return x / (1.0 + lambda * h);
  }
  return x;
}

ad::Var Utility::record(ad::Tape& tape, ad::Var x, int h) const {
  switch (kind) {
    case UtilityKind::Linear:
      return x;
    case UtilityKind::RiskAverse:
      return tape.scale(tape.shift(tape.scale(tape.exp(tape.scale(x, -beta)), -1.0), 1.0),
                        1.0 / (1.0 - std::exp(-beta)));
    case UtilityKind::RiskSeeking:
      return tape.scale(tape.shift(tape.exp(tape.scale(x, beta)), -1.0),
                        1.0 / (std::exp(beta) - 1.0));
    case UtilityKind::Hyperbolic:
      return tape.scale(x, 1.0 / (1.0 + lambda * h));
  }
  return x;
}

void validate(const AuctionConfig& cfg) {
  require(cfg.V >= 1 && cfg.A >= 2, "auction: need |V| >= 1 and |A| >= 2");
  require(cfg.H >= 1, "auction: H must be positive");
  require(cfg.alpha_max > 0.0 && cfg.alpha_max < 1.0, "auction: alpha_max must lie in (0, 1)");
  if (!cfg.mu0.empty()) {
    require(cfg.mu0.size() == static_cast<std::size_t>(cfg.V), "auction: mu0 must have |V| entries");
    double total = 0.0;
    for (double x : cfg.mu0) {
      require(x >= 0.0, "auction: mu0 has a negative entry");
      total += x;
    }
    require(std::abs(total - 1.0) <= 1e-12, "auction: mu0 must sum to 1");
  }
  if (cfg.utility.kind == UtilityKind::RiskAverse || cfg.utility.kind == UtilityKind::RiskSeeking)
    require(cfg.utility.beta > 0.0, "auction: utility beta must be positive");
  if (cfg.utility.kind == UtilityKind::Hyperbolic)
    require(cfg.utility.lambda >= 0.0, "auction: utility lambda must be nonnegative");
  require(cfg.dynamics.rho >= 0.0 && cfg.dynamics.rho <= 1.0, "auction: rho must lie in [0, 1]");
  if (cfg.dynamics.drift) require(cfg.dynamics.sigma > 0.0, "auction: sigma must be positive");
}

std::vector<double> valuation_prior(const AuctionConfig& cfg) {
  if (!cfg.mu0.empty()) return cfg.mu0;
  return std::vector<double>(static_cast<std::size_t>(cfg.V), 1.0 / cfg.V);
}

std::vector<double> valuation_kernel(const AuctionConfig& cfg) {
  validate(cfg);
  const auto S = static_cast<std::size_t>(cfg.states());
  const auto V = static_cast<std::size_t>(cfg.V);
  std::vector<double> w(S * S, 0.0);
  const auto& d = cfg.dynamics;
  for (std::size_t s = 0; s < V; ++s) {
    double* row = w.data() + s * S;
    if (!d.drift) {
      row[s] = 1.0;
      continue;
    }
    const double center = d.rate * cfg.value(static_cast<int>(s));
    std::vector<double> logits(V);
    for (std::size_t j = 0; j < V; ++j) {
      const double diff = center - cfg.value(static_cast<int>(j));
      logits[j] = -diff * diff / (2.0 * d.sigma * d.sigma);
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (std::size_t j = 0; j < V; ++j) total += (row[j] = std::exp(logits[j] - mx));
    for (std::size_t j = 0; j < V; ++j) row[j] /= total;
  }
  const auto prior = valuation_prior(cfg);
  double* bot = w.data() + V * S;
  for (std::size_t j = 0; j < V; ++j) bot[j] = d.rho * prior[j];
  bot[V] = 1.0 - d.rho;
  return w;
}

// ---- mechanisms --------------------------------------------------------------

MechanismValues evaluate_mechanism(const Mechanism& m, std::span<const double> theta, int h,
                                   std::span<const double> nu, double remaining) {
  require(theta.size() == m.param_size(), "mechanism: parameter vector has wrong size");
  ad::Tape tape;
  auto out = m.evaluate(tape, tape.constant(std::vector<double>(theta.begin(), theta.end())), h,
                        tape.constant(std::vector<double>(nu.begin(), nu.end())),
                        tape.constant(remaining));
  return {out.alpha.scalar(),
          std::vector<double>(out.payments.value().begin(), out.payments.value().end())};
}

StaticMechanism::StaticMechanism(int H, int A, double alpha_max)
    : H_(H), A_(A), alpha_max_(alpha_max), bids_(bid_grid(A)) {
  require(H >= 1 && A >= 1, "static mechanism: H and A must be positive");
}

std::size_t StaticMechanism::param_size() const {
  return static_cast<std::size_t>(H_) * static_cast<std::size_t>(A_) + static_cast<std::size_t>(H_);
}

MechanismOutput StaticMechanism::evaluate(ad::Tape& tape, ad::Var theta, int h, ad::Var,
                                          ad::Var) const {
  require(theta.size() == param_size(), "static mechanism: parameter vector has wrong size");
  require(h >= 0 && h < H_, "static mechanism: round out of range");
  const auto A = static_cast<std::size_t>(A_);
  const auto HA = static_cast<std::size_t>(H_) * A;
  ad::Var pay = tape.mul(tape.sigmoid(tape.slice(theta, static_cast<std::size_t>(h) * A, A)),
                         tape.constant(bids_));
  ad::Var sched = tape.softmax_rows(tape.slice(theta, HA, static_cast<std::size_t>(H_)),
                                    static_cast<std::size_t>(H_));
  ad::Var alpha = tape.scale(tape.slice(sched, static_cast<std::size_t>(h), 1), alpha_max_);
  return {alpha, pay};
}

FirstPriceMechanism::FirstPriceMechanism(int H, int A, double alpha_max)
    : H_(H), A_(A), alpha_max_(alpha_max), bids_(bid_grid(A)) {
  require(H >= 1 && A >= 1, "first-price mechanism: H and A must be positive");
}

MechanismOutput FirstPriceMechanism::evaluate(ad::Tape& tape, ad::Var, int, ad::Var,
                                              ad::Var) const {
  return {tape.constant(alpha_max_ / H_), tape.constant(bids_)};
}

// ---- plain operators ---------------------------------------------------------

std::vector<double> nu_active(std::span<const double> dist, int V, int A) {
  require(dist.size() == static_cast<std::size_t>(V + 1) * A, "nu_active: wrong size");
  std::vector<double> nu(static_cast<std::size_t>(A), 0.0);
  for (int s = 0; s < V; ++s)
    for (int a = 0; a < A; ++a)
      nu[static_cast<std::size_t>(a)] += dist[static_cast<std::size_t>(s) * A + a];
  return nu;
}

std::vector<double> p_win(std::span<const double> nu, double alpha) {
  const std::size_t A = nu.size();
  std::vector<double> out(A, 0.0);
  for (std::size_t k = 0; k < A; ++k) {
    // Summed in increasing bid order, as the tape version does.
    double above = 0.0;
    for (std::size_t j = k + 1; j < A; ++j) above += nu[j];
    const double num = alpha - above;
    double r;
    if (nu[k] != 0.0) r = num / nu[k];
    else r = num > 0.0 ? INFINITY : (num < 0.0 ? -INFINITY : 0.0);
    out[k] = std::clamp(r, 0.0, 1.0);
  }
  return out;
}

double p_win(int s, int a, std::span<const double> dist, int V, int A, double alpha) {
  if (s == V) return 0.0;
  return p_win(nu_active(dist, V, A), alpha)[static_cast<std::size_t>(a)];
}

int threshold_bid(std::span<const double> nu, double alpha) {
  double at_or_above = 0.0;
  for (std::size_t k = nu.size(); k-- > 0;) {
    at_or_above += nu[k];
    if (at_or_above >= alpha) return static_cast<int>(k);
  }
  return 0;
}

std::vector<double> xi_op(std::span<const double> d, int V, int A, double alpha) {
  const auto VA = static_cast<std::size_t>(V) * A;
  require(d.size() == VA, "xi_op: wrong size");
  require(alpha >= 0.0, "xi_op: alpha must be nonnegative");
  std::vector<double> nu(static_cast<std::size_t>(A), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < VA; ++i) {
    nu[i % static_cast<std::size_t>(A)] += d[i];
    total += d[i];
  }
  if (alpha > total * (1.0 + 1e-12) + 1e-15) fail(ErrorCode::InvalidArgument, "xi_op: alpha exceeds mass");
  std::vector<double> out(d.begin(), d.end());
  if (alpha == 0.0) return out;
  const int th = threshold_bid(nu, alpha);
  double above = 0.0;
  for (int a = th + 1; a < A; ++a) above += nu[static_cast<std::size_t>(a)];
  const double at = nu[static_cast<std::size_t>(th)];
  const double keep = at > 0.0 ? std::max(0.0, (above + at - alpha) / at) : 0.0;
  for (int v = 0; v < V; ++v)
    for (int a = 0; a < A; ++a) {
      double& x = out[static_cast<std::size_t>(v) * A + a];
      if (a > th) x = 0.0;
      else if (a == th) x *= keep;
    }
  return out;
}

std::vector<double> post_alloc_xi(std::span<const double> dist, int V, int A, double alpha) {
  require(dist.size() == static_cast<std::size_t>(V + 1) * A, "post_alloc_xi: wrong size");
  auto nu = nu_active(dist, V, A);
  double active = 0.0;
  for (double x : nu) active += x;
  const double a_eff = std::min(alpha, active);
  const auto pw = p_win(nu, a_eff);
  std::vector<double> xi(static_cast<std::size_t>(V + 1), 0.0);
  for (int s = 0; s < V; ++s)
    for (int a = 0; a < A; ++a)
      xi[static_cast<std::size_t>(s)] +=
          dist[static_cast<std::size_t>(s) * A + a] * (1.0 - pw[static_cast<std::size_t>(a)]);
  double bottom = 0.0;
  for (int a = 0; a < A; ++a) bottom += dist[static_cast<std::size_t>(V) * A + a];
  xi[static_cast<std::size_t>(V)] = bottom + a_eff;
  return xi;
}

std::vector<NzdViolation> nzd_check(const Flow& flow, std::span<const double> alphas, int V) {
  const int H = flow.dims().horizon;
  const int A = flow.dims().actions;
  require(alphas.size() == static_cast<std::size_t>(H), "nzd_check: one alpha per round");
  require(flow.dims().states == V + 1, "nzd_check: flow has wrong state count");
  std::vector<NzdViolation> out;
  for (int h = 0; h < H; ++h) {
    const auto nu = nu_active(flow.at(h), V, A);
    double above = 0.0;
    for (int a = A - 1; a >= 0; --a) {
      const double at = nu[static_cast<std::size_t>(a)];
      if (at == 0.0 && std::abs(above - alphas[static_cast<std::size_t>(h)]) <= kNzdTol)
        out.push_back({h, a, at, above});
      above += at;
    }
  }
  return out;
}

// ---- tape operators ----------------------------------------------------------

ad::Var record_nu_active(ad::Tape& tape, ad::Var dist, int V, int A) {
  const auto n = static_cast<std::size_t>(V + 1) * A;
  require(dist.size() == n, "record_nu_active: wrong size");
  thread_local std::vector<std::pair<std::pair<int, int>, ad::IndexMap>> cache;
  ad::IndexMap idx;
  for (auto& [key, m] : cache)
    if (key.first == V && key.second == A) idx = m;
  if (!idx) {
    std::vector<std::int32_t> v(n);
    for (std::size_t i = 0; i < n; ++i)
      v[i] = static_cast<std::int32_t>(i / A == static_cast<std::size_t>(V) ? A : i % A);
    idx = ad::make_index_map(std::move(v));
    cache.push_back({{V, A}, idx});
  }
  ad::Var full = tape.scatter_add(dist, idx, static_cast<std::size_t>(A) + 1);
  return tape.slice(full, 0, static_cast<std::size_t>(A));
}

ad::Var record_p_win(ad::Tape& tape, ad::Var nu, ad::Var alpha) {
  const std::size_t A = nu.size();
  ad::Var above = tape.matvec(tape.constant(upper_mask(A)), nu, A, A);
  return tape.clamp(tape.ratio(tape.sub(alpha, above), nu), 0.0, 1.0);
}

// ---- environment -------------------------------------------------------------

struct RoundRecord {
  ad::Var nu, alpha, payments, pw, pw_ext, kernel, reward;
  double remaining = 0.0;
};

class AuctionRollout final : public Rollout {
 public:
  AuctionRollout(const AuctionEnv& env, ad::Tape& tape, ad::Var theta)
      : env_(env), tape_(tape), theta_(theta) {
    remaining_ = tape_.constant(env_.cfg_.alpha_max);
    stay_ = tape_.constant(env_.stay_);
    win_delta_ = tape_.constant(env_.win_delta_);
    values_ = tape_.constant(env_.values_);
  }

  RoundRecord round(int h, ad::Var dist) {
    const auto& c = env_.cfg_;
    RoundRecord r;
    r.remaining = remaining_.scalar();
    if (r.remaining < -1e-12) {
      std::ostringstream os;
      os << "remaining goods negative (" << r.remaining << ") at round " << h;
      fail(ErrorCode::Numeric, os.str());
    }
    r.nu = record_nu_active(tape_, dist, c.V, c.A);
    auto out = env_.mech_->evaluate(tape_, theta_, h, r.nu, remaining_);
    require(out.alpha.size() == 1, "mechanism alpha must be scalar");
    require(out.payments.size() == static_cast<std::size_t>(c.A),
            "mechanism must return one payment per bid");
    check_payments(out.payments.value(), h);
    if (!(out.alpha.scalar() >= 0.0)) fail(ErrorCode::Numeric, "mechanism returned negative alpha");
    r.alpha = out.alpha;
    r.payments = out.payments;
    r.pw = record_p_win(tape_, r.nu, r.alpha);
    std::vector<ad::Var> parts{r.pw, tape_.zeros(1)};
    r.pw_ext = tape_.concat(parts);
    r.kernel = tape_.add(stay_, tape_.mul(tape_.gather(r.pw_ext, env_.kernel_pw_), win_delta_));
    ad::Var surplus = tape_.sub(values_,
                                tape_.gather(r.payments, env_.pair_bid_));
    r.reward = tape_.mul(tape_.gather(r.pw_ext, env_.pair_pw_), c.utility.record(tape_, surplus, h));
    remaining_ = tape_.sub(remaining_, r.alpha);
    return r;
  }

  RoundModel advance(int h, ad::Var dist) override {
    auto r = round(h, dist);
    return {r.kernel, r.reward};
  }

 private:
  const AuctionEnv& env_;
  ad::Tape& tape_;
  ad::Var theta_;
  ad::Var remaining_;
  ad::Var stay_, win_delta_, values_;
};

AuctionEnv::AuctionEnv(AuctionConfig cfg, std::shared_ptr<const Mechanism> mechanism)
    : cfg_(std::move(cfg)), mech_(std::move(mechanism)) {
  validate(cfg_);
  require(mech_ != nullptr, "auction: mechanism required");
  set_prior(valuation_prior(cfg_));

  const auto S = static_cast<std::size_t>(cfg_.states());
  const auto A = static_cast<std::size_t>(cfg_.A);
  const auto V = static_cast<std::size_t>(cfg_.V);
  std::vector<std::int32_t> kpw(S * A * S), ppw(S * A), pbid(S * A);
  values_.assign(S * A, 0.0);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t a = 0; a < A; ++a) {
      const auto row = s * A + a;
      const auto idx = static_cast<std::int32_t>(s == V ? A : a);
      ppw[row] = idx;
      pbid[row] = static_cast<std::int32_t>(a);
      for (std::size_t j = 0; j < S; ++j) kpw[row * S + j] = idx;
      if (s < V) values_[row] = cfg_.value(static_cast<int>(s));
    }
  kernel_pw_ = ad::make_index_map(std::move(kpw));
  pair_pw_ = ad::make_index_map(std::move(ppw));
  pair_bid_ = ad::make_index_map(std::move(pbid));
}

void AuctionEnv::set_prior(std::vector<double> mu0) {
  AuctionConfig c = cfg_;
  c.mu0 = std::move(mu0);
  validate(c);
  cfg_ = std::move(c);
  const auto S = static_cast<std::size_t>(cfg_.states());
  const auto A = static_cast<std::size_t>(cfg_.A);
  const auto V = static_cast<std::size_t>(cfg_.V);
  const auto w = valuation_kernel(cfg_);
  stay_.assign(S * A * S, 0.0);
  win_delta_.assign(S * A * S, 0.0);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t j = 0; j < S; ++j) {
        const auto i = (s * A + a) * S + j;
        stay_[i] = w[s * S + j];
        win_delta_[i] = w[V * S + j] - w[s * S + j];
      }
}

std::vector<double> AuctionEnv::initial_distribution() const {
  auto mu = valuation_prior(cfg_);
  mu.push_back(0.0);
  return mu;
}

std::unique_ptr<Rollout> AuctionEnv::rollout(ad::Tape& tape, ad::Var theta) const {
  require(theta.size() == param_size(), "auction: parameter vector has wrong size");
  return std::make_unique<AuctionRollout>(*this, tape, theta);
}

ad::Var AuctionEnv::record_objective_kind(ad::Tape& tape, ad::Var theta,
                                          std::span<const ad::Var> flow,
                                          AuctionObjective kind) const {
  require(flow.size() == static_cast<std::size_t>(cfg_.H), "auction: flow length must equal H");
  AuctionRollout ro(*this, tape, theta);
  std::vector<ad::Var> terms;
  for (int h = 0; h < cfg_.H; ++h) {
    const auto& dist = flow[static_cast<std::size_t>(h)];
    auto r = ro.round(h, dist);
    if (kind != AuctionObjective::Efficiency)
      terms.push_back(tape.sum(tape.mul(tape.mul(r.nu, r.pw), r.payments)));
    if (kind != AuctionObjective::Revenue) terms.push_back(tape.sum(tape.mul(dist, r.reward)));
  }
  return tape.sum(tape.concat(terms));
}

ad::Var AuctionEnv::objective(ad::Tape& tape, ad::Var theta, std::span<const ad::Var> flow) const {
  return record_objective_kind(tape, theta, flow, cfg_.objective);
}

double AuctionEnv::evaluate_objective(std::span<const double> theta, const Flow& flow,
                                      AuctionObjective kind) const {
  require(theta.size() == param_size(), "auction: parameter vector has wrong size");
  require(flow.dims() == dims(), "auction: flow dims do not match");
  ad::Tape tape;
  auto th = tape.constant(std::vector<double>(theta.begin(), theta.end()));
  std::vector<ad::Var> dists;
  for (const auto& l : flow.dists()) dists.push_back(tape.constant(l));
  return record_objective_kind(tape, th, dists, kind).scalar();
}

double AuctionEnv::revenue(std::span<const double> theta, const Flow& flow) const {
  return evaluate_objective(theta, flow, AuctionObjective::Revenue);
}

double AuctionEnv::efficiency(std::span<const double> theta, const Flow& flow) const {
  return evaluate_objective(theta, flow, AuctionObjective::Efficiency);
}

std::vector<RoundTrace> AuctionEnv::trace(std::span<const double> theta, const Flow& flow) const {
  require(theta.size() == param_size(), "auction: parameter vector has wrong size");
  require(flow.dims() == dims(), "auction: flow dims do not match");
  ad::Tape tape;
  auto th = tape.constant(std::vector<double>(theta.begin(), theta.end()));
  AuctionRollout ro(*this, tape, th);
  std::vector<RoundTrace> out;
  for (int h = 0; h < cfg_.H; ++h) {
    auto r = ro.round(h, tape.constant(flow.dists()[static_cast<std::size_t>(h)]));
    auto vec = [](ad::Var v) { return std::vector<double>(v.value().begin(), v.value().end()); };
    out.push_back({r.remaining, r.alpha.scalar(), vec(r.nu), vec(r.payments), vec(r.pw)});
  }
  return out;
}

}  // namespace mfid
