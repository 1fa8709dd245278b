#include "mfid/harness.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "mfid/error.hpp"
#include "mfid/io.hpp"

namespace mfid {

using nlohmann::json;

namespace {

// ---- config reading ----------------------------------------------------------

[[noreturn]] void config_error(const std::string& path, const std::string& msg) {
  fail(ErrorCode::Config, path + ": " + msg);
}

// Reads keys off a JSON object and rejects whatever was not read.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) config_error(path_, "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json* get(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void number(const std::string& key, double& out) {
    if (const json* v = get(key)) {
      if (!v->is_number()) config_error(where(key), "expected a number");
      out = v->get<double>();
      if (!std::isfinite(out)) config_error(where(key), "must be finite");
    }
  }

  void integer(const std::string& key, int& out) {
    if (const json* v = get(key)) {
      if (!v->is_number_integer()) config_error(where(key), "expected an integer");
      const auto x = v->get<long long>();
      if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
        config_error(where(key), "out of range");
      out = static_cast<int>(x);
    }
  }

  void unsigned64(const std::string& key, std::uint64_t& out) {
    if (const json* v = get(key)) {
      if (v->is_number_unsigned()) out = v->get<std::uint64_t>();
      else if (v->is_number_integer() && v->get<long long>() >= 0) out = v->get<std::uint64_t>();
      else config_error(where(key), "expected a nonnegative integer");
    }
  }

  void string(const std::string& key, std::string& out) {
    if (const json* v = get(key)) {
      if (!v->is_string()) config_error(where(key), "expected a string");
      out = v->get<std::string>();
    }
  }

  template <typename E>
  void choice(const std::string& key, E& out, const std::map<std::string, E>& names) {
    std::string s;
    if (!has(key)) {
      get(key);
      return;
    }
    string(key, s);
    auto it = names.find(s);
    if (it == names.end()) {
      std::string opts;
      for (const auto& [name, _] : names) opts += (opts.empty() ? "" : ", ") + name;
      config_error(where(key), "unknown value \"" + s + "\" (expected one of " + opts + ")");
    }
    out = it->second;
  }

  std::optional<Reader> object(const std::string& key) {
    if (const json* v = get(key)) return Reader(*v, where(key));
    return std::nullopt;
  }

  std::string where(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) config_error(where(it.key()), "unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

const std::map<std::string, EnvKind> kEnvNames{
    {"beachbar", EnvKind::BeachBar}, {"auction", EnvKind::Auction}, {"synthetic", EnvKind::Synthetic}};
const std::map<std::string, MechanismKind> kMechNames{{"neural", MechanismKind::Neural},
                                                      {"first_price", MechanismKind::FirstPrice},
                                                      {"static", MechanismKind::Static}};
const std::map<std::string, UtilityKind> kUtilityNames{{"linear", UtilityKind::Linear},
                                                       {"risk_averse", UtilityKind::RiskAverse},
                                                       {"risk_seeking", UtilityKind::RiskSeeking},
                                                       {"hyperbolic", UtilityKind::Hyperbolic}};
const std::map<std::string, AuctionObjective> kObjectiveNames{
    {"revenue", AuctionObjective::Revenue},
    {"efficiency", AuctionObjective::Efficiency},
    {"mix", AuctionObjective::Mix}};
const std::map<std::string, OptimizerKind> kOptimizerNames{{"adam", OptimizerKind::Adam},
                                                           {"sgd", OptimizerKind::Sgd}};
const std::map<std::string, Estimator> kEstimatorNames{{"amid", Estimator::Amid},
                                                       {"zeroth_adam", Estimator::ZerothAdam},
                                                       {"zeroth_sgd", Estimator::ZerothSgd},
                                                       {"anneal", Estimator::Anneal}};

template <typename E>
std::string name_of(const std::map<std::string, E>& names, E value) {
  for (const auto& [name, v] : names)
    if (v == value) return name;
  return "?";
}

void read_beachbar(Reader r, BeachBarConfig& c) {
  r.integer("K", c.K);
  r.integer("H", c.H);
  r.number("p_max", c.p_max);
  r.number("move_sign", c.move_sign);
  r.finish();
}

void read_auction(Reader r, EnvironmentSpec& env) {
  auto& c = env.auction;
  r.integer("V", c.V);
  r.integer("A", c.A);
  r.integer("H", c.H);
  r.number("alpha_max", c.alpha_max);
  if (const json* mu = r.get("mu0")) {
    if (mu->is_string()) {
      const auto s = mu->get<std::string>();
      if (s == "uniform") env.prior = PriorMode::Uniform;
      else if (s == "random") env.prior = PriorMode::Random;
      else config_error(r.where("mu0"), "expected \"uniform\", \"random\" or an array");
    } else if (mu->is_array()) {
      c.mu0.clear();
      for (const auto& x : *mu) {
        if (!x.is_number()) config_error(r.where("mu0"), "entries must be numbers");
        c.mu0.push_back(x.get<double>());
      }
      env.prior = PriorMode::Fixed;
    } else {
      config_error(r.where("mu0"), "expected \"uniform\", \"random\" or an array");
    }
  }
  if (auto u = r.object("utility")) {
    u->choice("kind", c.utility.kind, kUtilityNames);
    u->number("beta", c.utility.beta);
    u->number("lambda", c.utility.lambda);
    u->finish();
  }
  if (auto d = r.object("dynamics")) {
    std::string kind = "single_minded";
    d->string("kind", kind);
    if (kind == "single_minded") {
      c.dynamics = Dynamics::single_minded();
    } else if (kind == "gaussian_drift") {
      c.dynamics = Dynamics::gaussian_drift(1.0, 0.2);
    } else if (kind == "regenerate") {
      c.dynamics = Dynamics::regenerate(0.3);
    } else {
      config_error(d->where("kind"),
                   "unknown value \"" + kind +
                       "\" (expected one of gaussian_drift, regenerate, single_minded)");
    }
    d->number("rate", c.dynamics.rate);
    d->number("sigma", c.dynamics.sigma);
    d->number("rho", c.dynamics.rho);
    d->finish();
  }
  r.choice("objective", c.objective, kObjectiveNames);
  if (auto m = r.object("mechanism")) {
    m->choice("kind", env.mechanism, kMechNames);
    m->integer("d_hidden", env.d_hidden);
    m->finish();
  }
  r.finish();
}

void read_synthetic(Reader r, SyntheticConfig& c) {
  r.integer("S", c.S);
  r.integer("A", c.A);
  r.integer("H", c.H);
  r.integer("params", c.params);
  r.unsigned64("seed", c.seed);
  r.number("theta_coupling", c.theta_coupling);
  r.number("flow_coupling", c.flow_coupling);
  r.finish();
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- helpers -----------------------------------------------------------------

std::vector<double> random_simplex(std::size_t n, std::mt19937_64& rng) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> p(n);
  double total = 0.0;
  for (double& x : p) total += (x = e(rng));
  for (double& x : p) x /= total;
  return p;
}

std::string hex64(std::uint64_t x) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << x;
  return os.str();
}

void write_manifest(const RunConfig& cfg, const std::string& command, json extra) {
  const std::string config_text = to_json(cfg);
  json m;
  m["command"] = command;
  m["config"] = json::parse(config_text);
  m["config_hash"] = hex64(fnv1a64(config_text));
  m["seed"] = cfg.training.seed;
  m["version"] = kVersion;
  for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = *it;
  const auto path = join_path(cfg.output_dir, "manifest.json");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot open " + path + " for writing");
  out << m.dump(2) << '\n';
  if (!out) fail(ErrorCode::Io, "write to " + path + " failed");
}

json real_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

void write_policy(const std::string& path, const Policy& pi) {
  const Dims& d = pi.dims();
  const std::vector<Segment> seg{
      Segment{"policy",
              {static_cast<std::size_t>(d.horizon), static_cast<std::size_t>(d.states),
               static_cast<std::size_t>(d.actions)},
              0}};
  write_params(path, seg, std::vector<double>(pi.values().begin(), pi.values().end()));
}

Policy read_policy(const std::string& path, const Dims& d) {
  const auto pf = read_params(path);
  const std::vector<std::size_t> want{static_cast<std::size_t>(d.horizon),
                                      static_cast<std::size_t>(d.states),
                                      static_cast<std::size_t>(d.actions)};
  if (pf.segments.size() != 1 || pf.segments[0].name != "policy" || pf.segments[0].dims != want)
    fail(ErrorCode::Io, path + ": not a policy file for this environment");
  try {
    return Policy(d, pf.values);
  } catch (const std::exception& e) {
    fail(ErrorCode::Io, path + ": " + e.what());
  }
}

void write_flow(const std::string& path, const Flow& flow) {
  CsvWriter csv(path, {"h", "s", "a", "mass"});
  const Dims& d = flow.dims();
  for (int h = 0; h < d.horizon; ++h)
    for (int s = 0; s < d.states; ++s)
      for (int a = 0; a < d.actions; ++a) {
        csv.cell(h).cell(s).cell(a).cell(flow(h, s, a));
        csv.end_row();
      }
}

struct Evaluation {
  CurveRow row;
  Policy policy;
};

Evaluation evaluate_full(const Experiment& ex, std::span<const double> theta, int iter) {
  const auto& s = ex.config().solver;
  const LogPolicy z = t_step_logits(ex.env(), theta, ex.initial_logits(), ex.adjoint(s.T_val));
  Policy pi = softmax_policy(z);
  CurveRow row;
  row.iter = iter;
  row.objective = objective_at(ex.env(), theta, z);
  row.exploitability = exploitability(ex.env(), theta, pi, s.tau);
  return {row, std::move(pi)};
}

}  // namespace

// ---- config ------------------------------------------------------------------

RunConfig parse_config(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text.begin(), json_text.end());
  } catch (const json::parse_error& e) {
    fail(ErrorCode::Config, std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig cfg;
  Reader r(root, "");
  r.choice("environment", cfg.env.kind, kEnvNames);
  if (auto b = r.object("beachbar")) read_beachbar(*b, cfg.env.beachbar);
  if (auto a = r.object("auction")) read_auction(*a, cfg.env);
  if (auto s = r.object("synthetic")) read_synthetic(*s, cfg.env.synthetic);
  if (auto s = r.object("solver")) {
    s->number("eta", cfg.solver.eta);
    s->number("tau", cfg.solver.tau);
    s->integer("T", cfg.solver.T);
    s->integer("T_val", cfg.solver.T_val);
    if (const json* cs = s->get("checkpoint_stride")) {
      if (cs->is_string() && cs->get<std::string>() == "full") {
        cfg.solver.full_cache = true;
      } else if (cs->is_number_integer()) {
        cfg.solver.checkpoint_stride = cs->get<int>();
      } else if (!cs->is_null()) {
        config_error("solver.checkpoint_stride", "expected an integer, \"full\" or null");
      }
    }
    s->finish();
  }
  if (auto o = r.object("optimizer")) {
    o->choice("kind", cfg.optimizer.kind, kOptimizerNames);
    o->number("lr", cfg.optimizer.lr);
    if (const json* b = o->get("betas")) {
      if (!b->is_array() || b->size() != 2 || !(*b)[0].is_number() || !(*b)[1].is_number())
        config_error("optimizer.betas", "expected two numbers");
      cfg.optimizer.beta1 = (*b)[0].get<double>();
      cfg.optimizer.beta2 = (*b)[1].get<double>();
    }
    o->number("eps", cfg.optimizer.eps);
    o->number("u_zero", cfg.u_zero);
    o->number("sigma_anneal", cfg.sigma_anneal);
    o->finish();
  }
  if (auto t = r.object("training")) {
    t->integer("iterations", cfg.training.iterations);
    t->unsigned64("seed", cfg.training.seed);
    t->integer("eval_every", cfg.training.eval_every);
    t->choice("estimator", cfg.training.estimator, kEstimatorNames);
    t->string("theta_file", cfg.training.theta_file);
    t->finish();
  }
  if (auto s = r.object("simulation")) {
    if (const json* ns = s->get("Ns")) {
      if (!ns->is_array() || ns->empty()) config_error("simulation.Ns", "expected a nonempty array");
      cfg.simulation.Ns.clear();
      for (const auto& n : *ns) {
        if (!n.is_number_integer()) config_error("simulation.Ns", "entries must be integers");
        cfg.simulation.Ns.push_back(n.get<int>());
      }
    }
    s->integer("reps", cfg.simulation.reps);
    s->string("theta_file", cfg.simulation.theta_file);
    s->string("policy_file", cfg.simulation.policy_file);
    s->finish();
  }
  if (auto g = r.object("gradcheck")) {
    g->number("tolerance", cfg.gradcheck.tolerance);
    g->number("eps", cfg.gradcheck.eps);
    g->finish();
  }
  r.string("output", cfg.output_dir);
  r.finish();
  validate(cfg);
  return cfg;
}

RunConfig load_config(const std::string& path) { return parse_config(read_text(path)); }

void validate(const RunConfig& cfg) {
  auto check = [](bool ok, const std::string& msg) {
    if (!ok) fail(ErrorCode::Config, msg);
  };
  try {
    switch (cfg.env.kind) {
      case EnvKind::BeachBar: validate(cfg.env.beachbar); break;
      case EnvKind::Auction: {
        validate(cfg.env.auction);
        if (cfg.env.mechanism == MechanismKind::Neural)
          validate(MechNetShape{cfg.env.auction.H, cfg.env.auction.A, cfg.env.d_hidden});
        break;
      }
      case EnvKind::Synthetic: validate(cfg.env.synthetic); break;
    }
    check_step_sizes(cfg.solver.eta, cfg.solver.tau);
    validate(cfg.optimizer);
  } catch (const Error& e) {
    fail(ErrorCode::Config, e.what());
  }
  check(cfg.solver.T >= 0, "solver.T must be nonnegative");
  check(cfg.solver.T_val >= cfg.solver.T, "solver.T_val must be at least solver.T");
  if (cfg.solver.checkpoint_stride) {
    check(!cfg.solver.full_cache, "solver.checkpoint_stride: both a stride and full caching");
    check(*cfg.solver.checkpoint_stride >= 1 && *cfg.solver.checkpoint_stride <= cfg.solver.T + 1,
          "solver.checkpoint_stride must lie in [1, T + 1]");
  }
  check(cfg.u_zero > 0.0, "optimizer.u_zero must be positive");
  check(cfg.sigma_anneal > 0.0, "optimizer.sigma_anneal must be positive");
  check(cfg.training.iterations >= 0, "training.iterations must be nonnegative");
  check(cfg.training.eval_every >= 1, "training.eval_every must be positive");
  check(cfg.simulation.reps >= 2, "simulation.reps must be at least 2");
  for (int n : cfg.simulation.Ns) check(n >= 1, "simulation.Ns entries must be positive");
  check(cfg.gradcheck.eps > 0.0, "gradcheck.eps must be positive");
  check(cfg.gradcheck.tolerance >= 0.0, "gradcheck.tolerance must be nonnegative");
  check(!cfg.output_dir.empty(), "output must not be empty");
}

std::string to_json(const RunConfig& cfg) {
  json j;
  j["environment"] = name_of(kEnvNames, cfg.env.kind);
  const auto& bb = cfg.env.beachbar;
  j["beachbar"] = {{"K", bb.K}, {"H", bb.H}, {"p_max", bb.p_max}, {"move_sign", bb.move_sign}};
  const auto& a = cfg.env.auction;
  json mu0;
  switch (cfg.env.prior) {
    case PriorMode::Uniform: mu0 = "uniform"; break;
    case PriorMode::Random: mu0 = "random"; break;
    case PriorMode::Fixed: mu0 = a.mu0; break;
  }
  const auto& dy = a.dynamics;
  const std::string dyn_kind =
      dy.drift ? "gaussian_drift" : (dy.rho > 0.0 ? "regenerate" : "single_minded");
  j["auction"] = {
      {"V", a.V},
      {"A", a.A},
      {"H", a.H},
      {"alpha_max", a.alpha_max},
      {"mu0", mu0},
      {"utility",
       {{"kind", name_of(kUtilityNames, a.utility.kind)},
        {"beta", a.utility.beta},
        {"lambda", a.utility.lambda}}},
      {"dynamics", {{"kind", dyn_kind}, {"rate", dy.rate}, {"sigma", dy.sigma}, {"rho", dy.rho}}},
      {"objective", name_of(kObjectiveNames, a.objective)},
      {"mechanism", {{"kind", name_of(kMechNames, cfg.env.mechanism)}, {"d_hidden", cfg.env.d_hidden}}}};
  const auto& sy = cfg.env.synthetic;
  j["synthetic"] = {{"S", sy.S},
                    {"A", sy.A},
                    {"H", sy.H},
                    {"params", sy.params},
                    {"seed", sy.seed},
                    {"theta_coupling", sy.theta_coupling},
                    {"flow_coupling", sy.flow_coupling}};
  json stride = nullptr;
  if (cfg.solver.full_cache) stride = "full";
  else if (cfg.solver.checkpoint_stride) stride = *cfg.solver.checkpoint_stride;
  j["solver"] = {{"eta", cfg.solver.eta},
                 {"tau", cfg.solver.tau},
                 {"T", cfg.solver.T},
                 {"T_val", cfg.solver.T_val},
                 {"checkpoint_stride", stride}};
  j["optimizer"] = {{"kind", name_of(kOptimizerNames, cfg.optimizer.kind)},
                    {"lr", cfg.optimizer.lr},
                    {"betas", {cfg.optimizer.beta1, cfg.optimizer.beta2}},
                    {"eps", cfg.optimizer.eps},
                    {"u_zero", cfg.u_zero},
                    {"sigma_anneal", cfg.sigma_anneal}};
  j["training"] = {{"iterations", cfg.training.iterations},
                   {"seed", cfg.training.seed},
                   {"eval_every", cfg.training.eval_every},
                   {"estimator", name_of(kEstimatorNames, cfg.training.estimator)},
                   {"theta_file", cfg.training.theta_file}};
  j["simulation"] = {{"Ns", cfg.simulation.Ns},
                     {"reps", cfg.simulation.reps},
                     {"theta_file", cfg.simulation.theta_file},
                     {"policy_file", cfg.simulation.policy_file}};
  j["gradcheck"] = {{"tolerance", cfg.gradcheck.tolerance}, {"eps", cfg.gradcheck.eps}};
  j["output"] = cfg.output_dir;
  return j.dump();
}

// ---- experiment --------------------------------------------------------------

Experiment::Experiment(const RunConfig& cfg) : cfg_(cfg) {
  validate(cfg_);
  switch (cfg_.env.kind) {
    case EnvKind::BeachBar:
      env_ = std::make_unique<BeachBarEnv>(cfg_.env.beachbar);
      break;
    case EnvKind::Synthetic:
      env_ = std::make_unique<SyntheticEnv>(cfg_.env.synthetic);
      break;
    case EnvKind::Auction: {
      const auto& a = cfg_.env.auction;
      std::shared_ptr<const Mechanism> mech;
      switch (cfg_.env.mechanism) {
        case MechanismKind::Neural:
          shape_ = MechNetShape{a.H, a.A, cfg_.env.d_hidden};
          mech = std::make_shared<NeuralMechanism>(*shape_);
          break;
        case MechanismKind::FirstPrice:
          mech = std::make_shared<FirstPriceMechanism>(a.H, a.A, a.alpha_max);
          break;
        case MechanismKind::Static:
          mech = std::make_shared<StaticMechanism>(a.H, a.A, a.alpha_max);
          break;
      }
      auto env = std::make_unique<AuctionEnv>(a, std::move(mech));
      auction_ = env.get();
      env_ = std::move(env);
      break;
    }
  }
}

std::vector<Segment> Experiment::segments() const {
  if (shape_) return mechnet_segments(*shape_);
  if (env_->param_size() == 0) return {};
  return flat_segments("theta", env_->param_size());
}

std::vector<double> Experiment::initial_theta(std::uint64_t seed) const {
  if (shape_) return init_params(*shape_, seed);
  return std::vector<double>(env_->param_size(), 0.0);
}

std::vector<double> Experiment::load_theta(const std::string& path) const {
  auto pf = read_params(path);
  const auto want = segments();
  bool ok = pf.segments.size() == want.size() && pf.values.size() == env_->param_size();
  for (std::size_t i = 0; ok && i < want.size(); ++i)
    ok = pf.segments[i].name == want[i].name && pf.segments[i].dims == want[i].dims;
  if (!ok) fail(ErrorCode::Io, path + ": parameter layout does not match the configured environment");
  return std::move(pf.values);
}

std::vector<double> Experiment::theta_or_initial(const std::string& path,
                                                 std::uint64_t seed) const {
  return path.empty() ? initial_theta(seed) : load_theta(path);
}

AdjointConfig Experiment::adjoint(int T) const {
  AdjointConfig c{T, cfg_.solver.eta, cfg_.solver.tau, std::nullopt};
  if (cfg_.solver.full_cache) return c;
  c.checkpoint_stride = cfg_.solver.checkpoint_stride && *cfg_.solver.checkpoint_stride <= T + 1
                            ? *cfg_.solver.checkpoint_stride
                            : AdjointConfig::default_stride(T);
  return c;
}

// ---- design ------------------------------------------------------------------

CurveRow evaluate_design(const Experiment& ex, std::span<const double> theta, int iter) {
  return evaluate_full(ex, theta, iter).row;
}

DesignResult train(Experiment& ex, std::vector<double>& theta,
                   const std::function<void(const CurveRow&)>& on_eval) {
  const RunConfig& cfg = ex.config();
  const auto& tr = cfg.training;
  require(theta.size() == ex.env().param_size(), "train: parameter vector has wrong size");
  std::mt19937_64 rng(tr.seed);
  const AdjointConfig train_cfg = ex.adjoint(cfg.solver.T);
  const LogPolicy zeta0 = ex.initial_logits();
  AuctionEnv* auction = ex.auction();
  const bool random_prior = auction && cfg.env.prior == PriorMode::Random;
  const std::vector<double> eval_prior = auction ? valuation_prior(auction->config())
                                                 : std::vector<double>{};

  OptimizerConfig ocfg = cfg.optimizer;
  if (tr.estimator == Estimator::ZerothAdam) ocfg.kind = OptimizerKind::Adam;
  if (tr.estimator == Estimator::ZerothSgd) ocfg.kind = OptimizerKind::Sgd;
  Optimizer opt(ocfg, theta.size());

  DesignResult res;
  const Objective G = [&](std::span<const double> th) {
    ++res.objective_evaluations;
    return t_step_objective(ex.env(), th, zeta0, train_cfg);
  };
  auto record = [&](int iter) {
    if (random_prior) auction->set_prior(eval_prior);
    auto ev = evaluate_full(ex, theta, iter);
    res.curve.push_back(ev.row);
    if (on_eval) on_eval(ev.row);
    if (!std::isfinite(ev.row.objective))
      fail(ErrorCode::Numeric, "objective is not finite at iteration " + std::to_string(iter));
    res.policy = std::move(ev.policy);
    res.final_objective = ev.row.objective;
    res.final_exploitability = ev.row.exploitability;
  };

  record(0);
  std::optional<double> current;  // G(theta) under the current prior, for anneal
  for (int it = 1; it <= tr.iterations; ++it) {
    if (random_prior) {
      auction->set_prior(random_simplex(static_cast<std::size_t>(auction->config().V), rng));
      current.reset();
    }
    switch (tr.estimator) {
      case Estimator::Amid: {
        const auto r = amid_gradient(ex.env(), theta, zeta0, train_cfg);
        ++res.objective_evaluations;
        if (!std::isfinite(r.objective_value))
          fail(ErrorCode::Numeric, "objective is not finite at iteration " + std::to_string(it));
        opt.step(theta, r.grad_theta);
        break;
      }
      case Estimator::ZerothAdam:
      case Estimator::ZerothSgd: {
        const auto g = zeroth_order_grad(G, theta, cfg.u_zero, rng);
        opt.step(theta, g);
        break;
      }
      case Estimator::Anneal: {
        std::normal_distribution<double> normal;
        std::vector<double> n(theta.size());
        for (double& x : n) x = normal(rng);
        if (!current) current = G(theta);
        auto r = anneal_step(G, theta, cfg.sigma_anneal, n, *current);
        theta = std::move(r.theta);
        current = r.value;
        break;
      }
    }
    if (it % tr.eval_every == 0 || it == tr.iterations) record(it);
  }
  if (random_prior) auction->set_prior(eval_prior);
  res.theta = theta;
  return res;
}

// ---- subcommands -------------------------------------------------------------

SolveResult run_solve(const RunConfig& cfg) {
  Experiment ex(cfg);
  ensure_directory(cfg.output_dir);
  const auto theta = ex.theta_or_initial(cfg.training.theta_file, cfg.training.seed);
  const auto& s = cfg.solver;
  SolveResult res;
  CsvWriter csv(join_path(cfg.output_dir, "exploitability.csv"), {"t", "exploitability"});
  LogPolicy z = ex.initial_logits();
  for (int t = 1; t <= s.T; ++t) {
    z = omd_step(ex.env(), theta, z, s.eta, s.tau);
    const double e = exploitability(ex.env(), theta, softmax_policy(z), s.tau);
    res.exploitability.push_back(e);
    csv.cell(t).cell(e);
    csv.end_row();
  }
  res.policy = softmax_policy(z);
  res.flow = population_flow(ex.env(), theta, res.policy);
  write_flow(join_path(cfg.output_dir, "flow.csv"), res.flow);
  write_policy(join_path(cfg.output_dir, "policy.bin"), res.policy);
  json extra;
  extra["final_exploitability"] = res.exploitability.empty() ? json(nullptr)
                                                             : real_or_null(res.exploitability.back());
  extra["objective"] = real_or_null(objective_at(ex.env(), theta, z));
  write_manifest(cfg, "solve", extra);
  return res;
}

DesignResult run_design(const RunConfig& cfg) {
  Experiment ex(cfg);
  ensure_directory(cfg.output_dir);
  auto theta = ex.theta_or_initial(cfg.training.theta_file, cfg.training.seed);
  CsvWriter csv(join_path(cfg.output_dir, "training_curve.csv"),
                {"iter", "objective", "exploitability"});
  const auto theta_path = join_path(cfg.output_dir, "theta.bin");
  DesignResult res;
  try {
    res = train(ex, theta, [&](const CurveRow& row) {
      csv.cell(row.iter).cell(row.objective).cell(row.exploitability);
      csv.end_row();
    });
  } catch (const Error& e) {
    write_params(theta_path, ex.segments(), theta);
    json extra;
    extra["aborted"] = e.what();
    write_manifest(cfg, "design", extra);
    throw;
  }
  write_params(theta_path, ex.segments(), res.theta);
  write_policy(join_path(cfg.output_dir, "policy.bin"), res.policy);
  json extra;
  extra["final_objective"] = real_or_null(res.final_objective);
  extra["final_exploitability"] = real_or_null(res.final_exploitability);
  extra["objective_evaluations"] = res.objective_evaluations;
  write_manifest(cfg, "design", extra);
  return res;
}

GapStudy run_simulate_n(const RunConfig& cfg) {
  Experiment ex(cfg);
  if (!ex.auction()) fail(ErrorCode::Config, "simulate-n requires the auction environment");
  if (cfg.simulation.policy_file.empty())
    fail(ErrorCode::Config, "simulate-n requires simulation.policy_file");
  ensure_directory(cfg.output_dir);
  const auto theta = ex.theta_or_initial(cfg.simulation.theta_file, cfg.training.seed);
  const Policy pi = read_policy(cfg.simulation.policy_file, ex.env().dims());
  const auto study =
      revenue_gap_study(*ex.auction(), theta, pi, cfg.simulation.Ns, cfg.simulation.reps,
                        cfg.training.seed);
  CsvWriter csv(join_path(cfg.output_dir, "nstudy.csv"), {"N", "mean_gap", "std_gap", "reps"});
  for (const auto& row : study.rows) {
    csv.cell(row.N).cell(row.mean_gap).cell(row.std_gap).cell(row.reps);
    csv.end_row();
  }
  json extra;
  extra["slope"] = real_or_null(study.slope);
  extra["mean_field_revenue"] = study.mean_field_revenue;
  write_manifest(cfg, "simulate-n", extra);
  return study;
}

GradcheckResult amid_gradcheck(const EnvModel& env, std::span<const double> theta,
                               const AdjointConfig& cfg, double eps) {
  require(eps > 0.0, "gradcheck: eps must be positive");
  const LogPolicy zeta0 = LogPolicy::zeros(env.dims());
  const auto r = amid_gradient(env, theta, zeta0, cfg);
  GradcheckResult res;
  res.objective = r.objective_value;
  std::vector<double> probe(theta.begin(), theta.end());
  double norm = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double fp = t_step_objective(env, probe, zeta0, cfg);
    probe[i] = orig - eps;
    const double fm = t_step_objective(env, probe, zeta0, cfg);
    probe[i] = orig;
    const double fd = (fp - fm) / (2.0 * eps);
    const double g = r.grad_theta[i];
    const double err = std::abs(fd - g) / std::max(1.0, std::abs(g));
    res.max_rel_error = std::isnan(err) ? err : std::max(res.max_rel_error, err);
    if (std::isnan(err)) break;
    norm += g * g;
  }
  res.grad_norm = std::sqrt(norm);
  return res;
}

GradcheckResult run_gradcheck(const RunConfig& cfg) {
  Experiment ex(cfg);
  ensure_directory(cfg.output_dir);
  std::vector<double> theta;
  if (!cfg.training.theta_file.empty()) theta = ex.load_theta(cfg.training.theta_file);
  else if (cfg.env.kind == EnvKind::Synthetic)
    theta = static_cast<const SyntheticEnv&>(ex.env()).sample_theta(cfg.training.seed);
  else theta = ex.initial_theta(cfg.training.seed);
  auto res = amid_gradcheck(ex.env(), theta, ex.adjoint(cfg.solver.T), cfg.gradcheck.eps);
  res.passed = res.max_rel_error <= cfg.gradcheck.tolerance;
  json extra;
  extra["max_rel_error"] = real_or_null(res.max_rel_error);
  extra["grad_norm"] = real_or_null(res.grad_norm);
  extra["tolerance"] = cfg.gradcheck.tolerance;
  extra["passed"] = res.passed;
  write_manifest(cfg, "gradcheck", extra);
  return res;
}

}  // namespace mfid
