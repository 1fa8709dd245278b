#pragma once

// Experiment runner behind the command-line tool: configuration, the four
// subcommands and their output files.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mfid/adjoint.hpp"
#include "mfid/auction.hpp"
#include "mfid/beachbar.hpp"
#include "mfid/mechnet.hpp"
#include "mfid/nplayer.hpp"
#include "mfid/optim.hpp"
#include "mfid/synthetic.hpp"

namespace mfid {

inline constexpr const char* kVersion = "0.1.0";

enum class EnvKind { BeachBar, Auction, Synthetic };
enum class MechanismKind { Neural, FirstPrice, Static };
enum class PriorMode { Uniform, Fixed, Random };
enum class Estimator { Amid, ZerothAdam, ZerothSgd, Anneal };

struct EnvironmentSpec {
  EnvKind kind = EnvKind::BeachBar;
  BeachBarConfig beachbar;
  AuctionConfig auction;
  MechanismKind mechanism = MechanismKind::Neural;
  int d_hidden = 64;
  /// Random: a fresh prior is drawn from the uniform distribution on the
  /// simplex at every training iteration; evaluation uses the uniform prior.
  PriorMode prior = PriorMode::Uniform;
  SyntheticConfig synthetic;
};

struct SolverSpec {
  double eta = 10.0;
  double tau = 1e-3;
  int T = 400;
  int T_val = 500;
  std::optional<int> checkpoint_stride;  // unset: ceil(sqrt(T + 1))
  bool full_cache = false;
};

struct TrainingSpec {
  int iterations = 0;
  std::uint64_t seed = 0;
  int eval_every = 10;
  Estimator estimator = Estimator::Amid;
  std::string theta_file;
};

struct SimulationSpec {
  std::vector<int> Ns{16, 64, 256, 1024};
  int reps = 200;
  std::string theta_file;
  std::string policy_file;
};

struct GradcheckSpec {
  double tolerance = 1e-5;
  double eps = 1e-6;
};

struct RunConfig {
  EnvironmentSpec env;
  SolverSpec solver;
  OptimizerConfig optimizer;
  double u_zero = 1e-2;
  double sigma_anneal = 1e-3;
  TrainingSpec training;
  SimulationSpec simulation;
  GradcheckSpec gradcheck;
  std::string output_dir = "out";
};

/// Parses a JSON document. Missing keys take defaults; unknown keys,
/// wrong types and out-of-range values raise ErrorCode::Config.
RunConfig parse_config(std::string_view json_text);
RunConfig load_config(const std::string& path);
void validate(const RunConfig& cfg);

/// The fully resolved configuration as canonical JSON (sorted keys).
std::string to_json(const RunConfig& cfg);

/// Environment, mechanism and parameter layout described by a configuration.
class Experiment {
 public:
  explicit Experiment(const RunConfig& cfg);

  const RunConfig& config() const { return cfg_; }
  const EnvModel& env() const { return *env_; }
  /// Null unless the environment is an auction.
  AuctionEnv* auction() const { return auction_; }

  std::vector<Segment> segments() const;
  /// Neural mechanisms use the seeded initializer; everything else starts at 0.
  std::vector<double> initial_theta(std::uint64_t seed) const;
  std::vector<double> load_theta(const std::string& path) const;
  /// Parameters from `path`, or the initial ones when it is empty.
  std::vector<double> theta_or_initial(const std::string& path, std::uint64_t seed) const;

  AdjointConfig adjoint(int T) const;
  LogPolicy initial_logits() const { return LogPolicy::zeros(env_->dims()); }

 private:
  RunConfig cfg_;
  std::unique_ptr<EnvModel> env_;
  AuctionEnv* auction_ = nullptr;
  std::optional<MechNetShape> shape_;
};

struct SolveResult {
  std::vector<double> exploitability;  // after each of the T updates
  Policy policy = Policy::uniform(Dims{});
  Flow flow{Dims{}, {{1.0}}};
};

struct CurveRow {
  int iter = 0;
  double objective = 0.0;
  double exploitability = 0.0;
};

struct DesignResult {
  std::vector<CurveRow> curve;
  std::vector<double> theta;
  Policy policy = Policy::uniform(Dims{});  // softmax of the T_val iterate at the final theta
  double final_objective = 0.0;
  double final_exploitability = 0.0;
  long objective_evaluations = 0;
};

struct GradcheckResult {
  double max_rel_error = 0.0;
  double grad_norm = 0.0;
  double objective = 0.0;
  bool passed = false;
};

/// Objective at T_val and exploitability of the T_val iterate.
CurveRow evaluate_design(const Experiment& ex, std::span<const double> theta, int iter);

/// Outer training loop without file output. `on_eval` sees every curve row
/// as soon as it is computed.
/// `theta` holds the latest accepted parameters even if training throws.
DesignResult train(Experiment& ex, std::vector<double>& theta,
                   const std::function<void(const CurveRow&)>& on_eval = {});

SolveResult run_solve(const RunConfig& cfg);
DesignResult run_design(const RunConfig& cfg);
GapStudy run_simulate_n(const RunConfig& cfg);
GradcheckResult run_gradcheck(const RunConfig& cfg);

/// Max over coordinates of |fd - g| / max(1, |g|), with g from amid_gradient
/// and fd from central differences of the T-step objective.
GradcheckResult amid_gradcheck(const EnvModel& env, std::span<const double> theta,
                               const AdjointConfig& cfg, double eps);

}  // namespace mfid
