#pragma once

// Outer-loop optimizers over theta. Everything ascends: objectives are
// maximized.

#include <functional>
#include <random>
#include <span>
#include <vector>

namespace mfid {

enum class OptimizerKind { Adam, Sgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

void validate(const OptimizerConfig& cfg);

class Optimizer {
 public:
  Optimizer(OptimizerConfig cfg, std::size_t dim);

  /// theta += lr * grad (SGD) or lr * m_hat / (sqrt(v_hat) + eps) (Adam).
  void step(std::vector<double>& theta, std::span<const double> grad);

  const OptimizerConfig& config() const { return cfg_; }
  long steps() const { return t_; }
  std::span<const double> first_moment() const { return m_; }
  std::span<const double> second_moment() const { return v_; }

 private:
  OptimizerConfig cfg_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

using Objective = std::function<double(std::span<const double>)>;

/// Uniform direction on the unit sphere (normalized standard normals).
std::vector<double> sphere_direction(std::size_t dim, std::mt19937_64& rng);

/// (G(theta + u z) - G(theta - u z)) / (2u) * D * z for the given unit z.
std::vector<double> zeroth_order_grad(const Objective& G, std::span<const double> theta, double u,
                                      std::span<const double> z);
std::vector<double> zeroth_order_grad(const Objective& G, std::span<const double> theta, double u,
                                      std::mt19937_64& rng);

struct AnnealResult {
  std::vector<double> theta;
  double value = 0.0;
};

/// Best of G(theta), G(theta + sigma n), G(theta - sigma n); ties keep theta.
AnnealResult anneal_step(const Objective& G, std::span<const double> theta, double sigma,
                         std::span<const double> n);
AnnealResult anneal_step(const Objective& G, std::span<const double> theta, double sigma,
                         std::mt19937_64& rng);
/// Same, with G(theta) already known; only the two perturbations are evaluated.
AnnealResult anneal_step(const Objective& G, std::span<const double> theta, double sigma,
                         std::span<const double> n, double current);

/// Hyperparameter grids used to tune the gradient-free baselines.
const std::vector<double>& baseline_lr_grid();
const std::vector<double>& baseline_u_grid();
const std::vector<double>& baseline_sigma_grid();

}  // namespace mfid
