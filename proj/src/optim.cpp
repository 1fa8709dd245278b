#include "mfid/optim.hpp"

#include <cmath>

#include "mfid/error.hpp"

namespace mfid {

namespace {

double checked(double g) {
  if (!std::isfinite(g)) fail(ErrorCode::Numeric, "objective evaluation is not finite");
  return g;
}

}  // namespace

void validate(const OptimizerConfig& cfg) {
  require(cfg.lr > 0.0 && std::isfinite(cfg.lr), "optimizer: lr must be positive");
  if (cfg.kind == OptimizerKind::Adam) {
    require(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0, "optimizer: beta1 must lie in [0, 1)");
    require(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0, "optimizer: beta2 must lie in [0, 1)");
    require(cfg.eps > 0.0, "optimizer: eps must be positive");
  }
}

Optimizer::Optimizer(OptimizerConfig cfg, std::size_t dim)
    : cfg_(cfg), m_(dim, 0.0), v_(dim, 0.0) {
  validate(cfg_);
}

void Optimizer::step(std::vector<double>& theta, std::span<const double> grad) {
  require(theta.size() == m_.size() && grad.size() == m_.size(), "optimizer: shape mismatch");
  for (double g : grad)
    if (!std::isfinite(g)) fail(ErrorCode::Numeric, "optimizer: non-finite gradient");
  ++t_;
  if (cfg_.kind == OptimizerKind::Sgd) {
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += cfg_.lr * grad[i];
    return;
  }
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
    const double mhat = m_[i] / c1;
    const double vhat = v_[i] / c2;
    theta[i] += cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
  }
}

std::vector<double> sphere_direction(std::size_t dim, std::mt19937_64& rng) {
  require(dim >= 1, "sphere_direction: dimension must be positive");
  std::normal_distribution<double> normal;
  std::vector<double> z(dim);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double& x : z) {
      x = normal(rng);
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (double& x : z) x /= norm;
  return z;
}

std::vector<double> zeroth_order_grad(const Objective& G, std::span<const double> theta, double u,
                                      std::span<const double> z) {
  require(u > 0.0, "zeroth_order_grad: u must be positive");
  require(z.size() == theta.size(), "zeroth_order_grad: direction size");
  std::vector<double> plus(theta.begin(), theta.end()), minus(theta.begin(), theta.end());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    plus[i] += u * z[i];
    minus[i] -= u * z[i];
  }
  const double diff = checked(G(plus)) - checked(G(minus));
  const double coef = diff / (2.0 * u) * static_cast<double>(theta.size());
  std::vector<double> g(theta.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = coef * z[i];
  return g;
}

std::vector<double> zeroth_order_grad(const Objective& G, std::span<const double> theta, double u,
                                      std::mt19937_64& rng) {
  const auto z = sphere_direction(theta.size(), rng);
  return zeroth_order_grad(G, theta, u, z);
}

AnnealResult anneal_step(const Objective& G, std::span<const double> theta, double sigma,
                         std::span<const double> n) {
  require(sigma > 0.0, "anneal_step: sigma must be positive");
  return anneal_step(G, theta, sigma, n, checked(G(theta)));
}

AnnealResult anneal_step(const Objective& G, std::span<const double> theta, double sigma,
                         std::span<const double> n, double current) {
  require(sigma > 0.0, "anneal_step: sigma must be positive");
  require(n.size() == theta.size(), "anneal_step: direction size");
  AnnealResult best{std::vector<double>(theta.begin(), theta.end()), checked(current)};
  for (double sign : {1.0, -1.0}) {
    std::vector<double> cand(theta.begin(), theta.end());
    for (std::size_t i = 0; i < cand.size(); ++i) cand[i] += sign * sigma * n[i];
    const double v = checked(G(cand));
    if (v > best.value) best = {std::move(cand), v};
  }
  return best;
}

AnnealResult anneal_step(const Objective& G, std::span<const double> theta, double sigma,
                         std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  std::vector<double> n(theta.size());
  for (double& x : n) x = normal(rng);
  return anneal_step(G, theta, sigma, n);
}

const std::vector<double>& baseline_lr_grid() {
  static const std::vector<double> g{3e-5, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2};
  return g;
}

const std::vector<double>& baseline_u_grid() {
  static const std::vector<double> g{1e-3, 1e-2, 3e-2};
  return g;
}

const std::vector<double>& baseline_sigma_grid() {
  static const std::vector<double> g{1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 3e-2};
  return g;
}

}  // namespace mfid
