#include "mfid/mfid.h"

#include <exception>
#include <new>
#include <optional>
#include <string>

#include "mfid/error.hpp"
#include "mfid/harness.hpp"

struct mfid_config {
  mfid::RunConfig cfg;
  std::string json;
};

struct mfid_env {
  std::unique_ptr<mfid::Experiment> ex;
};

namespace {

thread_local std::string last_error;

mfid_status to_status(mfid::ErrorCode code) {
  switch (code) {
    case mfid::ErrorCode::InvalidArgument: return MFID_ERR_INVALID_ARGUMENT;
    case mfid::ErrorCode::Config: return MFID_ERR_CONFIG;
    case mfid::ErrorCode::Io: return MFID_ERR_IO;
    case mfid::ErrorCode::Numeric: return MFID_ERR_NUMERIC;
    case mfid::ErrorCode::Tolerance: return MFID_ERR_TOLERANCE;
  }
  return MFID_ERR_INTERNAL;
}

template <typename F>
mfid_status guard(F&& f) {
  try {
    last_error.clear();
    return f();
  } catch (const mfid::Error& e) {
    last_error = e.what();
    return to_status(e.code());
  } catch (const std::invalid_argument& e) {
    last_error = e.what();
    return MFID_ERR_INVALID_ARGUMENT;
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return MFID_ERR_INTERNAL;
  } catch (const std::exception& e) {
    last_error = e.what();
    return MFID_ERR_INTERNAL;
  } catch (...) {
    last_error = "unknown error";
    return MFID_ERR_INTERNAL;
  }
}

mfid_status invalid(const char* msg) {
  last_error = msg;
  return MFID_ERR_INVALID_ARGUMENT;
}

void check_params(const mfid_env* env, const double* theta, size_t n) {
  mfid::require(env != nullptr, "null environment handle");
  mfid::require(n == env->ex->env().param_size(), "parameter vector has wrong size");
  mfid::require(theta != nullptr || n == 0, "null parameter pointer");
}

}  // namespace

extern "C" {

const char* mfid_version(void) { return mfid::kVersion; }

const char* mfid_last_error(void) { return last_error.c_str(); }

const char* mfid_status_name(mfid_status status) {
  switch (status) {
    case MFID_OK: return "ok";
    case MFID_ERR_INVALID_ARGUMENT: return "invalid argument";
    case MFID_ERR_CONFIG: return "configuration error";
    case MFID_ERR_IO: return "i/o error";
    case MFID_ERR_NUMERIC: return "numerical error";
    case MFID_ERR_TOLERANCE: return "tolerance exceeded";
    case MFID_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

mfid_status mfid_config_load(const char* path, mfid_config** out) {
  if (!path || !out) return invalid("null argument");
  return guard([&] {
    *out = new mfid_config{mfid::load_config(path), {}};
    return MFID_OK;
  });
}

mfid_status mfid_config_parse(const char* json_text, mfid_config** out) {
  if (!json_text || !out) return invalid("null argument");
  return guard([&] {
    *out = new mfid_config{mfid::parse_config(json_text), {}};
    return MFID_OK;
  });
}

void mfid_config_free(mfid_config* cfg) { delete cfg; }

mfid_status mfid_config_set_seed(mfid_config* cfg, uint64_t seed) {
  if (!cfg) return invalid("null config handle");
  cfg->cfg.training.seed = seed;
  return MFID_OK;
}

mfid_status mfid_config_set_output_dir(mfid_config* cfg, const char* dir) {
  if (!cfg || !dir) return invalid("null argument");
  if (!*dir) return invalid("empty output directory");
  return guard([&] {
    cfg->cfg.output_dir = dir;
    return MFID_OK;
  });
}

const char* mfid_config_json(mfid_config* cfg) {
  if (!cfg) return nullptr;
  try {
    cfg->json = mfid::to_json(cfg->cfg);
  } catch (...) {
    return nullptr;
  }
  return cfg->json.c_str();
}

mfid_status mfid_run_solve(const mfid_config* cfg, double* final_exploitability) {
  if (!cfg) return invalid("null config handle");
  return guard([&] {
    const auto r = mfid::run_solve(cfg->cfg);
    if (final_exploitability)
      *final_exploitability = r.exploitability.empty() ? 0.0 : r.exploitability.back();
    return MFID_OK;
  });
}

mfid_status mfid_run_design(const mfid_config* cfg, double* final_objective) {
  if (!cfg) return invalid("null config handle");
  return guard([&] {
    const auto r = mfid::run_design(cfg->cfg);
    if (final_objective) *final_objective = r.final_objective;
    return MFID_OK;
  });
}

mfid_status mfid_run_simulate_n(const mfid_config* cfg, double* slope) {
  if (!cfg) return invalid("null config handle");
  return guard([&] {
    const auto r = mfid::run_simulate_n(cfg->cfg);
    if (slope) *slope = r.slope;
    return MFID_OK;
  });
}

mfid_status mfid_run_gradcheck(const mfid_config* cfg, double* max_rel_error, double* grad_norm) {
  if (!cfg) return invalid("null config handle");
  return guard([&] {
    const auto r = mfid::run_gradcheck(cfg->cfg);
    if (max_rel_error) *max_rel_error = r.max_rel_error;
    if (grad_norm) *grad_norm = r.grad_norm;
    if (!r.passed) {
      last_error = "max relative error " + std::to_string(r.max_rel_error) + " exceeds tolerance " +
                   std::to_string(cfg->cfg.gradcheck.tolerance);
      return MFID_ERR_TOLERANCE;
    }
    return MFID_OK;
  });
}

mfid_status mfid_env_create(const mfid_config* cfg, mfid_env** out) {
  if (!cfg || !out) return invalid("null argument");
  return guard([&] {
    *out = new mfid_env{std::make_unique<mfid::Experiment>(cfg->cfg)};
    return MFID_OK;
  });
}

void mfid_env_free(mfid_env* env) { delete env; }

mfid_status mfid_env_dims(const mfid_env* env, int* horizon, int* states, int* actions,
                          size_t* param_size) {
  if (!env) return invalid("null environment handle");
  const auto d = env->ex->env().dims();
  if (horizon) *horizon = d.horizon;
  if (states) *states = d.states;
  if (actions) *actions = d.actions;
  if (param_size) *param_size = env->ex->env().param_size();
  return MFID_OK;
}

mfid_status mfid_env_initial_params(const mfid_env* env, uint64_t seed, double* theta, size_t n) {
  return guard([&] {
    check_params(env, theta, n);
    const auto init = env->ex->initial_theta(seed);
    std::copy(init.begin(), init.end(), theta);
    return MFID_OK;
  });
}

mfid_status mfid_env_t_step_objective(const mfid_env* env, const double* theta, size_t n, int T,
                                      double* value) {
  if (!value) return invalid("null output pointer");
  return guard([&] {
    check_params(env, theta, n);
    mfid::require(T >= 0, "T must be nonnegative");
    *value = mfid::t_step_objective(env->ex->env(), std::span<const double>(theta, n),
                                    env->ex->initial_logits(), env->ex->adjoint(T));
    return MFID_OK;
  });
}

mfid_status mfid_env_amid_gradient(const mfid_env* env, const double* theta, size_t n, int T,
                                   double* value, double* grad) {
  if (!grad && n > 0) return invalid("null gradient pointer");
  return guard([&] {
    check_params(env, theta, n);
    mfid::require(T >= 0, "T must be nonnegative");
    const auto r = mfid::amid_gradient(env->ex->env(), std::span<const double>(theta, n),
                                       env->ex->initial_logits(), env->ex->adjoint(T));
    if (value) *value = r.objective_value;
    std::copy(r.grad_theta.begin(), r.grad_theta.end(), grad);
    return MFID_OK;
  });
}

mfid_status mfid_env_exploitability(const mfid_env* env, const double* theta, size_t n,
                                    const double* policy, size_t policy_len, double* value) {
  if (!value || !policy) return invalid("null argument");
  return guard([&] {
    check_params(env, theta, n);
    const auto d = env->ex->env().dims();
    mfid::require(policy_len == d.table_size(), "policy has wrong size");
    std::optional<mfid::Policy> pi;
    try {
      pi.emplace(d, std::vector<double>(policy, policy + policy_len));
    } catch (const mfid::Error& e) {
      mfid::fail(mfid::ErrorCode::InvalidArgument, e.what());
    }
    *value = mfid::exploitability(env->ex->env(), std::span<const double>(theta, n), *pi,
                                  env->ex->config().solver.tau);
    return MFID_OK;
  });
}

}  // extern "C"
