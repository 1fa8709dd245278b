#ifndef MFID_H
#define MFID_H

/* C interface to the mfid library. Every call returns an mfid_status; on
 * failure mfid_last_error() describes the most recent error on the calling
 * thread. Handles are opaque and owned by the caller. */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define MFID_API __attribute__((visibility("default")))
#else
#define MFID_API
#endif

typedef enum mfid_status {
  MFID_OK = 0,
  MFID_ERR_INVALID_ARGUMENT = 1,
  MFID_ERR_CONFIG = 2,
  MFID_ERR_IO = 3,
  MFID_ERR_NUMERIC = 4,
  MFID_ERR_TOLERANCE = 5,
  MFID_ERR_INTERNAL = 99
} mfid_status;

typedef struct mfid_config mfid_config;
typedef struct mfid_env mfid_env;

MFID_API const char* mfid_version(void);
MFID_API const char* mfid_last_error(void);
MFID_API const char* mfid_status_name(mfid_status status);

/* Configuration (a JSON document; unknown keys are rejected). */
MFID_API mfid_status mfid_config_load(const char* path, mfid_config** out);
MFID_API mfid_status mfid_config_parse(const char* json_text, mfid_config** out);
MFID_API void mfid_config_free(mfid_config* cfg);
MFID_API mfid_status mfid_config_set_seed(mfid_config* cfg, uint64_t seed);
MFID_API mfid_status mfid_config_set_output_dir(mfid_config* cfg, const char* dir);
/* Resolved configuration as JSON. The string stays valid until the next call
 * on the same handle or until it is freed. */
MFID_API const char* mfid_config_json(mfid_config* cfg);

/* Subcommands. Output files go to the configured output directory. */
MFID_API mfid_status mfid_run_solve(const mfid_config* cfg, double* final_exploitability);
MFID_API mfid_status mfid_run_design(const mfid_config* cfg, double* final_objective);
MFID_API mfid_status mfid_run_simulate_n(const mfid_config* cfg, double* slope);
/* MFID_ERR_TOLERANCE when the error exceeds the configured tolerance; the
 * outputs are filled in either way. */
MFID_API mfid_status mfid_run_gradcheck(const mfid_config* cfg, double* max_rel_error,
                                        double* grad_norm);

/* Direct access to the configured environment. Arrays are caller-allocated;
 * policies are [h][s][a] probabilities. */
MFID_API mfid_status mfid_env_create(const mfid_config* cfg, mfid_env** out);
MFID_API void mfid_env_free(mfid_env* env);
MFID_API mfid_status mfid_env_dims(const mfid_env* env, int* horizon, int* states, int* actions,
                                   size_t* param_size);
MFID_API mfid_status mfid_env_initial_params(const mfid_env* env, uint64_t seed, double* theta,
                                             size_t n);
MFID_API mfid_status mfid_env_t_step_objective(const mfid_env* env, const double* theta,
                                               size_t n, int T, double* value);
MFID_API mfid_status mfid_env_amid_gradient(const mfid_env* env, const double* theta, size_t n,
                                            int T, double* value, double* grad);
MFID_API mfid_status mfid_env_exploitability(const mfid_env* env, const double* theta, size_t n,
                                             const double* policy, size_t policy_len,
                                             double* value);

#ifdef __cplusplus
}
#endif

#endif
