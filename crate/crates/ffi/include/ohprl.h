#ifndef OHPRL_H
#define OHPRL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OhprlStatus {
  OHPRL_STATUS_OK = 0,
  OHPRL_STATUS_NULL_POINTER = 1,
  OHPRL_STATUS_INVALID_ARGUMENT = 2,
  OHPRL_STATUS_CONFIG = 3,
  OHPRL_STATUS_SHAPE = 4,
  OHPRL_STATUS_NON_FINITE = 5,
  OHPRL_STATUS_IO = 6,
  OHPRL_STATUS_CHECKPOINT = 7,
  OHPRL_STATUS_EPISODE_OVER = 8,
  OHPRL_STATUS_INTERNAL = 9,
} OhprlStatus;

/**
 * Opaque environment instance.
 */
typedef struct OhprlEnv OhprlEnv;

/**
 * Opaque trained policy.
 */
typedef struct OhprlPolicy OhprlPolicy;

/**
 * Result flags of one step.
 */
typedef struct OhprlStepInfo {
  double reward;
  bool done;
  bool success;
  bool unsafe_contact;
  bool truncated;
} OhprlStepInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next ohprl call on the same thread.
 */
const char *ohprl_last_error(void);

/**
 * Width of the action vector for every environment.
 */
size_t ohprl_action_dim(void);

/**
 * Creates `press_button` or `push_ball` with default geometry, reset on `seed`.
 *
 * # Safety
 * `env_id` must be a NUL-terminated string; `out` must be writable.
 */
enum OhprlStatus ohprl_env_new(const char *env_id, uint64_t seed, struct OhprlEnv **out);

/**
 * # Safety
 * `env` must come from [`ohprl_env_new`] and not be used afterwards. Null is ignored.
 */
void ohprl_env_free(struct OhprlEnv *env);

/**
 * # Safety
 * `env` must be a live handle.
 */
size_t ohprl_env_obs_dim(const struct OhprlEnv *env);

/**
 * Starts a new episode on `seed`.
 *
 * # Safety
 * `env` must be a live handle.
 */
enum OhprlStatus ohprl_env_reset(struct OhprlEnv *env, uint64_t seed);

/**
 * Copies the current observation into `out` (capacity `len`).
 *
 * # Safety
 * `env` must be a live handle; `out` must hold `len` doubles.
 */
enum OhprlStatus ohprl_env_observe(const struct OhprlEnv *env, double *out, size_t len);

/**
 * Executes `action` (length [`ohprl_action_dim`]); the next observation is
 * readable with [`ohprl_env_observe`]. Stepping a finished episode
 * returns `OHPRL_STATUS_EPISODE_OVER`.
 *
 * # Safety
 * `env` must be a live handle, `action` must hold `len` doubles, `info`
 * must be writable or null.
 */
enum OhprlStatus ohprl_env_step(struct OhprlEnv *env,
                                const double *action,
                                size_t len,
                                struct OhprlStepInfo *info);

/**
 * Loads the policy from a checkpoint directory.
 *
 * # Safety
 * `dir` must be a NUL-terminated path; `out` must be writable.
 */
enum OhprlStatus ohprl_policy_load(const char *dir, struct OhprlPolicy **out);

/**
 * # Safety
 * `policy` must come from [`ohprl_policy_load`]. Null is ignored.
 */
void ohprl_policy_free(struct OhprlPolicy *policy);

/**
 * # Safety
 * `policy` must be a live handle.
 */
size_t ohprl_policy_obs_dim(const struct OhprlPolicy *policy);

/**
 * Deterministic action `tanh(mean)` for one observation.
 *
 * # Safety
 * `policy` must be a live handle; `obs` holds `obs_len` doubles and
 * `action` holds `action_len` doubles.
 */
enum OhprlStatus ohprl_policy_act(const struct OhprlPolicy *policy,
                                  const double *obs,
                                  size_t obs_len,
                                  double *action,
                                  size_t action_len);

/**
 * Trains with the configuration file at `config_path` (null for
 * defaults) plus `n_overrides` `key=value` strings, then writes the run
 * directory named by `run.out_dir`.
 *
 * # Safety
 * `config_path` is null or a NUL-terminated path; `overrides` points to
 * `n_overrides` NUL-terminated strings (may be null when zero).
 */
enum OhprlStatus ohprl_train(const char *config_path,
                             const char *const *overrides,
                             size_t n_overrides,
                             bool lockstep);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OHPRL_H */
