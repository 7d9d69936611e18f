#ifndef MOEJAM_H
#define MOEJAM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result of every fallible call.
 */
typedef enum MjStatus {
  MJ_STATUS_OK = 0,
  MJ_STATUS_NULL_POINTER = 1,
  MJ_STATUS_INVALID_ARGUMENT = 2,
  /**
   * A value outside the model's domain, e.g. a bad geometry.
   */
  MJ_STATUS_DOMAIN = 3,
  MJ_STATUS_IO = 4,
  /**
   * The grid would exceed the evaluation budget.
   */
  MJ_STATUS_BUDGET = 5,
  MJ_STATUS_PANIC = 6,
} MjStatus;

typedef struct MjChannel MjChannel;

typedef struct MjPolicy MjPolicy;

typedef struct MjScenario MjScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty if none. Valid
 * until the next call on this thread.
 */
const char *moejam_last_error(void);

/**
 * The default three-AP scenario. Never null.
 */
struct MjScenario *moejam_scenario_default(void);

/**
 * Loads the `[scenario]` section of a run configuration file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum MjStatus moejam_scenario_load(const char *path, struct MjScenario **out);

/**
 * # Safety
 * `scenario` must come from this library and not be freed twice.
 */
void moejam_scenario_free(struct MjScenario *scenario);

/**
 * Number of APs, which is also the action length. Zero for null.
 *
 * # Safety
 * `scenario` must be null or a live handle.
 */
size_t moejam_scenario_n_aps(const struct MjScenario *scenario);

/**
 * Receivers per AP: users then eavesdroppers. Zero for null.
 *
 * # Safety
 * `scenario` must be null or a live handle.
 */
size_t moejam_scenario_n_receivers(const struct MjScenario *scenario);

/**
 * Pure path-loss channel (unit fading).
 *
 * # Safety
 * `scenario` must be a live handle; `out` must be writable.
 */
enum MjStatus moejam_channel_mean(const struct MjScenario *scenario, struct MjChannel **out);

/**
 * One Rayleigh block-fading draw, reproducible from `seed`.
 *
 * # Safety
 * `scenario` must be a live handle; `out` must be writable.
 */
enum MjStatus moejam_channel_realize(const struct MjScenario *scenario,
                                     uint64_t seed,
                                     struct MjChannel **out);

/**
 * # Safety
 * `channel` must come from this library and not be freed twice.
 */
void moejam_channel_free(struct MjChannel *channel);

/**
 * Linear power gain from `ap` to `receiver`.
 *
 * # Safety
 * `channel` must be a live handle; `out` must be writable.
 */
enum MjStatus moejam_channel_gain(const struct MjChannel *channel,
                                  size_t ap,
                                  size_t receiver,
                                  double *out);

/**
 * Sum of secrecy rates plus `weight` times the sum of secure energy
 * efficiencies, for per-AP `powers` in watts.
 *
 * # Safety
 * `powers` must point to `n_powers` doubles; handles must be live.
 */
enum MjStatus moejam_reward(const struct MjScenario *scenario,
                            const struct MjChannel *channel,
                            const double *powers,
                            size_t n_powers,
                            double weight,
                            double *out);

/**
 * Exhaustive search over `resolution` power levels per AP. Writes the best
 * allocation (watts) to `out_powers` and its reward to `out_reward`.
 *
 * # Safety
 * `out_powers` must hold `n_powers` doubles; handles must be live.
 */
enum MjStatus moejam_grid_search(const struct MjScenario *scenario,
                                 const struct MjChannel *channel,
                                 double weight,
                                 size_t resolution,
                                 double *out_powers,
                                 size_t n_powers,
                                 double *out_reward);

/**
 * Loads the policy half of a training checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum MjStatus moejam_policy_load(const char *path, struct MjPolicy **out);

/**
 * # Safety
 * `policy` must come from this library and not be freed twice.
 */
void moejam_policy_free(struct MjPolicy *policy);

/**
 * Normalized action in `[0, 1]^n` for `state`, sampled with a stream seeded
 * by `seed`. `out_expert` receives the routed expert, or -1 for policies
 * without experts; it may be null.
 *
 * # Safety
 * Buffers must hold the stated lengths; `policy` must be live.
 */
enum MjStatus moejam_policy_act(const struct MjPolicy *policy,
                                const double *state,
                                size_t state_len,
                                uint64_t seed,
                                double *out_action,
                                size_t action_len,
                                int32_t *out_expert);

/**
 * Clears the thread's error message.
 */
void moejam_clear_error(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOEJAM_H */
