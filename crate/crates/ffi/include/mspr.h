#ifndef MSPR_H
#define MSPR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MsprStatus {
  MSPR_STATUS_OK = 0,
  MSPR_STATUS_NULL_POINTER = 1,
  MSPR_STATUS_INVALID_ARGUMENT = 2,
  MSPR_STATUS_DIMENSION = 3,
  MSPR_STATUS_NUMERIC = 4,
  MSPR_STATUS_FORMAT = 5,
  MSPR_STATUS_IO = 6,
  MSPR_STATUS_DATASET = 7,
  MSPR_STATUS_CONTRACT = 8,
  MSPR_STATUS_PANIC = 9,
} MsprStatus;

/*
 Offline dataset handle.
 */
typedef struct MsprDataset MsprDataset;

/*
 Environment handle.
 */
typedef struct MsprEnv MsprEnv;

/*
 Trained representation and agent bound to an environment.
 */
typedef struct MsprPolicy MsprPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. Valid until the
 next call on the same thread.
 */
const char *mspr_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *mspr_version(void);

/*
 Number of fixed evaluation tasks per environment.
 */
size_t mspr_num_eval_tasks(void);

/*
 `name` is one of `pointmaze_medium`, `pointmaze_large`, `pushbox`.
 */
enum MsprStatus mspr_env_new(const char *name, struct MsprEnv **out);

void mspr_env_free(struct MsprEnv *env);

/*
 Values per state (2 for the mazes, 4 for the push arena); 0 for null.
 */
size_t mspr_env_state_len(const struct MsprEnv *env);

/*
 Start state and goal of evaluation task `index`.
 */
enum MsprStatus mspr_env_eval_task(const struct MsprEnv *env,
                                   size_t index,
                                   double *out_state,
                                   double *out_goal);

/*
 One environment step; the action is clipped to `[-1, 1]²`.
 */
enum MsprStatus mspr_env_step(const struct MsprEnv *env,
                              const double *state,
                              const double *action,
                              double *out_state);

enum MsprStatus mspr_env_is_success(const struct MsprEnv *env,
                                    const double *state,
                                    const double *goal,
                                    bool *out);

/*
 Collects `transitions` transitions with the scripted expert. `mode` is
 `navigate` or `stitch`; `fragment_cells` only matters for `stitch`.
 */
enum MsprStatus mspr_dataset_collect(const struct MsprEnv *env,
                                     const char *mode,
                                     double sigma,
                                     size_t transitions,
                                     size_t fragment_cells,
                                     uint64_t seed,
                                     struct MsprDataset **out);

enum MsprStatus mspr_dataset_load(const char *path, struct MsprDataset **out);

enum MsprStatus mspr_dataset_save(const struct MsprDataset *ds, const char *path);

/*
 Number of transitions, 0 for null.
 */
size_t mspr_dataset_num_transitions(const struct MsprDataset *ds);

void mspr_dataset_free(struct MsprDataset *ds);

/*
 Trains on `ds`. `config` holds `key=value` lines (the training keys of a
 `config.resolved` file); null or empty means defaults.
 */
enum MsprStatus mspr_train(const struct MsprDataset *ds,
                           const char *config,
                           struct MsprPolicy **out);

/*
 Loads a checkpoint written by `mspr train` or [`mspr_policy_save`] for
 use in `env`.
 */
enum MsprStatus mspr_policy_load(const char *path,
                                 const struct MsprEnv *env,
                                 struct MsprPolicy **out);

enum MsprStatus mspr_policy_save(const struct MsprPolicy *policy, const char *path);

/*
 Deterministic action in `[-1, 1]²` for `state` towards `goal`.
 */
enum MsprStatus mspr_policy_act(const struct MsprPolicy *policy,
                                const double *state,
                                const double *goal,
                                double *out_action);

/*
 Critic estimate of the policy's own action.
 */
enum MsprStatus mspr_policy_q(const struct MsprPolicy *policy,
                              const double *state,
                              const double *goal,
                              double *out);

/*
 Mean success over the fixed tasks, `episodes` per task.
 */
enum MsprStatus mspr_policy_evaluate(const struct MsprPolicy *policy,
                                     size_t episodes,
                                     uint64_t seed,
                                     double *out_success);

void mspr_policy_free(struct MsprPolicy *policy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MSPR_H */
