#ifndef RLVR_FORGE_H
#define RLVR_FORGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Bumped on any incompatible change to this interface.
 */
#define RF_ABI_VERSION 1

/**
 * Largest option count accepted at the boundary.
 */
#define RF_MAX_OPTIONS 26

typedef enum RfStatus {
  RF_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  RF_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  RF_STATUS_INVALID_UTF8 = 2,
  /**
   * An argument or configuration value is out of range.
   */
  RF_STATUS_INVALID_ARGUMENT = 3,
  /**
   * A referenced file does not exist.
   */
  RF_STATUS_FILE_NOT_FOUND = 4,
  /**
   * Malformed input data or a violated precondition.
   */
  RF_STATUS_DATA_ERROR = 5,
  /**
   * A remote model, validator or teacher could not be reached.
   */
  RF_STATUS_EXTERNAL_ERROR = 6,
  /**
   * A panic was caught at the boundary.
   */
  RF_STATUS_INTERNAL = 7,
} RfStatus;

/**
 * Loaded knowledge graph.
 */
typedef struct RfGraph RfGraph;

/**
 * Trained policy restored from a checkpoint.
 */
typedef struct RfPolicy RfPolicy;

/**
 * Reward breakdown for one completion.
 */
typedef struct RfReward {
  bool format_ok;
  bool correct;
  /**
   * Extracted label, or 0 when none.
   */
  uint8_t extracted;
  double total;
} RfReward;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

uint32_t rf_abi_version(void);

/**
 * Message for the calling thread's most recent failure, or NULL. Valid
 * until the thread's next call into the library.
 */
const char *rf_last_error(void);

/**
 * Releases a string returned by the library.
 *
 * # Safety
 * `s` must be NULL or a pointer returned by this library, freed once.
 */
void rf_string_free(char *s);

/**
 * Whether `completion` holds exactly one well-formed answer tag pair.
 *
 * # Safety
 * `completion` must be a NUL-terminated string; `out_ok` must be writable.
 */
enum RfStatus rf_check_format(const char *completion, bool *out_ok);

/**
 * Extracts the answer label, writing 0 when there is none.
 *
 * # Safety
 * `completion` must be a NUL-terminated string; `out_label` must be writable.
 */
enum RfStatus rf_extract_answer(const char *completion, size_t n_options, uint8_t *out_label);

/**
 * Scores a completion against the answer key `key` (an ASCII label).
 *
 * # Safety
 * `completion` must be a NUL-terminated string; `out_reward` must be
 * writable.
 */
enum RfStatus rf_compute_reward(const char *completion,
                                uint8_t key,
                                size_t n_options,
                                double w_correct,
                                double w_format,
                                struct RfReward *out_reward);

/**
 * Group-relative advantages of `n` rewards, written to `out_adv[0..n]`.
 *
 * # Safety
 * `rewards` and `out_adv` must each address `n` doubles.
 */
enum RfStatus rf_group_advantages(const double *rewards, size_t n, double *out_adv);

/**
 * Unweighted mean of `n` benchmark accuracies.
 *
 * # Safety
 * `accuracies` must address `n` doubles; `out_mean` must be writable.
 */
enum RfStatus rf_macro_average(const double *accuracies, size_t n, double *out_mean);

/**
 * Loads a JSON-Lines knowledge graph.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_graph` must be writable.
 */
enum RfStatus rf_graph_load(const char *path, struct RfGraph **out_graph);

/**
 * # Safety
 * `graph` must be NULL or a handle from [`rf_graph_load`], freed once.
 */
void rf_graph_free(struct RfGraph *graph);

/**
 * # Safety
 * `graph` must be a live handle; `out_count` must be writable.
 */
enum RfStatus rf_graph_entity_count(const struct RfGraph *graph, size_t *out_count);

/**
 * # Safety
 * `graph` must be a live handle; `out_count` must be writable.
 */
enum RfStatus rf_graph_edge_count(const struct RfGraph *graph, size_t *out_count);

/**
 * # Safety
 * `graph` must be a live handle, `entity_id` a NUL-terminated string and
 * `out_score` writable.
 */
enum RfStatus rf_graph_rarity_score(const struct RfGraph *graph,
                                    const char *entity_id,
                                    double *out_score);

/**
 * Generates `count` questions with `n_options` options each and returns
 * them as JSON Lines. The result is released with [`rf_string_free`].
 *
 * # Safety
 * `graph` must be a live handle; `out_jsonl` must be writable.
 */
enum RfStatus rf_synth_generate_jsonl(const struct RfGraph *graph,
                                      size_t count,
                                      size_t n_options,
                                      uint64_t seed,
                                      char **out_jsonl);

/**
 * Restores a policy from a checkpoint written by `rlvr-forge train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_policy` must be writable.
 */
enum RfStatus rf_policy_load(const char *path, struct RfPolicy **out_policy);

/**
 * # Safety
 * `policy` must be NULL or a handle from [`rf_policy_load`], freed once.
 */
void rf_policy_free(struct RfPolicy *policy);

/**
 * Greedy completion for a question whose options are labelled `A`, `B`,
 * ... in order. The result is released with [`rf_string_free`].
 *
 * # Safety
 * `policy` must be a live handle, `stem` a NUL-terminated string, `options`
 * an array of `n_options` NUL-terminated strings and `out_completion`
 * writable.
 */
enum RfStatus rf_policy_respond(const struct RfPolicy *policy,
                                const char *stem,
                                const char *const *options,
                                size_t n_options,
                                char **out_completion);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RLVR_FORGE_H */
