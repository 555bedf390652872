#ifndef SEAL_H
#define SEAL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Which estimate a report value refers to.
 */
typedef enum SealMethod {
  SEAL_METHOD_FQE = 0,
  SEAL_METHOD_MC = 1,
} SealMethod;

/**
 * Which policy a report value refers to.
 */
typedef enum SealPolicy {
  SEAL_POLICY_SEAL = 0,
  SEAL_POLICY_BASELINE = 1,
} SealPolicy;

/**
 * Status codes. `2`-`4` agree with the exit codes of the `seal` binary.
 */
typedef enum SealStatus {
  SEAL_STATUS_OK = 0,
  SEAL_STATUS_CONFIG_ERROR = 2,
  SEAL_STATUS_DATA_ERROR = 3,
  SEAL_STATUS_NUMERIC_ERROR = 4,
  SEAL_STATUS_NULL_POINTER = 5,
  SEAL_STATUS_INVALID_UTF8 = 6,
  SEAL_STATUS_PANIC = 7,
} SealStatus;

/**
 * Parsed pipeline configuration.
 */
typedef struct SealConfig SealConfig;

/**
 * Validated dataset of logged trajectories.
 */
typedef struct SealDataset SealDataset;

/**
 * Result of a pipeline run.
 */
typedef struct SealReport SealReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into this library on the same thread.
 */
const char *seal_last_error(void);

/**
 * Library version as a static string.
 */
const char *seal_version(void);

/**
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void seal_string_free(char *s);

/**
 * Parses a JSON config (same schema as the `--config` file).
 *
 * # Safety
 * `json` must be a nul-terminated string; `out` must be writable.
 */
enum SealStatus seal_config_from_json(const char *json, struct SealConfig **out);

/**
 * # Safety
 * `cfg` must be a config handle not yet freed, or null.
 */
enum SealStatus seal_config_set_seed(struct SealConfig *cfg, uint64_t seed);

/**
 * # Safety
 * `cfg` must be a config handle not yet freed, or null.
 */
void seal_config_free(struct SealConfig *cfg);

/**
 * Rolls out the config's environment.
 *
 * # Safety
 * `cfg` must be a live config handle; `out` must be writable.
 */
enum SealStatus seal_dataset_generate(const struct SealConfig *cfg, struct SealDataset **out);

/**
 * Reads a JSONL dataset file. `num_actions` of 0 means infer from the data.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum SealStatus seal_dataset_from_file(const char *path,
                                       size_t num_actions,
                                       struct SealDataset **out);

/**
 * Parses JSONL dataset text held in memory.
 *
 * # Safety
 * `text` must be a nul-terminated string; `out` must be writable.
 */
enum SealStatus seal_dataset_from_jsonl(const char *text,
                                        size_t num_actions,
                                        struct SealDataset **out);

/**
 * Serializes a dataset as JSONL into a new string.
 *
 * # Safety
 * `d` must be a live dataset handle; `out` must be writable.
 */
enum SealStatus seal_dataset_to_jsonl(const struct SealDataset *d, char **out);

/**
 * Number of trajectories, or 0 for a null handle.
 *
 * # Safety
 * `d` must be a live dataset handle or null.
 */
size_t seal_dataset_num_trajectories(const struct SealDataset *d);

/**
 * Total logged steps, or 0 for a null handle.
 *
 * # Safety
 * `d` must be a live dataset handle or null.
 */
size_t seal_dataset_num_steps(const struct SealDataset *d);

/**
 * # Safety
 * `d` must be a dataset handle not yet freed, or null.
 */
void seal_dataset_free(struct SealDataset *d);

/**
 * Runs every stage on `data` and evaluates the SEAL and greedy-Q policies.
 * Monte Carlo values need an `env` block in the config.
 *
 * # Safety
 * `cfg` and `data` must be live handles; `out` must be writable.
 */
enum SealStatus seal_pipeline_run(const struct SealConfig *cfg,
                                  const struct SealDataset *data,
                                  struct SealReport **out);

/**
 * Reads one value out of a report. Fails with `DataError` when that value
 * was not computed.
 *
 * # Safety
 * `report` must be a live report handle; `value` must be writable.
 */
enum SealStatus seal_report_value(const struct SealReport *report,
                                  enum SealPolicy policy,
                                  enum SealMethod method,
                                  double *value);

/**
 * Pretty JSON of the whole report, byte-identical to `report.json`.
 *
 * # Safety
 * `report` must be a live report handle; `out` must be writable.
 */
enum SealStatus seal_report_to_json(const struct SealReport *report, char **out);

/**
 * # Safety
 * `report` must be a report handle not yet freed, or null.
 */
void seal_report_free(struct SealReport *report);

/**
 * Exact Q*, contrast and ratio tables of a tabular MDP given as JSON
 * (`{"nS", "nA", "P", "r", "b"}`), written as JSON into a new string.
 *
 * # Safety
 * `mdp_json` must be a nul-terminated string; `out` must be writable.
 */
enum SealStatus seal_oracle_tables(const char *mdp_json, double gamma, size_t a0, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEAL_H */
