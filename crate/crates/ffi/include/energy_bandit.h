#ifndef ENERGY_BANDIT_H
#define ENERGY_BANDIT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

#define EB_OK 0

#define EB_ERR_NULL -1

#define EB_ERR_UTF8 -2

#define EB_ERR_CONFIG -3

#define EB_ERR_DIMENSION -4

#define EB_ERR_CONTRACT -5

#define EB_ERR_DOMAIN -6

#define EB_ERR_NUMERIC -7

#define EB_ERR_HORIZON -8

#define EB_ERR_PARSE -9

#define EB_ERR_IO -10

// Index or buffer length out of range.
#define EB_ERR_RANGE -11

// A Rust panic was caught at the boundary.
#define EB_ERR_PANIC -12

// Experiment settings. Create with `eb_config_new` or `eb_config_from_toml`.
typedef struct EbConfig EbConfig;

// Completed runs of one experiment.
typedef struct EbExperiment EbExperiment;

// Bound audit of one logit vector.
typedef struct EbBoundReport {
  size_t n;
  double mean_energy;
  double z_max;
  double z_min;
  double ratio;
  double bound;
  double z_max_bound;
  bool satisfied_ratio;
  bool satisfied_z_max;
} EbBoundReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or "" after a success.
// The pointer stays valid until the next call into this library on the
// same thread.
const char *eb_last_error(void);

// Configuration with the task defaults for `env` and `agent`, given by
// their command-line names, e.g. "rotating-wheel" and "energy-rnn".
//
// # Safety
// `env` and `agent` must be NUL-terminated strings; `out` must be writable.
int32_t eb_config_new(const char *env, const char *agent, struct EbConfig **out);

// Configuration from the same `key = value` TOML the `bandit` tool reads.
//
// # Safety
// `text` must be a NUL-terminated string; `out` must be writable.
int32_t eb_config_from_toml(const char *text, struct EbConfig **out);

// # Safety
// `cfg` must be NULL or a handle from this library not yet freed.
void eb_config_free(struct EbConfig *cfg);

// Horizon T.
//
// # Safety
// `cfg` must be a live handle from this library.
int32_t eb_config_set_horizon(struct EbConfig *cfg, size_t v);

// # Safety
// `cfg` must be a live handle from this library.
int32_t eb_config_set_runs(struct EbConfig *cfg, size_t v);

// # Safety
// `cfg` must be a live handle from this library.
int32_t eb_config_set_seed(struct EbConfig *cfg, uint64_t v);

// # Safety
// `cfg` must be a live handle from this library.
int32_t eb_config_set_workers(struct EbConfig *cfg, size_t v);

// # Safety
// `cfg` must be a live handle from this library.
int32_t eb_config_set_alpha_ec(struct EbConfig *cfg, double v);

// # Safety
// `cfg` must be a live handle from this library.
int32_t eb_config_set_hidden(struct EbConfig *cfg, size_t v);

// # Safety
// `cfg` must be a live handle from this library.
int32_t eb_config_set_layers(struct EbConfig *cfg, size_t v);

// # Safety
// `cfg` must be a live handle from this library.
int32_t eb_config_set_learning_rate(struct EbConfig *cfg, double v);

// # Safety
// `cfg` must be a live handle from this library.
int32_t eb_config_set_dropout(struct EbConfig *cfg, double v);

// Audit the policy logits every 100 steps.
//
// # Safety
// `cfg` must be a live handle from this library.
int32_t eb_config_set_audit_bound(struct EbConfig *cfg, bool v);

// Runs every seeded run of `cfg`. Runs that abort are skipped; see
// `eb_experiment_aborted_count`.
//
// # Safety
// `cfg` must be a live handle; `out` must be writable.
int32_t eb_experiment_run(const struct EbConfig *cfg, struct EbExperiment **out);

// # Safety
// `exp` must be NULL or a handle from this library not yet freed.
void eb_experiment_free(struct EbExperiment *exp);

// # Safety
// `exp` must be a live handle; `out` must be writable.
int32_t eb_experiment_run_count(const struct EbExperiment *exp, size_t *out);

// # Safety
// `exp` must be a live handle; `out` must be writable.
int32_t eb_experiment_aborted_count(const struct EbExperiment *exp, size_t *out);

// # Safety
// `exp` must be a live handle; `out` must be writable.
int32_t eb_experiment_horizon(const struct EbExperiment *exp, size_t *out);

// Mean cumulative regret over completed runs at the final step.
//
// # Safety
// `exp` must be a live handle; `out` must be writable.
int32_t eb_experiment_final_mean_regret(const struct EbExperiment *exp, double *out);

// Copies the per-step mean and standard error of cumulative regret into
// `mean` and `stderr` (either may be NULL). Both hold `len` doubles and
// `len` must equal the horizon.
//
// # Safety
// Non-NULL buffers must hold `len` writable doubles.
int32_t eb_experiment_regret_series(const struct EbExperiment *exp,
                                    double *mean,
                                    double *stderr,
                                    size_t len);

// Copies the arms pulled in completed run `run` (0-based among completed
// runs) into `arms`, which holds `len` == horizon values.
//
// # Safety
// `arms` must hold `len` writable values.
int32_t eb_experiment_run_arms(const struct EbExperiment *exp,
                               size_t run,
                               uint32_t *arms,
                               size_t len);

// Writes runs.csv, aggregate.csv and config.toml into `dir`, creating it.
//
// # Safety
// `exp` must be a live handle; `dir` a NUL-terminated string.
int32_t eb_experiment_write(const struct EbExperiment *exp, const char *dir);

// Principal branch of the Lambert W function.
//
// # Safety
// `out` must be writable.
int32_t eb_lambert_w0(double x, double *out);

// Bound on max p / min p for `n` arms under conserved energy.
//
// # Safety
// `out` must be writable.
int32_t eb_ratio_bound(size_t n, double *out);

// Bound on the largest logit for `n` arms under conserved energy.
//
// # Safety
// `out` must be writable.
int32_t eb_z_max_bound(size_t n, double *out);

// Audits `n` logits against both bounds.
//
// # Safety
// `logits` must point to `n` readable doubles; `out` must be writable.
int32_t eb_audit_logits(const double *logits, size_t n, struct EbBoundReport *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ENERGY_BANDIT_H */
