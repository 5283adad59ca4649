#ifndef SEMICLASS_H
#define SEMICLASS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define SC_OK 0

#define SC_ERR_NULL 1

#define SC_ERR_INVALID_PARAM 2

#define SC_ERR_PRECONDITION 3

#define SC_ERR_RUNTIME 4

#define SC_ERR_CONFIG 5

#define SC_ERR_PANIC 6

/**
 * Opaque handle to a finished ensemble.
 */
typedef struct ScEnsemble ScEnsemble;

/**
 * Opaque model handle.
 */
typedef struct ScModel ScModel;

/**
 * Model parameters, field for field as in the JSON config.
 */
typedef struct ScModelParams {
  double mass_large;
  double mass_small;
  double omega;
  double lambda;
  double gamma;
  double kt;
  double hbar;
  double sigma;
  double eta;
  double duration;
  double dt;
} ScModelParams;

typedef struct ScDerivedConstants {
  double d;
  double d_tilde;
  double sigma1_sq;
  double delta;
  double force_noise_var;
  double record_noise_var;
} ScDerivedConstants;

typedef struct ScValidation {
  bool decoherent;
  bool classical_regime;
  double positivity_margin;
} ScValidation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Validates `params` and creates a model handle in `*out`.
 *
 * # Safety
 * `params` must point to a valid `ScModelParams` and `out` to writable storage.
 */
int32_t sc_model_new(const struct ScModelParams *params, struct ScModel **out);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `model` must come from [`sc_model_new`] and not be used afterwards.
 */
void sc_model_free(struct ScModel *model);

/**
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
int32_t sc_model_constants(const struct ScModel *model, struct ScDerivedConstants *out);

/**
 * Regime checks for the model.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
int32_t sc_model_validate(const struct ScModel *model, struct ScValidation *out);

/**
 * Retarded Green function of the small oscillator.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
int32_t sc_green_function(const struct ScModel *model, double t, double t_prime, double *out);

/**
 * Runs the ensemble described by a JSON run config (the CLI schema).
 *
 * # Safety
 * `config_json` must be a NUL-terminated string and `out` writable.
 */
int32_t sc_ensemble_run_json(const char *config_json, struct ScEnsemble **out);

/**
 * # Safety
 * `ensemble` must come from [`sc_ensemble_run_json`] and not be used afterwards.
 */
void sc_ensemble_free(struct ScEnsemble *ensemble);

/**
 * The ensemble's summary as JSON; release with [`sc_string_free`].
 *
 * # Safety
 * `ensemble` must be a live handle and `out` writable.
 */
int32_t sc_ensemble_summary_json(const struct ScEnsemble *ensemble, char **out);

/**
 * Fraction of classified runs in branch `k` and its standard error.
 *
 * # Safety
 * `ensemble` must be a live handle; `fraction` and `std_error` writable.
 */
int32_t sc_ensemble_branch_fraction(const struct ScEnsemble *ensemble,
                                    size_t k,
                                    double *fraction,
                                    double *std_error);

/**
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void sc_string_free(char *s);

/**
 * Message for the last failure on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *sc_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sc_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEMICLASS_H */
