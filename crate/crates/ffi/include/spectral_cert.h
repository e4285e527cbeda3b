#ifndef SPECTRAL_CERT_H
#define SPECTRAL_CERT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

/*
 Input formats accepted by [`sc_config_parse`].
 */
typedef enum ScFormat {
  SC_FORMAT_YAML = 0,
  SC_FORMAT_JSON = 1,
} ScFormat;

/*
 Status codes returned by every fallible function.
 */
typedef enum ScStatus {
  SC_STATUS_OK = 0,
  SC_STATUS_NULL_POINTER = 1,
  SC_STATUS_INVALID_UTF8 = 2,
  SC_STATUS_CONFIG = 3,
  SC_STATUS_INVALID_ARGUMENT = 4,
  SC_STATUS_DATASET = 5,
  SC_STATUS_NUMERICAL = 6,
  SC_STATUS_LATTICE_TOO_COARSE = 7,
  SC_STATUS_BACKEND = 8,
  SC_STATUS_IO = 9,
  SC_STATUS_NO_CERTIFICATE = 10,
  SC_STATUS_BUFFER_TOO_SMALL = 11,
  SC_STATUS_PANIC = 99,
} ScStatus;

/*
 Opaque configuration handle.
 */
typedef struct ScConfig ScConfig;

/*
 Opaque result handle.
 */
typedef struct ScResult ScResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or NULL. Valid until the
 next call into this library from the same thread.
 */
const char *sc_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *sc_version(void);

/*
 Releases a string returned by this library. NULL is ignored.

 # Safety
 `s` must come from this library and not have been freed.
 */
void sc_string_free(char *s);

/*
 Parses a configuration document.

 # Safety
 `text` must be a NUL-terminated string; `out` must be writable.
 */
enum ScStatus sc_config_parse(const char *text, enum ScFormat format, struct ScConfig **out);

/*
 Loads a configuration file; relative dataset paths resolve against its directory.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum ScStatus sc_config_load(const char *path, struct ScConfig **out);

/*
 Loads one of the bundled benchmark configurations by name.

 # Safety
 `name` must be a NUL-terminated string; `out` must be writable.
 */
enum ScStatus sc_config_benchmark(const char *name, struct ScConfig **out);

/*
 Overrides the sampling seed.

 # Safety
 `config` must be a live handle.
 */
enum ScStatus sc_config_set_seed(struct ScConfig *config, uint64_t seed);

/*
 State dimension of the configured system, or 0 for a NULL handle.

 # Safety
 `config` must be NULL or a live handle.
 */
size_t sc_config_dim(const struct ScConfig *config);

/*
 Serializes the configuration as JSON. Free with [`sc_string_free`].

 # Safety
 `config` must be a live handle; `out` must be writable.
 */
enum ScStatus sc_config_to_json(const struct ScConfig *config, char **out);

/*
 Releases a configuration. NULL is ignored.

 # Safety
 `config` must come from this library and not have been freed.
 */
void sc_config_free(struct ScConfig *config);

/*
 Runs the full pipeline. `falsify_grid` is the falsifier grid size per
 dimension: 0 skips falsification, `usize::MAX` picks a default by dimension.
 An uncertified outcome (for example an infeasible LP) is still `Ok`; query
 it with [`sc_result_is_certified`].

 # Safety
 `config` must be a live handle; `out` must be writable.
 */
enum ScStatus sc_certify(const struct ScConfig *config, size_t falsify_grid, struct ScResult **out);

/*
 Nonzero when the LP produced a certificate.

 # Safety
 `result` must be NULL or a live handle.
 */
int32_t sc_result_is_certified(const struct ScResult *result);

/*
 Safety probability lower bound 1 − (η + cT), clipped at 0.

 # Safety
 `result` must be a live handle; `out` must be writable.
 */
enum ScStatus sc_result_safety_probability(const struct ScResult *result, double *out);

/*
 Initial-set level η of the certificate.

 # Safety
 `result` must be a live handle; `out` must be writable.
 */
enum ScStatus sc_result_eta(const struct ScResult *result, double *out);

/*
 Per-step drift bound c of the certificate.

 # Safety
 `result` must be a live handle; `out` must be writable.
 */
enum ScStatus sc_result_c(const struct ScResult *result, double *out);

/*
 Copies the barrier coefficients into `buf`. `len` receives the number of
 coefficients; pass `buf = NULL` to query it. Fails with `BufferTooSmall`
 if `capacity` is insufficient.

 # Safety
 `buf` must be NULL or point to `capacity` writable doubles; `len` must be writable.
 */
enum ScStatus sc_result_coefficients(const struct ScResult *result,
                                     double *buf,
                                     size_t capacity,
                                     size_t *len);

/*
 Evaluates the barrier at a state `x` of length `dim`.

 # Safety
 `x` must point to `dim` readable doubles; `out` must be writable.
 */
enum ScStatus sc_result_evaluate(const struct ScResult *result,
                                 const double *x,
                                 size_t dim,
                                 double *out);

/*
 Serializes the full result as JSON. Free with [`sc_string_free`].

 # Safety
 `result` must be a live handle; `out` must be writable.
 */
enum ScStatus sc_result_to_json(const struct ScResult *result, char **out);

/*
 Releases a result. NULL is ignored.

 # Safety
 `result` must come from this library and not have been freed.
 */
void sc_result_free(struct ScResult *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPECTRAL_CERT_H */
