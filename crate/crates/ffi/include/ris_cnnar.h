#ifndef RIS_CNNAR_H
#define RIS_CNNAR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by all functions.
 */
typedef enum RisStatus {
  RIS_STATUS_OK = 0,
  RIS_STATUS_NULL_POINTER = 1,
  RIS_STATUS_INVALID_ARGUMENT = 2,
  RIS_STATUS_CONFIG = 3,
  RIS_STATUS_IO = 4,
  RIS_STATUS_FORMAT = 5,
  RIS_STATUS_NUMERICAL = 6,
  RIS_STATUS_DIMENSION = 7,
  RIS_STATUS_MISSING_FILE = 8,
  RIS_STATUS_BUFFER_TOO_SMALL = 9,
  RIS_STATUS_PANIC = 10,
} RisStatus;

/**
 * Opaque trained classifier with its AR bank.
 */
typedef struct RisCheckpoint RisCheckpoint;

/**
 * Opaque validated scenario.
 */
typedef struct RisScenario RisScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message (NUL-terminated) into
 * `buf`. Returns `BufferTooSmall` when `len` cannot hold it.
 *
 * # Safety
 * `buf` must point to `len` writable bytes.
 */
enum RisStatus ris_last_error(char *buf, size_t len);

/**
 * Bessel function of the first kind, order zero; NaN for non-finite input.
 */
double ris_bessel_j0(double x);

/**
 * Jakes autocorrelation `J0(2 pi f_n |lag|)`.
 */
double ris_jakes_acf(double f_n, int64_t lag);

/**
 * Loads a TOML configuration; a null `path` gives the built-in defaults.
 *
 * # Safety
 * `path` is null or a NUL-terminated string; `out` is a valid pointer.
 */
enum RisStatus ris_scenario_load(const char *path, struct RisScenario **out);

/**
 * # Safety
 * `s` is null or a handle from [`ris_scenario_load`] not yet freed.
 */
void ris_scenario_free(struct RisScenario *s);

/**
 * Pilot symbol counts of element-wise and grouped estimation.
 *
 * # Safety
 * All pointers must be valid.
 */
enum RisStatus ris_pilot_overhead(const struct RisScenario *s,
                                  uint64_t *conventional,
                                  uint64_t *proposed);

/**
 * Solves the order-`order` AR model of the loaded Jakes ACF. Writes
 * `order` coefficients (innovation sign convention) and the innovation
 * variance.
 *
 * # Safety
 * `coeffs` points to `order` writable doubles; `variance` is valid.
 */
enum RisStatus ris_ar_for_doppler(double f_n,
                                  double loading,
                                  size_t order,
                                  double *coeffs,
                                  double *variance);

/**
 * # Safety
 * `path` is a NUL-terminated string; `out` is a valid pointer.
 */
enum RisStatus ris_checkpoint_load(const char *path, struct RisCheckpoint **out);

/**
 * # Safety
 * `c` is null or a handle from [`ris_checkpoint_load`] not yet freed.
 */
void ris_checkpoint_free(struct RisCheckpoint *c);

/**
 * Number of Doppler classes, or 0 for a null handle.
 *
 * # Safety
 * `c` is null or a live handle.
 */
size_t ris_checkpoint_classes(const struct RisCheckpoint *c);

/**
 * Classifies `v` snapshots of an `n`-antenna channel given as separate real
 * and imaginary arrays, snapshot-major (`re[l * n + i]`).
 *
 * # Safety
 * `re` and `im` point to `n * v` doubles; `class` is valid.
 */
enum RisStatus ris_checkpoint_classify(const struct RisCheckpoint *c,
                                       const double *re,
                                       const double *im,
                                       size_t n,
                                       size_t v,
                                       size_t *class_);

/**
 * Runs one experiment (`nmse-vs-horizon`, `nmse-vs-doppler`,
 * `se-vs-distance` or `overhead`) and writes its CSV into `out_dir`.
 * `config` and `checkpoint` may be null.
 *
 * # Safety
 * String arguments are null or NUL-terminated.
 */
enum RisStatus ris_run_experiment(const char *experiment,
                                  const char *config,
                                  const char *checkpoint,
                                  size_t trials,
                                  uint64_t seed,
                                  const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RIS_CNNAR_H */
