#ifndef METASTAT_H
#define METASTAT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MetastatStatus {
  METASTAT_STATUS_OK = 0,
  METASTAT_STATUS_NULL_POINTER = 1,
  METASTAT_STATUS_INVALID_UTF8 = 2,
  METASTAT_STATUS_CONFIG = 3,
  METASTAT_STATUS_DOMAIN = 4,
  METASTAT_STATUS_NUMERICAL = 5,
  METASTAT_STATUS_SUBCRITICAL = 6,
  METASTAT_STATUS_IO = 7,
  /*
   Buffer passed to a copy function is too short.
   */
  METASTAT_STATUS_BUFFER_TOO_SMALL = 8,
  METASTAT_STATUS_PANIC = 9,
} MetastatStatus;

/*
 Model built from a TOML configuration: parameters and lattice.
 */
typedef struct MetastatModel MetastatModel;

/*
 Completed simulation: time grid, birth rate and total mass.
 */
typedef struct MetastatRun MetastatRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. Valid until the
 next call into the library from the same thread.
 */
const char *metastat_last_error(void);

/*
 Parses a TOML configuration and builds the lattice. Relative paths in the
 configuration resolve against the working directory.

 # Safety
 `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MetastatStatus metastat_model_from_toml(const char *toml, struct MetastatModel **out);

/*
 # Safety
 `model` must come from `metastat_model_from_toml` and not be used after.
 */
void metastat_model_free(struct MetastatModel *model);

/*
 Equilibrium coordinate `b = (c/d)^{3/2}`.

 # Safety
 Pointers must be valid.
 */
enum MetastatStatus metastat_model_b(const struct MetastatModel *model, double *out);

/*
 Characteristic truncation `τ_max` of the lattice.

 # Safety
 Pointers must be valid.
 */
enum MetastatStatus metastat_model_tau_max(const struct MetastatModel *model, double *out);

/*
 Malthus parameter λ0. `METASTAT_STATUS_SUBCRITICAL` when none exists.

 # Safety
 Pointers must be valid.
 */
enum MetastatStatus metastat_model_lambda0(const struct MetastatModel *model, double *out);

/*
 Growth field `G(x, θ)`.

 # Safety
 Pointers must be valid.
 */
enum MetastatStatus metastat_velocity(const struct MetastatModel *model,
                                      double x,
                                      double theta,
                                      double *gx,
                                      double *gtheta);

/*
 Runs the configured simulation over the configured horizon.

 # Safety
 Pointers must be valid.
 */
enum MetastatStatus metastat_simulate(const struct MetastatModel *model, struct MetastatRun **out);

/*
 Number of time points of a run (0 for a null handle).

 # Safety
 `run` must be null or valid.
 */
size_t metastat_run_len(const struct MetastatRun *run);

/*
 Copies the time grid into `buf` (at least `metastat_run_len` values).

 # Safety
 `buf` must hold `len` doubles.
 */
enum MetastatStatus metastat_run_times(const struct MetastatRun *run, double *buf, size_t len);

/*
 Copies the birth rate `B(t_n)`.

 # Safety
 `buf` must hold `len` doubles.
 */
enum MetastatStatus metastat_run_birth_rate(const struct MetastatRun *run, double *buf, size_t len);

/*
 Copies the total mass `∫ρ(t_n)`.

 # Safety
 `buf` must hold `len` doubles.
 */
enum MetastatStatus metastat_run_mass(const struct MetastatRun *run, double *buf, size_t len);

/*
 # Safety
 `run` must come from `metastat_simulate` and not be used after.
 */
void metastat_run_free(struct MetastatRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* METASTAT_H */
