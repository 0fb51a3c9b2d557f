#ifndef STARFD_H
#define STARFD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes of every fallible call.
typedef enum StarfdStatus {
  STARFD_STATUS_OK = 0,
  STARFD_STATUS_NULL_POINTER = 1,
  STARFD_STATUS_INVALID_UTF8 = 2,
  STARFD_STATUS_CONFIG = 3,
  STARFD_STATUS_UNKNOWN_SCHEME = 4,
  STARFD_STATUS_DOMAIN = 5,
  STARFD_STATUS_NUMERICAL = 6,
  STARFD_STATUS_IO = 7,
  STARFD_STATUS_BUFFER_TOO_SMALL = 8,
  STARFD_STATUS_PANIC = 9,
} StarfdStatus;

// System configuration under construction.
typedef struct StarfdConfig StarfdConfig;

// Outcome of one optimized cell.
typedef struct StarfdResult StarfdResult;

// An experiment table.
typedef struct StarfdTable StarfdTable;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *starfd_last_error(void);

// Library version as a static NUL-terminated string.
const char *starfd_version(void);

// Allocates a configuration holding the defaults.
//
// # Safety
// `out` must be a valid pointer to writable storage.
enum StarfdStatus starfd_config_new(struct StarfdConfig **out);

// Reads a `key = value` file over the defaults.
//
// # Safety
// `path` must be NUL-terminated; `out` must be writable.
enum StarfdStatus starfd_config_from_file(const char *path, struct StarfdConfig **out);

// Sets one configuration key using the file syntax, e.g. `("m", "16")`.
//
// # Safety
// `cfg` must come from this library; `key` and `value` must be NUL-terminated.
enum StarfdStatus starfd_config_set(struct StarfdConfig *cfg, const char *key, const char *value);

// Checks every invariant of the configuration.
//
// # Safety
// `cfg` must come from this library.
enum StarfdStatus starfd_config_validate(const struct StarfdConfig *cfg);

// # Safety
// `cfg` must come from this library or be null; it is invalid afterwards.
void starfd_config_free(struct StarfdConfig *cfg);

// Places the users, draws the channels for `seed_index` and optimizes
// `scheme` exactly as one cell of an experiment.
//
// # Safety
// `cfg` must come from this library; `scheme` must be NUL-terminated;
// `out` must be writable.
enum StarfdStatus starfd_run_cell(const struct StarfdConfig *cfg,
                                  const char *scheme,
                                  size_t seed_index,
                                  bool scatter_users,
                                  struct StarfdResult **out);

// Weighted sum rate, downlink sum and uplink sum in bit/s/Hz.
//
// # Safety
// `res` must come from this library; each output pointer may be null.
enum StarfdStatus starfd_result_rates(const struct StarfdResult *res,
                                      double *wsr,
                                      double *dl_sum,
                                      double *ul_sum);

// Outer iterations run and whether any solver stage hit its cap.
//
// # Safety
// `res` must come from this library; each output pointer may be null.
enum StarfdStatus starfd_result_status(const struct StarfdResult *res,
                                       size_t *outer_iterations,
                                       bool *capped);

// Copies the outer-iteration WSR trace into `buf`.
//
// `*len` holds the capacity on entry and the trace length on return; with a
// short buffer nothing is copied and [`StarfdStatus::BufferTooSmall`] is
// returned.
//
// # Safety
// `res` must come from this library; `buf` must hold `*len` doubles.
enum StarfdStatus starfd_result_trace(const struct StarfdResult *res, double *buf, size_t *len);

// # Safety
// `res` must come from this library or be null; it is invalid afterwards.
void starfd_result_free(struct StarfdResult *res);

// Convergence traces; `schemes` is a comma-separated list such as `"es,ms"`.
//
// # Safety
// `cfg` must come from this library; `schemes` must be NUL-terminated;
// `out` must be writable.
enum StarfdStatus starfd_run_convergence(const struct StarfdConfig *cfg,
                                         const char *schemes,
                                         size_t seeds,
                                         struct StarfdTable **out);

// WSR against the number of surface elements.
//
// # Safety
// As [`starfd_run_convergence`]; `m_values` must hold `count` entries.
enum StarfdStatus starfd_sweep_elements(const struct StarfdConfig *cfg,
                                        const char *schemes,
                                        const size_t *m_values,
                                        size_t count,
                                        size_t seeds,
                                        struct StarfdTable **out);

// WSR against the surface position `(x, 0)`.
//
// # Safety
// As [`starfd_run_convergence`]; `x_values` must hold `count` entries.
enum StarfdStatus starfd_sweep_location(const struct StarfdConfig *cfg,
                                        const char *schemes,
                                        const double *x_values,
                                        size_t count,
                                        size_t seeds,
                                        struct StarfdTable **out);

// WSR against a power budget in dBm; `uplink` selects the user budget
// instead of the BS budget.
//
// # Safety
// As [`starfd_run_convergence`]; `dbm_values` must hold `count` entries.
enum StarfdStatus starfd_sweep_power(const struct StarfdConfig *cfg,
                                     const char *schemes,
                                     bool uplink,
                                     const double *dbm_values,
                                     size_t count,
                                     size_t seeds,
                                     struct StarfdTable **out);

// Row, capped-row and error-row counts of a table.
//
// # Safety
// `table` must come from this library; each output pointer may be null.
enum StarfdStatus starfd_table_counts(const struct StarfdTable *table,
                                      size_t *rows,
                                      size_t *capped,
                                      size_t *errors);

// The table as CSV text; release it with [`starfd_string_free`].
//
// # Safety
// `table` must come from this library; `out` must be writable.
enum StarfdStatus starfd_table_csv(const struct StarfdTable *table, char **out);

// Writes the table as CSV to `path`.
//
// # Safety
// `table` must come from this library; `path` must be NUL-terminated.
enum StarfdStatus starfd_table_write(const struct StarfdTable *table, const char *path);

// # Safety
// `table` must come from this library or be null; it is invalid afterwards.
void starfd_table_free(struct StarfdTable *table);

// # Safety
// `s` must come from [`starfd_table_csv`] or be null.
void starfd_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STARFD_H */
