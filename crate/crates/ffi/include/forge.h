#ifndef FORGE_H
#define FORGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum ForgeStatus {
  FORGE_STATUS_OK = 0,
  FORGE_STATUS_NULL_POINTER = 1,
  FORGE_STATUS_INVALID_UTF8 = 2,
  FORGE_STATUS_CONFIG = 3,
  FORGE_STATUS_SHAPE = 4,
  FORGE_STATUS_SOLVER = 5,
  FORGE_STATUS_NUMERICAL = 6,
  FORGE_STATUS_IO = 7,
  FORGE_STATUS_SERIALIZATION = 8,
  FORGE_STATUS_PANIC = 9,
} ForgeStatus;

// A generated or loaded dataset.
typedef struct ForgeDataset ForgeDataset;

// A trained predictor.
typedef struct ForgeModel ForgeModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next failing call on the same thread.
const char *forge_last_error(void);

// Library version string (static, do not free).
const char *forge_version(void);

// Release a string returned by this library.
//
// # Safety
// `s` must come from this library and not have been freed.
void forge_string_free(char *s);

// Generate a dataset from a JSON generator configuration.
//
// # Safety
// `config_json` must be a NUL-terminated string and `out` writable.
enum ForgeStatus forge_dataset_generate(const char *config_json,
                                        uint64_t seed,
                                        struct ForgeDataset **out);

// Load a dataset written by `forge gen` or [`forge_dataset_save`].
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum ForgeStatus forge_dataset_load(const char *path, struct ForgeDataset **out);

// # Safety
// `ds` must be a live dataset handle and `path` a NUL-terminated string.
enum ForgeStatus forge_dataset_save(const struct ForgeDataset *ds, const char *path);

// # Safety
// `ds` must be null or a handle from this library that has not been freed.
void forge_dataset_free(struct ForgeDataset *ds);

// Number of instances and feature/parameter widths.
//
// # Safety
// `ds` must be a live dataset handle; outputs must be writable.
enum ForgeStatus forge_dataset_dims(const struct ForgeDataset *ds,
                                    size_t *n_instances,
                                    size_t *dim_x,
                                    size_t *dim_y);

// Copy instance `index` into `x` (capacity `x_cap`) and `y` (capacity `y_cap`).
//
// # Safety
// `ds` must be a live dataset handle; buffers must hold their stated capacity.
enum ForgeStatus forge_dataset_instance(const struct ForgeDataset *ds,
                                        size_t index,
                                        double *x,
                                        size_t x_cap,
                                        double *y,
                                        size_t y_cap);

// Solve the decision problem under `y_hat`. The decision is written to `z`
// (capacity `z_cap`), its length to `z_len` and its objective to `objective`.
// When `z_cap` is too small, `z_len` still receives the required length.
//
// # Safety
// `ds` must be a live dataset handle; `y_hat` must hold `len` values and `z`
// `z_cap` values; `z_len` and `objective` must be writable.
enum ForgeStatus forge_solve(const struct ForgeDataset *ds,
                             const double *y_hat,
                             size_t len,
                             double *z,
                             size_t z_cap,
                             size_t *z_len,
                             double *objective);

// Regret of predicting `y_hat` when the realization is `y`; both hold `len` values.
//
// # Safety
// `ds` must be a live dataset handle; `y` and `y_hat` must hold `len` values.
enum ForgeStatus forge_regret(const struct ForgeDataset *ds,
                              const double *y,
                              const double *y_hat,
                              size_t len,
                              double *out);

// Train a predictor with `method` (`"gsl"`, `"sfge"` or `"pfl"`).
// `config_json` may be null for defaults; otherwise it is a JSON object of
// trainer settings. On success `model` receives a new handle and, when
// `metrics_json` is non-null, it receives the run metrics as a JSON string.
//
// # Safety
// `ds` must be a live dataset handle; strings NUL-terminated; outputs writable.
enum ForgeStatus forge_train(const struct ForgeDataset *ds,
                             const char *method,
                             const char *config_json,
                             uint64_t seed,
                             struct ForgeModel **model,
                             char **metrics_json);

// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum ForgeStatus forge_model_load(const char *path, struct ForgeModel **out);

// # Safety
// `model` must be a live model handle and `path` a NUL-terminated string.
enum ForgeStatus forge_model_save(const struct ForgeModel *model, const char *path);

// # Safety
// `model` must be null or a handle from this library that has not been freed.
void forge_model_free(struct ForgeModel *model);

// Predict parameters for features `x` (`x_len` values) into `y` (capacity `y_cap`).
//
// # Safety
// `model` must be a live model handle; buffers must hold their stated sizes.
enum ForgeStatus forge_model_predict(const struct ForgeModel *model,
                                     const double *x,
                                     size_t x_len,
                                     double *y,
                                     size_t y_cap);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FORGE_H */
