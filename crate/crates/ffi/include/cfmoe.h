#ifndef CFMOE_H
#define CFMOE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CfmoeStatus {
  CFMOE_STATUS_OK = 0,
  CFMOE_STATUS_NULL_ARGUMENT = 1,
  CFMOE_STATUS_INVALID_ARGUMENT = 2,
  CFMOE_STATUS_IO = 3,
  CFMOE_STATUS_FORMAT = 4,
  CFMOE_STATUS_STAGE_ORDER = 5,
  CFMOE_STATUS_NUMERICAL = 6,
  CFMOE_STATUS_PANIC = 7,
} CfmoeStatus;

// Opaque run configuration.
typedef struct CfmoeConfig CfmoeConfig;

// Opaque generated or loaded dataset.
typedef struct CfmoeDataset CfmoeDataset;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copy the calling thread's last error message into `buf` (NUL-terminated,
// truncated to `len − 1` bytes). Returns the full message length in bytes.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
uintptr_t cfmoe_last_error(char *buf, uintptr_t len);

// Finite-blocklength rate (bits per channel use) at SINR `gamma`,
// blocklength `tau_s` and error probability `eps`.
//
// # Safety
// `out` must be a valid pointer.
enum CfmoeStatus cfmoe_achievable_rate(double gamma, double tau_s, double eps, double *out);

// Decoding error probability at SINR `gamma`, blocklength `tau_s` and
// rate `rate`.
//
// # Safety
// `out` must be a valid pointer.
enum CfmoeStatus cfmoe_error_prob(double gamma, double tau_s, double rate, double *out);

// Jakes correlation at speed `v` (m/s), carrier `carrier_hz`, sampling
// interval `interval` (s) and `lag` samples.
//
// # Safety
// `out` must be a valid pointer.
enum CfmoeStatus cfmoe_temporal_corr(double v,
                                     double carrier_hz,
                                     double interval,
                                     double lag,
                                     double *out);

// Default desk-scale configuration.
//
// # Safety
// `out` must be a valid pointer; the handle is released with
// [`cfmoe_config_free`].
enum CfmoeStatus cfmoe_config_default(struct CfmoeConfig **out);

// Parse and validate a TOML configuration.
//
// # Safety
// `toml` must be a NUL-terminated string and `out` a valid pointer.
enum CfmoeStatus cfmoe_config_from_toml(const char *toml, struct CfmoeConfig **out);

// # Safety
// `cfg` must be a valid handle.
enum CfmoeStatus cfmoe_config_set_seed(struct CfmoeConfig *cfg, uint64_t seed);

// Number of dataset samples the configuration asks for.
//
// # Safety
// `cfg` must be a valid handle and `out` a valid pointer.
enum CfmoeStatus cfmoe_config_samples(const struct CfmoeConfig *cfg, uintptr_t *out);

// # Safety
// `cfg` must be null or a handle from this library, released once.
void cfmoe_config_free(struct CfmoeConfig *cfg);

// Generate the dataset described by `cfg`.
//
// # Safety
// `cfg` must be a valid handle and `out` a valid pointer; the handle is
// released with [`cfmoe_dataset_free`].
enum CfmoeStatus cfmoe_dataset_generate(const struct CfmoeConfig *cfg, struct CfmoeDataset **out);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum CfmoeStatus cfmoe_dataset_load(const char *path, struct CfmoeDataset **out);

// # Safety
// `ds` must be a valid handle and `path` a NUL-terminated string.
enum CfmoeStatus cfmoe_dataset_save(const struct CfmoeDataset *ds, const char *path);

// Sample counts of the training and test splits.
//
// # Safety
// `ds` must be a valid handle; `train` and `test` valid pointers.
enum CfmoeStatus cfmoe_dataset_split(const struct CfmoeDataset *ds,
                                     uintptr_t *train,
                                     uintptr_t *test);

// SE and EE normalizers calibrated on the training split.
//
// # Safety
// `ds` must be a valid handle; `eta_max` and `omega_max` valid pointers.
enum CfmoeStatus cfmoe_dataset_normalizers(const struct CfmoeDataset *ds,
                                           double *eta_max,
                                           double *omega_max);

// # Safety
// `ds` must be null or a handle from this library, released once.
void cfmoe_dataset_free(struct CfmoeDataset *ds);

// Generate, train and evaluate per `cfg`, writing every artifact under
// `out_dir` (created if missing).
//
// # Safety
// `cfg` must be a valid handle and `out_dir` a NUL-terminated string.
enum CfmoeStatus cfmoe_run_pipeline(const struct CfmoeConfig *cfg, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CFMOE_H */
