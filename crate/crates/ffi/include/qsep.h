#ifndef QSEP_H
#define QSEP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of doubles in one interleaved density matrix.
 */
#define QSEP_RHO_LEN 128

typedef enum QsepStatus {
  QSEP_STATUS_OK = 0,
  QSEP_STATUS_NULL_POINTER = 1,
  QSEP_STATUS_INVALID_ARGUMENT = 2,
  QSEP_STATUS_FORMAT = 3,
  QSEP_STATUS_DIVERGENCE = 4,
  QSEP_STATUS_IO = 5,
  QSEP_STATUS_OUT_OF_RANGE = 6,
  QSEP_STATUS_PANIC = 7,
} QsepStatus;

/**
 * A labeled dataset held in memory.
 */
typedef struct QsepDataset QsepDataset;

/**
 * A trained separator or the partial-trace baseline.
 */
typedef struct QsepModel QsepModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *qsep_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated,
 * always NUL-terminated when `len > 0`) and returns the length the full
 * message needs including the terminator. Returns 0 when no error has
 * been recorded.
 *
 * # Safety
 * `buf` must be null or point to at least `len` writable bytes.
 */
size_t qsep_last_error_message(char *buf, size_t len);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum QsepStatus qsep_model_load(const char *path, struct QsepModel **out);

/**
 * The partial-trace baseline model.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum QsepStatus qsep_model_baseline(struct QsepModel **out);

/**
 * # Safety
 * `model` must be null or a handle from this library not yet freed.
 */
void qsep_model_free(struct QsepModel *model);

/**
 * Reconstruction loss of one state.
 *
 * # Safety
 * `rho` must point to `QSEP_RHO_LEN` doubles; `model` and `loss` must be valid.
 */
enum QsepStatus qsep_model_loss(const struct QsepModel *model, const double *rho, double *loss);

/**
 * Reconstructed matrix and loss of one state. `rho_hat` receives
 * `QSEP_RHO_LEN` doubles; `loss` may be null.
 *
 * # Safety
 * `rho` and `rho_hat` must point to `QSEP_RHO_LEN` doubles each.
 */
enum QsepStatus qsep_model_reconstruct(const struct QsepModel *model,
                                       const double *rho,
                                       double *rho_hat,
                                       double *loss);

/**
 * Losses of every record of `dataset`, in order, into `losses[0..len]`.
 * `len` must equal the dataset length.
 *
 * # Safety
 * `losses` must point to `len` writable doubles.
 */
enum QsepStatus qsep_model_dataset_losses(const struct QsepModel *model,
                                          const struct QsepDataset *dataset,
                                          double *losses,
                                          size_t len);

/**
 * Oracle label of a state as the QSD1 label bitfield.
 *
 * # Safety
 * `rho` must point to `QSEP_RHO_LEN` doubles and `bits` must be valid.
 */
enum QsepStatus qsep_classify(const double *rho, uint16_t *bits);

/**
 * Loads a QSD1 dataset file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum QsepStatus qsep_dataset_load(const char *path, struct QsepDataset **out);

/**
 * Generates `count` records of `kind` (the names accepted by `qsep gen`).
 *
 * # Safety
 * `kind` must be a NUL-terminated string and `out` a valid pointer.
 */
enum QsepStatus qsep_dataset_generate(const char *kind,
                                      size_t count,
                                      uint64_t seed,
                                      struct QsepDataset **out);

/**
 * Writes a dataset as a QSD1 file.
 *
 * # Safety
 * `dataset` must be a valid handle and `path` a NUL-terminated string.
 */
enum QsepStatus qsep_dataset_save(const struct QsepDataset *dataset, const char *path);

/**
 * Number of records, or 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or a valid handle.
 */
size_t qsep_dataset_len(const struct QsepDataset *dataset);

/**
 * Copies record `index` into `rho` (`QSEP_RHO_LEN` doubles) and its label
 * bitfield into `bits`. Either output may be null.
 *
 * # Safety
 * Non-null outputs must be valid for writes of the stated sizes.
 */
enum QsepStatus qsep_dataset_get(const struct QsepDataset *dataset,
                                 size_t index,
                                 double *rho,
                                 uint16_t *bits);

/**
 * # Safety
 * `dataset` must be null or a handle from this library not yet freed.
 */
void qsep_dataset_free(struct QsepDataset *dataset);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QSEP_H */
