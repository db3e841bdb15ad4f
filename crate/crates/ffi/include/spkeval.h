#ifndef SPKEVAL_H
#define SPKEVAL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes shared by all entry points.
typedef enum SpkStatus {
  SPK_STATUS_OK = 0,
  SPK_STATUS_NULL_POINTER = 1,
  SPK_STATUS_INVALID_UTF8 = 2,
  SPK_STATUS_IO = 3,
  SPK_STATUS_SYNTAX = 4,
  SPK_STATUS_VALIDATION = 5,
  SPK_STATUS_COVERAGE = 6,
  SPK_STATUS_DEGENERATE = 7,
  SPK_STATUS_INVALID_PARAMS = 8,
  SPK_STATUS_PANIC = 9,
} SpkStatus;

// Calibrated log likelihood ratios.
typedef struct SpkLlrSet SpkLlrSet;

// Trained calibration or fusion model.
typedef struct SpkModel SpkModel;

// Raw scores of one system.
typedef struct SpkScoreSet SpkScoreSet;

// Trial key loaded from a key TSV file.
typedef struct SpkTrialSet SpkTrialSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next failing call on the same thread.
const char *spk_last_error(void);

// Library version as a static NUL-terminated string.
const char *spk_version(void);

// Loads a trial key file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum SpkStatus spk_trialset_load(const char *path, struct SpkTrialSet **out);

// Number of trials in the key.
//
// # Safety
// `key` must be null or a live handle.
size_t spk_trialset_len(const struct SpkTrialSet *key);

// # Safety
// `key` must be null or a handle not yet freed.
void spk_trialset_free(struct SpkTrialSet *key);

// Loads a raw score file. A null `system_id` uses the file stem.
//
// # Safety
// String arguments must be null or NUL-terminated; `out` must be writable.
enum SpkStatus spk_scoreset_load(const char *path, const char *system_id, struct SpkScoreSet **out);

// # Safety
// `scores` must be null or a live handle.
size_t spk_scoreset_len(const struct SpkScoreSet *scores);

// # Safety
// `scores` must be null or a handle not yet freed.
void spk_scoreset_free(struct SpkScoreSet *scores);

// Loads an LLR file. A null `system_id` uses the file stem.
//
// # Safety
// String arguments must be null or NUL-terminated; `out` must be writable.
enum SpkStatus spk_llrset_load(const char *path, const char *system_id, struct SpkLlrSet **out);

// Writes LLRs in the score-file format.
//
// # Safety
// `llrs` must be a live handle and `path` NUL-terminated.
enum SpkStatus spk_llrset_save(const struct SpkLlrSet *llrs, const char *path);

// Looks up the LLR of one trial.
//
// # Safety
// `llrs` must be a live handle, `trial_id` NUL-terminated, `out` writable.
enum SpkStatus spk_llrset_get(const struct SpkLlrSet *llrs, const char *trial_id, double *out);

// # Safety
// `llrs` must be null or a live handle.
size_t spk_llrset_len(const struct SpkLlrSet *llrs);

// # Safety
// `llrs` must be null or a handle not yet freed.
void spk_llrset_free(struct SpkLlrSet *llrs);

// Cllr in bits of the LLRs over the key.
//
// # Safety
// `llrs` and `key` must be live handles and `out` writable.
enum SpkStatus spk_cllr(const struct SpkLlrSet *llrs, const struct SpkTrialSet *key, double *out);

// Cllr after optimal monotone recalibration.
//
// # Safety
// `llrs` and `key` must be live handles and `out` writable.
enum SpkStatus spk_min_cllr(const struct SpkLlrSet *llrs,
                            const struct SpkTrialSet *key,
                            double *out);

// Equal error rate from the ROC convex hull.
//
// # Safety
// `llrs` and `key` must be live handles and `out` writable.
enum SpkStatus spk_eer_rocch(const struct SpkLlrSet *llrs,
                             const struct SpkTrialSet *key,
                             double *out);

// Equal error rate from a threshold sweep.
//
// # Safety
// `llrs` and `key` must be live handles and `out` writable.
enum SpkStatus spk_eer_naive(const struct SpkLlrSet *llrs,
                             const struct SpkTrialSet *key,
                             double *out);

// Cllr in bits of target and non-target LLR arrays.
//
// # Safety
// `tar` and `non` must point to `n_tar` and `n_non` doubles; `out` must be writable.
enum SpkStatus spk_cllr_split(const double *tar,
                              size_t n_tar,
                              const double *non,
                              size_t n_non,
                              double *out);

// Cllr after optimal monotone recalibration.
//
// # Safety
// `tar` and `non` must point to `n_tar` and `n_non` doubles; `out` must be writable.
enum SpkStatus spk_min_cllr_split(const double *tar,
                                  size_t n_tar,
                                  const double *non,
                                  size_t n_non,
                                  double *out);

// Equal error rate from the ROC convex hull.
//
// # Safety
// `tar` and `non` must point to `n_tar` and `n_non` doubles; `out` must be writable.
enum SpkStatus spk_eer_rocch_split(const double *tar,
                                   size_t n_tar,
                                   const double *non,
                                   size_t n_non,
                                   double *out);

// Equal error rate from a threshold sweep.
//
// # Safety
// `tar` and `non` must point to `n_tar` and `n_non` doubles; `out` must be writable.
enum SpkStatus spk_eer_naive_split(const double *tar,
                                   size_t n_tar,
                                   const double *non,
                                   size_t n_non,
                                   double *out);

// Trains a calibration (one score set) or fusion (several) model.
// A negative or NaN `ridge` selects the default `1e-4 / N`.
// `converged` may be null.
//
// # Safety
// `scores` must point to `n_scores` live handles; `key` must be live; `out` writable.
enum SpkStatus spk_model_train(const struct SpkScoreSet *const *scores,
                               size_t n_scores,
                               const struct SpkTrialSet *key,
                               double prior,
                               double ridge,
                               struct SpkModel **out,
                               bool *converged);

// Maps score sets (same order as training) to LLRs.
//
// # Safety
// `model` must be live; `scores` must point to `n_scores` live handles; `out` writable.
enum SpkStatus spk_model_apply(const struct SpkModel *model,
                               const struct SpkScoreSet *const *scores,
                               size_t n_scores,
                               struct SpkLlrSet **out);

// Copies up to `cap` weights into `weights` and returns the total count.
//
// # Safety
// `model` must be null or live; `weights` must hold `cap` doubles when `cap > 0`.
size_t spk_model_weights(const struct SpkModel *model, double *weights, size_t cap);

// Offset of the model, or NaN for a null handle.
//
// # Safety
// `model` must be null or live.
double spk_model_offset(const struct SpkModel *model);

// # Safety
// `model` must be null or a handle not yet freed.
void spk_model_free(struct SpkModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPKEVAL_H */
