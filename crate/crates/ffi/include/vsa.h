#ifndef VSA_H
#define VSA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum VsaStatus {
  VSA_STATUS_OK = 0,
  VSA_STATUS_NULL_POINTER = 1,
  VSA_STATUS_INVALID_ARGUMENT = 2,
  VSA_STATUS_SHAPE = 3,
  VSA_STATUS_IO = 4,
  VSA_STATUS_FORMAT = 5,
  VSA_STATUS_CONFIG = 6,
  VSA_STATUS_DIVERGED = 7,
  VSA_STATUS_INTERNAL = 8,
  VSA_STATUS_PANIC = 9,
} VsaStatus;

/**
 * Rendered multi-view dataset.
 */
typedef struct VsaDataset VsaDataset;

/**
 * Model weights in single precision.
 */
typedef struct VsaModel32 VsaModel32;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *vsa_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *vsa_version(void);

/**
 * Render a procedural split (`split` 0 = train, 1 = test).
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum VsaStatus vsa_dataset_generate(uint32_t classes,
                                    uint32_t objects,
                                    uint32_t views,
                                    uint32_t size,
                                    uint64_t seed,
                                    uint32_t split,
                                    struct VsaDataset **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid handle slot.
 */
enum VsaStatus vsa_dataset_read(const char *path, struct VsaDataset **out);

/**
 * # Safety
 * `ds` must come from this library; `path` must be NUL-terminated.
 */
enum VsaStatus vsa_dataset_write(const struct VsaDataset *ds, const char *path);

/**
 * Object count, or 0 for NULL.
 *
 * # Safety
 * `ds` must be NULL or come from this library.
 */
size_t vsa_dataset_len(const struct VsaDataset *ds);

/**
 * Views per object, or 0 for NULL.
 *
 * # Safety
 * `ds` must be NULL or come from this library.
 */
size_t vsa_dataset_views(const struct VsaDataset *ds);

/**
 * Copy one stored view into `pixels` (`len` floats, `3 * H * W`).
 *
 * # Safety
 * `ds` must come from this library and `pixels` hold `len` floats.
 */
enum VsaStatus vsa_dataset_image(const struct VsaDataset *ds,
                                 size_t object,
                                 size_t view,
                                 float *pixels,
                                 size_t len);

/**
 * # Safety
 * `ds` must be NULL or a handle from this library not yet freed.
 */
void vsa_dataset_free(struct VsaDataset *ds);

/**
 * Fresh model from a run-config TOML string (may be empty for defaults).
 *
 * # Safety
 * `config_toml` must be NUL-terminated and `out` a valid handle slot.
 */
enum VsaStatus vsa_model_new(const char *config_toml, uint64_t seed, struct VsaModel32 **out);

/**
 * Load the weights of a single-precision checkpoint.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` a valid handle slot.
 */
enum VsaStatus vsa_model_load(const char *path, struct VsaModel32 **out);

/**
 * Number of scalar parameters, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or come from this library.
 */
size_t vsa_model_num_params(const struct VsaModel32 *model);

/**
 * Synthesize view `target_view` of `object` from `n_sources` source views
 * (the model's source count) into `pixels`.
 *
 * # Safety
 * Handles must come from this library, `source_views` hold `n_sources`
 * indices and `pixels` hold `len` floats.
 */
enum VsaStatus vsa_model_synthesize(const struct VsaModel32 *model,
                                    const struct VsaDataset *ds,
                                    size_t object,
                                    const size_t *source_views,
                                    size_t n_sources,
                                    size_t target_view,
                                    float *pixels,
                                    size_t len);

/**
 * Linear-probe test accuracy of the model's frozen encoder, using the
 * probe settings of `config_toml`.
 *
 * # Safety
 * Handles must come from this library, `config_toml` must be
 * NUL-terminated and `accuracy` valid for writing.
 */
enum VsaStatus vsa_model_linear_probe(const struct VsaModel32 *model,
                                      const struct VsaDataset *train,
                                      const struct VsaDataset *test,
                                      const char *config_toml,
                                      double *accuracy);

/**
 * # Safety
 * `model` must be NULL or a handle from this library not yet freed.
 */
void vsa_model_free(struct VsaModel32 *model);

/**
 * Pretrain on `train` with the given run config (f32), writing the config,
 * metrics log and checkpoint into `out_dir`. `final_loss` receives the
 * last step's loss (NaN when no step ran).
 *
 * # Safety
 * Pointers must be valid; strings NUL-terminated.
 */
enum VsaStatus vsa_pretrain(const char *config_toml,
                            const struct VsaDataset *train,
                            const char *out_dir,
                            double *final_loss);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VSA_H */
