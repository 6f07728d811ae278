#ifndef VOLSEG_H
#define VOLSEG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum VsStatus {
  VS_STATUS_OK = 0,
  VS_STATUS_NULL_POINTER = 1,
  VS_STATUS_INVALID_ARGUMENT = 2,
  VS_STATUS_SHAPE = 3,
  VS_STATUS_IO = 4,
  VS_STATUS_FORMAT = 5,
  VS_STATUS_NON_FINITE = 6,
  VS_STATUS_EMPTY_MASK = 7,
  VS_STATUS_CONFIG = 8,
  VS_STATUS_PANIC = 9,
} VsStatus;

/**
 * Run configuration: profile plus overrides.
 */
typedef struct VsConfig VsConfig;

/**
 * Binary mask (u8, 0 or 1).
 */
typedef struct VsMask VsMask;

/**
 * Trained network loaded from a checkpoint.
 */
typedef struct VsNet VsNet;

/**
 * Intensity volume (f32).
 */
typedef struct VsVolume VsVolume;

/**
 * Box placed by localization.
 */
typedef struct VsBox {
  size_t anchor[3];
  size_t side;
  /**
   * Windows above the localization threshold.
   */
  size_t positive_windows;
  /**
   * 1 when no window cleared the threshold and the best one was used.
   */
  uint8_t fallback;
} VsBox;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, static NUL-terminated string.
 */
const char *vs_version(void);

/**
 * Message of the last failed call on this thread, or NULL after a
 * success. Valid until the next call on the same thread.
 */
const char *vs_last_error(void);

/**
 * Copies `dims[0]·dims[1]·dims[2]` floats into a new volume.
 *
 * # Safety
 * `dims` points to 3 values, `data` to `len` floats.
 */
enum VsStatus vs_volume_new(const size_t *dims,
                            const float *data,
                            size_t len,
                            struct VsVolume **result);

/**
 * Reads a DBV1 intensity volume; masks are widened to 0.0 / 1.0.
 *
 * # Safety
 * `file` is a NUL-terminated path.
 */
enum VsStatus vs_volume_read(const char *file, struct VsVolume **result);

/**
 * # Safety
 * `v` is a live handle, `file` a NUL-terminated path.
 */
enum VsStatus vs_volume_write(const struct VsVolume *v, const char *file);

/**
 * # Safety
 * `v` is a live handle, `dims` has room for 3 values.
 */
enum VsStatus vs_volume_dims(const struct VsVolume *v, size_t *dims);

/**
 * Copies the voxels into `data`, which must hold exactly the voxel count.
 *
 * # Safety
 * `data` points to `len` writable floats.
 */
enum VsStatus vs_volume_copy_data(const struct VsVolume *v, float *data, size_t len);

/**
 * # Safety
 * `v` is NULL or a handle not yet freed.
 */
void vs_volume_free(struct VsVolume *v);

/**
 * # Safety
 * `file` is a NUL-terminated path.
 */
enum VsStatus vs_mask_read(const char *file, struct VsMask **result);

/**
 * # Safety
 * `m` is a live handle, `file` a NUL-terminated path.
 */
enum VsStatus vs_mask_write(const struct VsMask *m, const char *file);

/**
 * # Safety
 * `m` is a live handle, `dims` has room for 3 values.
 */
enum VsStatus vs_mask_dims(const struct VsMask *m, size_t *dims);

/**
 * # Safety
 * `m` is a live handle, `count` writable.
 */
enum VsStatus vs_mask_count(const struct VsMask *m, size_t *count);

/**
 * Copies the 0/1 voxels into `data`, which must hold exactly the voxel count.
 *
 * # Safety
 * `data` points to `len` writable bytes.
 */
enum VsStatus vs_mask_copy_data(const struct VsMask *m, uint8_t *data, size_t len);

/**
 * # Safety
 * `m` is NULL or a handle not yet freed.
 */
void vs_mask_free(struct VsMask *m);

/**
 * Dice similarity of two masks of equal shape; two empty masks score 1.
 *
 * # Safety
 * Both handles live, `score` writable.
 */
enum VsStatus vs_dsc(const struct VsMask *a, const struct VsMask *b, double *score);

/**
 * New configuration for `profile` ("full" or "desk").
 *
 * # Safety
 * `profile` is a NUL-terminated string.
 */
enum VsStatus vs_config_new(const char *profile, struct VsConfig **result);

/**
 * Overrides one key, e.g. `seg_threshold` = `0.9`. The config is left
 * unchanged when the result would be invalid.
 *
 * # Safety
 * `cfg` is a live handle; `key` and `value` NUL-terminated.
 */
enum VsStatus vs_config_set(struct VsConfig *cfg, const char *key, const char *value);

/**
 * # Safety
 * `cfg` is NULL or a handle not yet freed.
 */
void vs_config_free(struct VsConfig *cfg);

/**
 * Synthetic phantom and its cavity mask for `seed`.
 *
 * # Safety
 * `cfg` is a live handle; both result slots writable.
 */
enum VsStatus vs_phantom_generate(const struct VsConfig *cfg,
                                  uint64_t seed,
                                  struct VsVolume **volume,
                                  struct VsMask **mask);

/**
 * Loads a DBVW checkpoint.
 *
 * # Safety
 * `file` is a NUL-terminated path.
 */
enum VsStatus vs_net_load(const char *file, struct VsNet **result);

/**
 * Learnable parameters; `dense_equivalent` counts cross kernels as full cubes.
 *
 * # Safety
 * `net` is a live handle, `count` writable.
 */
enum VsStatus vs_net_param_count(const struct VsNet *net, bool dense_equivalent, size_t *count);

/**
 * Receptive field side at the output.
 *
 * # Safety
 * `net` is a live handle, `side` writable.
 */
enum VsStatus vs_net_receptive_field(const struct VsNet *net, size_t *side);

/**
 * # Safety
 * `net` is NULL or a handle not yet freed.
 */
void vs_net_free(struct VsNet *net);

/**
 * Places the segmentation box with a mean ensemble of `n_loc` classifiers.
 *
 * # Safety
 * `loc` points to `n_loc` live handles; `bbox` writable.
 */
enum VsStatus vs_localize(const struct VsConfig *cfg,
                          const struct VsVolume *volume,
                          const struct VsNet *const *loc,
                          size_t n_loc,
                          struct VsBox *bbox);

/**
 * Full pipeline: localize, segment with an OR ensemble, drop small
 * components. `bbox` may be NULL.
 *
 * # Safety
 * `loc` and `seg` point to `n_loc` and `n_seg` live handles.
 */
enum VsStatus vs_segment(const struct VsConfig *cfg,
                         const struct VsVolume *volume,
                         const struct VsNet *const *loc,
                         size_t n_loc,
                         const struct VsNet *const *seg,
                         size_t n_seg,
                         struct VsMask **mask,
                         struct VsBox *bbox);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VOLSEG_H */
