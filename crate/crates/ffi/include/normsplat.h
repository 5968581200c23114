#ifndef NORMSPLAT_H
#define NORMSPLAT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of every fallible call.
 */
typedef enum NsStatus {
  NS_STATUS_OK = 0,
  NS_STATUS_NULL_POINTER = 1,
  NS_STATUS_INVALID_ARGUMENT = 2,
  NS_STATUS_IO = 3,
  NS_STATUS_FORMAT = 4,
  NS_STATUS_NON_FINITE = 5,
  NS_STATUS_PANIC = 6,
} NsStatus;

/**
 * A Gaussian field.
 */
typedef struct NsField NsField;

/**
 * A three-channel float image, interleaved row-major.
 */
typedef struct NsImage NsImage;

/**
 * A synthetic or loaded scene.
 */
typedef struct NsScene NsScene;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread; empty after a
 * successful call. The pointer stays valid until the next call.
 */
const char *ns_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ns_version(void);

/**
 * Generates a preset scene (`sphere`, `box`, `two-tone-sphere`,
 * `textured-sphere`).
 *
 * # Safety
 * `preset` must be a NUL-terminated string and `out` a valid pointer.
 */
enum NsStatus ns_scene_generate(const char *preset,
                                size_t views,
                                size_t resolution,
                                size_t points,
                                uint64_t seed,
                                struct NsScene **out);

/**
 * Loads a scene from its JSON manifest.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum NsStatus ns_scene_load(const char *path, struct NsScene **out);

/**
 * Writes a scene (manifest, point cloud and images) into a directory.
 *
 * # Safety
 * `scene` must come from this library and `dir` be a NUL-terminated string.
 */
enum NsStatus ns_scene_save(const struct NsScene *scene, const char *dir);

/**
 * Number of views in a scene, or 0 for a null handle.
 *
 * # Safety
 * `scene` must be null or come from this library.
 */
size_t ns_scene_view_count(const struct NsScene *scene);

/**
 * Releases a scene. Null is ignored.
 *
 * # Safety
 * `scene` must be null or come from this library, and not be used again.
 */
void ns_scene_free(struct NsScene *scene);

/**
 * Fits a field to a scene in the given parameterization (`unconstrained`,
 * `isotropic`, `normal-guided`).
 *
 * # Safety
 * `scene` must come from this library, `mode` be a NUL-terminated string and
 * `out` a valid pointer.
 */
enum NsStatus ns_fit(const struct NsScene *scene,
                     const char *mode,
                     size_t iterations,
                     uint64_t seed,
                     struct NsField **out);

/**
 * Loads a field from a PLY file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum NsStatus ns_field_load(const char *path, struct NsField **out);

/**
 * Saves a field as a PLY file.
 *
 * # Safety
 * `field` must come from this library and `path` be a NUL-terminated string.
 */
enum NsStatus ns_field_save(const struct NsField *field, const char *path);

/**
 * Number of Gaussians in a field, or 0 for a null handle.
 *
 * # Safety
 * `field` must be null or come from this library.
 */
size_t ns_field_len(const struct NsField *field);

/**
 * Releases a field. Null is ignored.
 *
 * # Safety
 * `field` must be null or come from this library, and not be used again.
 */
void ns_field_free(struct NsField *field);

/**
 * Renders a field from one of the scene's cameras (`rgb`, `normal`,
 * `depth`).
 *
 * # Safety
 * Handles must come from this library, `mode` be a NUL-terminated string and
 * `out` a valid pointer.
 */
enum NsStatus ns_render(const struct NsField *field,
                        const struct NsScene *scene,
                        size_t camera_index,
                        const char *mode,
                        struct NsImage **out);

/**
 * Ground-truth RGB image of one scene view.
 *
 * # Safety
 * `scene` must come from this library and `out` be a valid pointer.
 */
enum NsStatus ns_scene_view_rgb(const struct NsScene *scene, size_t index, struct NsImage **out);

/**
 * Image width in pixels, or 0 for a null handle.
 *
 * # Safety
 * `image` must be null or come from this library.
 */
size_t ns_image_width(const struct NsImage *image);

/**
 * Image height in pixels, or 0 for a null handle.
 *
 * # Safety
 * `image` must be null or come from this library.
 */
size_t ns_image_height(const struct NsImage *image);

/**
 * Copies `width * height * 3` interleaved values into `dst`, which holds
 * `len` doubles.
 *
 * # Safety
 * `image` must come from this library and `dst` point to `len` writable
 * doubles.
 */
enum NsStatus ns_image_copy(const struct NsImage *image, double *dst, size_t len);

/**
 * Releases an image. Null is ignored.
 *
 * # Safety
 * `image` must be null or come from this library, and not be used again.
 */
void ns_image_free(struct NsImage *image);

/**
 * Peak signal-to-noise ratio between two same-sized images, in dB.
 *
 * # Safety
 * Handles must come from this library and `out` be a valid pointer.
 */
enum NsStatus ns_psnr(const struct NsImage *a, const struct NsImage *b, double *out);

/**
 * Instability score of `m * n * c` values laid out refit-major, then
 * location, then channel.
 *
 * # Safety
 * `values` must point to `m * n * c` readable doubles and `out` be valid.
 */
enum NsStatus ns_instability_score(const double *values, size_t m, size_t n, size_t c, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NORMSPLAT_H */
