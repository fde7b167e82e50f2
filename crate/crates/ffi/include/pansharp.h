#ifndef PANSHARP_H
#define PANSHARP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Sample encoding for saved rasters.
 */
typedef enum PsDtype {
  PS_DTYPE_U16 = 0,
  PS_DTYPE_F32 = 1,
} PsDtype;

/**
 * Result code of every fallible call.
 */
typedef enum PsStatus {
  PS_STATUS_OK = 0,
  PS_STATUS_NULL_POINTER = 1,
  PS_STATUS_INVALID_UTF8 = 2,
  PS_STATUS_IO = 3,
  PS_STATUS_FORMAT = 4,
  PS_STATUS_LENGTH = 5,
  PS_STATUS_UNSUPPORTED_DTYPE = 6,
  PS_STATUS_RANGE = 7,
  PS_STATUS_INDEX = 8,
  PS_STATUS_DIMENSION = 9,
  PS_STATUS_SHAPE = 10,
  PS_STATUS_LOOKUP = 11,
  PS_STATUS_SIZE = 12,
  PS_STATUS_DEGENERATE_BAND = 13,
  PS_STATUS_ARITY = 14,
  PS_STATUS_USAGE = 15,
  PS_STATUS_NUMERIC = 16,
  PS_STATUS_PANIC = 17,
} PsStatus;

/**
 * Opaque multiband raster.
 */
typedef struct PsImage PsImage;

/**
 * Opaque fusion network parameters.
 */
typedef struct PsNetwork PsNetwork;

/**
 * Reduced-resolution quality indices.
 */
typedef struct PsReducedMetrics {
  double qave;
  double sam;
  double ergas;
  double scc;
} PsReducedMetrics;

/**
 * Full-resolution quality indices.
 */
typedef struct PsFullMetrics {
  double d_lambda;
  double d_s;
  double qnr;
} PsFullMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the next failing call.
 */
const char *ps_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ps_version(void);

/**
 * Builds an image from band-sequential samples (`width * height * bands` floats).
 *
 * # Safety
 * `data` must point to `len` readable floats; `out` must be writable.
 */
enum PsStatus ps_image_new(uint32_t width,
                           uint32_t height,
                           uint32_t bands,
                           const float *data,
                           size_t len,
                           float radiometric_max,
                           struct PsImage **out);

/**
 * Reads an `MBR` raster file.
 *
 * # Safety
 * `file` must be a NUL-terminated string; `out` must be writable.
 */
enum PsStatus ps_image_load(const char *file, struct PsImage **out);

/**
 * Writes an `MBR` raster file.
 *
 * # Safety
 * `img` must be a live handle; `file` a NUL-terminated string.
 */
enum PsStatus ps_image_save(const struct PsImage *img, const char *file, enum PsDtype dtype);

/**
 * Image dimensions. Any output pointer may be null.
 *
 * # Safety
 * `img` must be a live handle.
 */
enum PsStatus ps_image_dims(const struct PsImage *img,
                            uint32_t *width,
                            uint32_t *height,
                            uint32_t *bands);

/**
 * Copies the normalized band-sequential samples into `dst`, which holds `len` floats.
 *
 * # Safety
 * `img` must be a live handle; `dst` must point to `len` writable floats.
 */
enum PsStatus ps_image_copy_data(const struct PsImage *img, float *dst, size_t len);

/**
 * Releases an image handle. Null is ignored.
 *
 * # Safety
 * `img` must come from this library and not be used afterwards.
 */
void ps_image_free(struct PsImage *img);

/**
 * Reads an `FNET` checkpoint.
 *
 * # Safety
 * `file` must be a NUL-terminated string; `out` must be writable.
 */
enum PsStatus ps_network_load(const char *file, struct PsNetwork **out);

/**
 * Creates a network with every weight and bias zero (fusion then reduces to interpolation).
 *
 * # Safety
 * `out` must be writable.
 */
enum PsStatus ps_network_zeros(uint32_t bands, uint32_t blocks, struct PsNetwork **out);

/**
 * Writes an `FNET` checkpoint.
 *
 * # Safety
 * `net` must be a live handle; `file` a NUL-terminated string.
 */
enum PsStatus ps_network_save(const struct PsNetwork *net, const char *file);

/**
 * Band count, block count and total parameter count. Any output pointer may be null.
 *
 * # Safety
 * `net` must be a live handle.
 */
enum PsStatus ps_network_info(const struct PsNetwork *net,
                              uint32_t *bands,
                              uint32_t *blocks,
                              uint64_t *params);

/**
 * Parameter count of a network with `bands` bands and `blocks` residual blocks.
 */
uint64_t ps_param_count(uint32_t bands, uint32_t blocks);

/**
 * Releases a network handle. Null is ignored.
 *
 * # Safety
 * `net` must come from this library and not be used afterwards.
 */
void ps_network_free(struct PsNetwork *net);

/**
 * Fuses `pan` with `ms`, which is `2^levels` times coarser, into a new image.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum PsStatus ps_fuse(const struct PsImage *pan,
                      const struct PsImage *ms,
                      const struct PsNetwork *net,
                      uint32_t levels,
                      struct PsImage **out);

/**
 * Pyramid interpolation of `ms` by `levels` expansions.
 *
 * # Safety
 * `ms` must be a live handle; `out` must be writable.
 */
enum PsStatus ps_interpolate(const struct PsImage *ms, uint32_t levels, struct PsImage **out);

/**
 * Reduced-resolution evaluation against a reference image.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum PsStatus ps_eval_reduced(const struct PsImage *fused,
                              const struct PsImage *gt,
                              struct PsReducedMetrics *out);

/**
 * Full-resolution evaluation without a reference.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum PsStatus ps_eval_full(const struct PsImage *fused,
                           const struct PsImage *ms,
                           const struct PsImage *pan,
                           struct PsFullMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PANSHARP_H */
