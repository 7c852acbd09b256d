#ifndef AVATAR_FFI_H
#define AVATAR_FFI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define AVATAR_OK 0

#define AVATAR_ERR_NULL 1

#define AVATAR_ERR_INVALID 2

#define AVATAR_ERR_IO 3

#define AVATAR_ERR_FORMAT 4

#define AVATAR_ERR_RUNTIME 5

#define AVATAR_ERR_PANIC 6

/**
 * Floats per Gaussian in `avatar_render_gaussians`: mean (3), rotation
 * `w x y z` (4), scale (3), color (3), opacity (1).
 */
#define AVATAR_GAUSSIAN_FLOATS 14

typedef struct AvatarImage AvatarImage;

typedef struct AvatarLatent AvatarLatent;

/**
 * Loaded template, teacher, decoder and denoiser.
 */
typedef struct AvatarModelHandle AvatarModelHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until
 * the next failing call on the same thread.
 */
const char *avatar_last_error(void);

/**
 * Loads a model directory with default settings.
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` must be writable.
 */
int32_t avatar_model_load(const char *dir, struct AvatarModelHandle **out);

/**
 * # Safety
 * `model` must come from `avatar_model_load` or be null.
 */
void avatar_model_free(struct AvatarModelHandle *model);

/**
 * Samples a latent. `prompt` may be null for unconditional sampling;
 * `steps = 0` and `guidance < 0` select the defaults.
 *
 * # Safety
 * Pointers must be valid; `out` must be writable.
 */
int32_t avatar_generate(const struct AvatarModelHandle *model,
                        const char *prompt,
                        uint64_t seed,
                        uint32_t steps,
                        float guidance_weight,
                        struct AvatarLatent **out);

/**
 * Regenerates the latent texels of `region` (e.g. `"torso"`) for `prompt`.
 *
 * # Safety
 * Pointers must be valid; `out` must be writable.
 */
int32_t avatar_edit(const struct AvatarModelHandle *model,
                    const struct AvatarLatent *latent,
                    const char *region,
                    const char *prompt,
                    uint64_t seed,
                    uint32_t steps,
                    float guidance_weight,
                    struct AvatarLatent **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
int32_t avatar_latent_load(const char *path, struct AvatarLatent **out);

/**
 * # Safety
 * Pointers must be valid.
 */
int32_t avatar_latent_save(const struct AvatarLatent *latent, const char *path);

/**
 * Writes channels, height and width to `shape[0..3]`.
 *
 * # Safety
 * `shape` must point to 3 writable `size_t`.
 */
int32_t avatar_latent_shape(const struct AvatarLatent *latent, size_t *shape);

/**
 * Copies the channel-major values into `buf`, which must hold exactly
 * `channels × height × width` floats.
 *
 * # Safety
 * `buf` must point to `len` writable floats.
 */
int32_t avatar_latent_copy(const struct AvatarLatent *latent, float *buf, size_t len);

/**
 * # Safety
 * `latent` must come from this library or be null.
 */
void avatar_latent_free(struct AvatarLatent *latent);

/**
 * Decodes `latent` on the rest pose and renders it orthographically from
 * `yaw_degrees` at `resolution`².
 *
 * # Safety
 * Pointers must be valid; `out` must be writable.
 */
int32_t avatar_render_latent(const struct AvatarModelHandle *model,
                             const struct AvatarLatent *latent,
                             double yaw_degrees,
                             uint32_t resolution,
                             struct AvatarImage **out);

/**
 * Renders `count` Gaussians packed as `AVATAR_GAUSSIAN_FLOATS` floats each
 * with the orthographic avatar camera.
 *
 * # Safety
 * `data` must point to `count × AVATAR_GAUSSIAN_FLOATS` readable doubles.
 */
int32_t avatar_render_gaussians(const double *data,
                                size_t count,
                                double yaw_degrees,
                                uint32_t resolution,
                                struct AvatarImage **out);

/**
 * # Safety
 * `image` must be valid; `width` and `height` must be writable.
 */
int32_t avatar_image_size(const struct AvatarImage *image, uint32_t *width, uint32_t *height);

/**
 * Pointer to `width × height × 3` RGB bytes owned by the image.
 *
 * # Safety
 * `image` must be valid or null.
 */
const uint8_t *avatar_image_rgb8(const struct AvatarImage *image);

/**
 * Writes PNG for a `.png` path and binary PPM otherwise.
 *
 * # Safety
 * Pointers must be valid.
 */
int32_t avatar_image_save(const struct AvatarImage *image, const char *path);

/**
 * # Safety
 * `image` must come from this library or be null.
 */
void avatar_image_free(struct AvatarImage *image);

/**
 * Writes the rest-pose Gaussians of `latent` as ASCII PLY.
 *
 * # Safety
 * Pointers must be valid.
 */
int32_t avatar_export_ply(const struct AvatarModelHandle *model,
                          const struct AvatarLatent *latent,
                          const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AVATAR_FFI_H */
