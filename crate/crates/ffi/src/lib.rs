//! C ABI over `avatar-core`.
//!
//! Every function returns an `i32` status (`AVATAR_OK` on success). On
//! failure the message is kept per thread and read with
//! `avatar_last_error`. Objects are opaque handles released with their
//! `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use avatar_core::body::{BodyParams, Region};
use avatar_core::data::view_camera;
use avatar_core::diffusion::GuidanceConfig;
use avatar_core::gaussians::{Gaussian, GaussianSet};
use avatar_core::latent::Latent;
use avatar_core::math::Quat;
use avatar_core::pipeline::{export_ply, realize, AvatarModel, RunConfig};
use avatar_core::render::{render, RenderedImage};
use avatar_core::Error;

pub const AVATAR_OK: i32 = 0;
pub const AVATAR_ERR_NULL: i32 = 1;
pub const AVATAR_ERR_INVALID: i32 = 2;
pub const AVATAR_ERR_IO: i32 = 3;
pub const AVATAR_ERR_FORMAT: i32 = 4;
pub const AVATAR_ERR_RUNTIME: i32 = 5;
pub const AVATAR_ERR_PANIC: i32 = 6;

/// Floats per Gaussian in `avatar_render_gaussians`: mean (3), rotation
/// `w x y z` (4), scale (3), color (3), opacity (1).
pub const AVATAR_GAUSSIAN_FLOATS: usize = 14;

/// Loaded template, teacher, decoder and denoiser.
pub struct AvatarModelHandle {
    model: AvatarModel,
    config: RunConfig,
}

pub struct AvatarLatent {
    latent: Latent,
}

pub struct AvatarImage {
    image: RenderedImage,
    rgb8: Vec<u8>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn code_of(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) | Error::InvalidTemplate(_) | Error::Indexing(_) => AVATAR_ERR_INVALID,
        Error::Io { .. } => AVATAR_ERR_IO,
        Error::Parse { .. } | Error::Format { .. } | Error::InvalidNetwork { .. } => AVATAR_ERR_FORMAT,
        Error::State(_) | Error::Fit(_) => AVATAR_ERR_RUNTIME,
    }
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AVATAR_OK,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            AVATAR_ERR_NULL
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            code_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            AVATAR_ERR_PANIC
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Core(Error::InvalidArgument(format!("{what} is not UTF-8"))))
}

unsafe fn opt_str<'a>(p: *const c_char, what: &'static str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        c_str(p, what).map(Some)
    }
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn guidance(config: &RunConfig, steps: u32, weight: f32) -> GuidanceConfig {
    let mut g = config.guidance_config();
    if steps > 0 {
        g.sample_steps = steps as usize;
    }
    if weight >= 0.0 {
        g.weight = weight;
    }
    g
}

/// Message of the last failed call on this thread, or null. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn avatar_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a model directory with default settings.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn avatar_model_load(dir: *const c_char, out: *mut *mut AvatarModelHandle) -> i32 {
    guard(|| {
        let dir = PathBuf::from(c_str(dir, "dir")?);
        let config = RunConfig::default();
        let model = AvatarModel::load(&dir, &config)?;
        put(out, AvatarModelHandle { model, config })
    })
}

/// # Safety
/// `model` must come from `avatar_model_load` or be null.
#[no_mangle]
pub unsafe extern "C" fn avatar_model_free(model: *mut AvatarModelHandle) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Samples a latent. `prompt` may be null for unconditional sampling;
/// `steps = 0` and `guidance < 0` select the defaults.
///
/// # Safety
/// Pointers must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn avatar_generate(
    model: *const AvatarModelHandle,
    prompt: *const c_char,
    seed: u64,
    steps: u32,
    guidance_weight: f32,
    out: *mut *mut AvatarLatent,
) -> i32 {
    guard(|| {
        let m = as_ref(model, "model")?;
        let prompt = opt_str(prompt, "prompt")?;
        let g = guidance(&m.config, steps, guidance_weight);
        let latent = m.model.generate(prompt, g, seed)?;
        put(out, AvatarLatent { latent })
    })
}

/// Regenerates the latent texels of `region` (e.g. `"torso"`) for `prompt`.
///
/// # Safety
/// Pointers must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn avatar_edit(
    model: *const AvatarModelHandle,
    latent: *const AvatarLatent,
    region: *const c_char,
    prompt: *const c_char,
    seed: u64,
    steps: u32,
    guidance_weight: f32,
    out: *mut *mut AvatarLatent,
) -> i32 {
    guard(|| {
        let m = as_ref(model, "model")?;
        let l = as_ref(latent, "latent")?;
        let region = Region::parse(c_str(region, "region")?)?;
        let prompt = opt_str(prompt, "prompt")?;
        let g = guidance(&m.config, steps, guidance_weight);
        let edited = m.model.edit(&l.latent, region, prompt, g, seed)?;
        put(out, AvatarLatent { latent: edited })
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn avatar_latent_load(path: *const c_char, out: *mut *mut AvatarLatent) -> i32 {
    guard(|| {
        let latent = Latent::load(&PathBuf::from(c_str(path, "path")?))?;
        put(out, AvatarLatent { latent })
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn avatar_latent_save(latent: *const AvatarLatent, path: *const c_char) -> i32 {
    guard(|| {
        let l = as_ref(latent, "latent")?;
        l.latent.save(&PathBuf::from(c_str(path, "path")?))?;
        Ok(())
    })
}

/// Writes channels, height and width to `shape[0..3]`.
///
/// # Safety
/// `shape` must point to 3 writable `size_t`.
#[no_mangle]
pub unsafe extern "C" fn avatar_latent_shape(latent: *const AvatarLatent, shape: *mut usize) -> i32 {
    guard(|| {
        let l = as_ref(latent, "latent")?;
        if shape.is_null() {
            return Err(Failure::Null("shape"));
        }
        let s = l.latent.shape();
        std::slice::from_raw_parts_mut(shape, 3).copy_from_slice(&s);
        Ok(())
    })
}

/// Copies the channel-major values into `buf`, which must hold exactly
/// `channels × height × width` floats.
///
/// # Safety
/// `buf` must point to `len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn avatar_latent_copy(latent: *const AvatarLatent, buf: *mut f32, len: usize) -> i32 {
    guard(|| {
        let l = as_ref(latent, "latent")?;
        if buf.is_null() {
            return Err(Failure::Null("buf"));
        }
        if len != l.latent.data.len() {
            return Err(Error::InvalidArgument(format!("buffer holds {len} floats, latent has {}", l.latent.data.len())).into());
        }
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(&l.latent.data);
        Ok(())
    })
}

/// # Safety
/// `latent` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn avatar_latent_free(latent: *mut AvatarLatent) {
    if !latent.is_null() {
        drop(Box::from_raw(latent));
    }
}

fn image_handle(image: RenderedImage) -> AvatarImage {
    let rgb8 = image.to_rgb8();
    AvatarImage { image, rgb8 }
}

/// Decodes `latent` on the rest pose and renders it orthographically from
/// `yaw_degrees` at `resolution`².
///
/// # Safety
/// Pointers must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn avatar_render_latent(
    model: *const AvatarModelHandle,
    latent: *const AvatarLatent,
    yaw_degrees: f64,
    resolution: u32,
    out: *mut *mut AvatarImage,
) -> i32 {
    guard(|| {
        let m = as_ref(model, "model")?;
        let l = as_ref(latent, "latent")?;
        let attrs = m.model.decode(&l.latent)?;
        let set = realize(&m.model.template, &attrs, &BodyParams::rest(&m.model.template))?;
        let cam = view_camera(yaw_degrees, resolution as usize)?;
        let (img, _) = render(&set, &cam)?;
        put(out, image_handle(img))
    })
}

/// Renders `count` Gaussians packed as `AVATAR_GAUSSIAN_FLOATS` floats each
/// with the orthographic avatar camera.
///
/// # Safety
/// `data` must point to `count × AVATAR_GAUSSIAN_FLOATS` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn avatar_render_gaussians(
    data: *const f64,
    count: usize,
    yaw_degrees: f64,
    resolution: u32,
    out: *mut *mut AvatarImage,
) -> i32 {
    guard(|| {
        let vals: &[f64] = if count == 0 {
            &[]
        } else if data.is_null() {
            return Err(Failure::Null("data"));
        } else {
            std::slice::from_raw_parts(data, count * AVATAR_GAUSSIAN_FLOATS)
        };
        let gaussians = vals
            .chunks(AVATAR_GAUSSIAN_FLOATS)
            .map(|g| Gaussian {
                mean: [g[0], g[1], g[2]],
                rotation: Quat::from_array([g[3], g[4], g[5], g[6]]),
                scale: [g[7], g[8], g[9]],
                color: [g[10], g[11], g[12]],
                opacity: g[13],
            })
            .collect();
        let set = GaussianSet { gaussians };
        set.check_invariants().map_err(Error::InvalidArgument)?;
        let cam = view_camera(yaw_degrees, resolution as usize)?;
        let (img, _) = render(&set, &cam)?;
        put(out, image_handle(img))
    })
}

/// # Safety
/// `image` must be valid; `width` and `height` must be writable.
#[no_mangle]
pub unsafe extern "C" fn avatar_image_size(image: *const AvatarImage, width: *mut u32, height: *mut u32) -> i32 {
    guard(|| {
        let i = as_ref(image, "image")?;
        if width.is_null() || height.is_null() {
            return Err(Failure::Null("width/height"));
        }
        *width = i.image.width as u32;
        *height = i.image.height as u32;
        Ok(())
    })
}

/// Pointer to `width × height × 3` RGB bytes owned by the image.
///
/// # Safety
/// `image` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn avatar_image_rgb8(image: *const AvatarImage) -> *const u8 {
    image.as_ref().map_or(ptr::null(), |i| i.rgb8.as_ptr())
}

/// Writes PNG for a `.png` path and binary PPM otherwise.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn avatar_image_save(image: *const AvatarImage, path: *const c_char) -> i32 {
    guard(|| {
        let i = as_ref(image, "image")?;
        i.image.save(&PathBuf::from(c_str(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `image` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn avatar_image_free(image: *mut AvatarImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

/// Writes the rest-pose Gaussians of `latent` as ASCII PLY.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn avatar_export_ply(
    model: *const AvatarModelHandle,
    latent: *const AvatarLatent,
    path: *const c_char,
) -> i32 {
    guard(|| {
        let m = as_ref(model, "model")?;
        let l = as_ref(latent, "latent")?;
        let attrs = m.model.decode(&l.latent)?;
        let set = realize(&m.model.template, &attrs, &BodyParams::rest(&m.model.template))?;
        export_ply(&set, &PathBuf::from(c_str(path, "path")?))?;
        Ok(())
    })
}
