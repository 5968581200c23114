//! C ABI for the normsplat engine.
//!
//! Objects cross the boundary as opaque handles that the caller releases
//! with the matching `*_free` function. Every fallible call returns an
//! [`NsStatus`]; on failure [`ns_last_error`] describes the problem until the
//! next call on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use normsplat::gaussian::{GaussianField, ParamMode};
use normsplat::optimize::{fit, psnr, FitConfig};
use normsplat::raster::{render, RenderMode};
use normsplat::scene::{generate, Preset, Scene, SceneConfig};
use normsplat::studies::{instability_score, ParamSamples};
use normsplat::{io, Error, Image};

/// Result codes of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    NonFinite = 5,
    Panic = 6,
}

/// A synthetic or loaded scene.
pub struct NsScene {
    scene: Scene,
}

/// A Gaussian field.
pub struct NsField {
    field: GaussianField,
}

/// A three-channel float image, interleaved row-major.
pub struct NsImage {
    image: Image,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(err: &Error) -> NsStatus {
    match err {
        Error::Io(_) | Error::MissingFile(_) => NsStatus::Io,
        Error::Format { .. } | Error::Json(_) | Error::Image(_) => NsStatus::Format,
        Error::NonFinite(_) => NsStatus::NonFinite,
        _ => NsStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), NsStatus>) -> NsStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NsStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => {
            set_error("internal panic");
            NsStatus::Panic
        }
    }
}

fn fail(err: Error) -> NsStatus {
    set_error(err.to_string());
    status_of(&err)
}

fn invalid(msg: &str) -> NsStatus {
    set_error(msg);
    NsStatus::InvalidArgument
}

unsafe fn str_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, NsStatus> {
    if ptr.is_null() {
        set_error(format!("{what} is null"));
        return Err(NsStatus::NullPointer);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| invalid(&format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, NsStatus> {
    ptr.as_ref().ok_or_else(|| {
        set_error(format!("{what} is null"));
        NsStatus::NullPointer
    })
}

unsafe fn out_ptr<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, NsStatus> {
    ptr.as_mut().ok_or_else(|| {
        set_error(format!("{what} is null"));
        NsStatus::NullPointer
    })
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<T, NsStatus> {
    s.parse().map_err(fail)
}

/// Message describing the last failure on this thread; empty after a
/// successful call. The pointer stays valid until the next call.
#[no_mangle]
pub extern "C" fn ns_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ns_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Generates a preset scene (`sphere`, `box`, `two-tone-sphere`,
/// `textured-sphere`).
///
/// # Safety
/// `preset` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ns_scene_generate(
    preset: *const c_char,
    views: usize,
    resolution: usize,
    points: usize,
    seed: u64,
    out: *mut *mut NsScene,
) -> NsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let preset: Preset = parse(str_arg(preset, "preset")?)?;
        let config = SceneConfig {
            preset,
            views,
            resolution,
            points,
            seed,
        };
        let scene = generate(&config).map_err(fail)?;
        *out = Box::into_raw(Box::new(NsScene { scene }));
        Ok(())
    })
}

/// Loads a scene from its JSON manifest.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ns_scene_load(path: *const c_char, out: *mut *mut NsScene) -> NsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        let scene = io::load_scene(&path).map_err(fail)?;
        *out = Box::into_raw(Box::new(NsScene { scene }));
        Ok(())
    })
}

/// Writes a scene (manifest, point cloud and images) into a directory.
///
/// # Safety
/// `scene` must come from this library and `dir` be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ns_scene_save(scene: *const NsScene, dir: *const c_char) -> NsStatus {
    guard(|| {
        let scene = handle(scene, "scene")?;
        let dir = PathBuf::from(str_arg(dir, "dir")?);
        io::save_scene(&dir, &scene.scene).map_err(fail)?;
        Ok(())
    })
}

/// Number of views in a scene, or 0 for a null handle.
///
/// # Safety
/// `scene` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ns_scene_view_count(scene: *const NsScene) -> usize {
    scene.as_ref().map_or(0, |s| s.scene.views())
}

/// Releases a scene. Null is ignored.
///
/// # Safety
/// `scene` must be null or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn ns_scene_free(scene: *mut NsScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Fits a field to a scene in the given parameterization (`unconstrained`,
/// `isotropic`, `normal-guided`).
///
/// # Safety
/// `scene` must come from this library, `mode` be a NUL-terminated string and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ns_fit(
    scene: *const NsScene,
    mode: *const c_char,
    iterations: usize,
    seed: u64,
    out: *mut *mut NsField,
) -> NsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let scene = handle(scene, "scene")?;
        let mode: ParamMode = parse(str_arg(mode, "mode")?)?;
        let mut config = FitConfig::new(mode, iterations);
        config.seed = seed;
        let result = fit(&scene.scene, &config).map_err(fail)?;
        *out = Box::into_raw(Box::new(NsField { field: result.field }));
        Ok(())
    })
}

/// Loads a field from a PLY file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ns_field_load(path: *const c_char, out: *mut *mut NsField) -> NsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        let field = io::load_field(&path).map_err(fail)?;
        *out = Box::into_raw(Box::new(NsField { field }));
        Ok(())
    })
}

/// Saves a field as a PLY file.
///
/// # Safety
/// `field` must come from this library and `path` be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ns_field_save(field: *const NsField, path: *const c_char) -> NsStatus {
    guard(|| {
        let field = handle(field, "field")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        io::save_field(&path, &field.field).map_err(fail)
    })
}

/// Number of Gaussians in a field, or 0 for a null handle.
///
/// # Safety
/// `field` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ns_field_len(field: *const NsField) -> usize {
    field.as_ref().map_or(0, |f| f.field.len())
}

/// Releases a field. Null is ignored.
///
/// # Safety
/// `field` must be null or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn ns_field_free(field: *mut NsField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Renders a field from one of the scene's cameras (`rgb`, `normal`,
/// `depth`).
///
/// # Safety
/// Handles must come from this library, `mode` be a NUL-terminated string and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ns_render(
    field: *const NsField,
    scene: *const NsScene,
    camera_index: usize,
    mode: *const c_char,
    out: *mut *mut NsImage,
) -> NsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let field = handle(field, "field")?;
        let scene = handle(scene, "scene")?;
        let mode: RenderMode = parse(str_arg(mode, "mode")?)?;
        let Some(cam) = scene.scene.rig.cameras.get(camera_index) else {
            return Err(invalid("camera index out of range"));
        };
        let image = render(&field.field, cam, mode, scene.scene.background).payload;
        *out = Box::into_raw(Box::new(NsImage { image }));
        Ok(())
    })
}

/// Ground-truth RGB image of one scene view.
///
/// # Safety
/// `scene` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ns_scene_view_rgb(scene: *const NsScene, index: usize, out: *mut *mut NsImage) -> NsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let scene = handle(scene, "scene")?;
        let Some(image) = scene.scene.gt_rgb.get(index) else {
            return Err(invalid("view index out of range"));
        };
        *out = Box::into_raw(Box::new(NsImage { image: image.clone() }));
        Ok(())
    })
}

/// Image width in pixels, or 0 for a null handle.
///
/// # Safety
/// `image` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ns_image_width(image: *const NsImage) -> usize {
    image.as_ref().map_or(0, |i| i.image.width)
}

/// Image height in pixels, or 0 for a null handle.
///
/// # Safety
/// `image` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ns_image_height(image: *const NsImage) -> usize {
    image.as_ref().map_or(0, |i| i.image.height)
}

/// Copies `width * height * 3` interleaved values into `dst`, which holds
/// `len` doubles.
///
/// # Safety
/// `image` must come from this library and `dst` point to `len` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn ns_image_copy(image: *const NsImage, dst: *mut f64, len: usize) -> NsStatus {
    guard(|| {
        let image = handle(image, "image")?;
        if dst.is_null() {
            return Err(invalid("dst is null"));
        }
        let data = &image.image.data;
        if len < data.len() {
            return Err(invalid("destination buffer is too small"));
        }
        std::ptr::copy_nonoverlapping(data.as_ptr(), dst, data.len());
        Ok(())
    })
}

/// Releases an image. Null is ignored.
///
/// # Safety
/// `image` must be null or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn ns_image_free(image: *mut NsImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

/// Peak signal-to-noise ratio between two same-sized images, in dB.
///
/// # Safety
/// Handles must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ns_psnr(a: *const NsImage, b: *const NsImage, out: *mut f64) -> NsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let (a, b) = (handle(a, "a")?, handle(b, "b")?);
        *out = psnr(&a.image, &b.image).map_err(fail)?;
        Ok(())
    })
}

/// Instability score of `m * n * c` values laid out refit-major, then
/// location, then channel.
///
/// # Safety
/// `values` must point to `m * n * c` readable doubles and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn ns_instability_score(
    values: *const f64,
    m: usize,
    n: usize,
    c: usize,
    out: *mut f64,
) -> NsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if values.is_null() {
            return Err(invalid("values is null"));
        }
        let len = m
            .checked_mul(n)
            .and_then(|v| v.checked_mul(c))
            .ok_or_else(|| invalid("m * n * c overflows"))?;
        let samples = ParamSamples {
            m,
            n,
            c,
            values: std::slice::from_raw_parts(values, len).to_vec(),
        };
        *out = instability_score(&samples).map_err(fail)?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    fn last_error() -> String {
        unsafe { CStr::from_ptr(ns_last_error()) }.to_string_lossy().into_owned()
    }

    #[test]
    fn instability_score_through_the_abi() {
        let values = [1.0, 3.0];
        let mut out = f64::NAN;
        let status = unsafe { ns_instability_score(values.as_ptr(), 2, 1, 1, &mut out) };
        assert_eq!(status, NsStatus::Ok);
        assert_eq!(out, 1.0);
        let status = unsafe { ns_instability_score(values.as_ptr(), 1, 2, 1, &mut out) };
        assert_eq!(status, NsStatus::InvalidArgument);
        assert!(!last_error().is_empty());
    }

    #[test]
    fn null_arguments_are_reported() {
        let mut scene = ptr::null_mut();
        let status = unsafe { ns_scene_generate(ptr::null(), 2, 16, 50, 0, &mut scene) };
        assert_eq!(status, NsStatus::NullPointer);
        assert!(scene.is_null());
        assert_eq!(unsafe { ns_scene_view_count(ptr::null()) }, 0);
        unsafe { ns_scene_free(ptr::null_mut()) };
    }

    #[test]
    fn unknown_names_are_invalid() {
        let mut scene = ptr::null_mut();
        let name = CString::new("teapot").unwrap();
        let status = unsafe { ns_scene_generate(name.as_ptr(), 2, 16, 50, 0, &mut scene) };
        assert_eq!(status, NsStatus::InvalidArgument);
        assert!(last_error().contains("teapot"));
    }

    #[test]
    fn generate_render_and_compare() {
        let preset = CString::new("sphere").unwrap();
        let mode = CString::new("unconstrained").unwrap();
        let rgb = CString::new("rgb").unwrap();
        unsafe {
            let mut scene = ptr::null_mut();
            assert_eq!(ns_scene_generate(preset.as_ptr(), 2, 16, 60, 1, &mut scene), NsStatus::Ok);
            assert_eq!(ns_scene_view_count(scene), 2);
            let mut field = ptr::null_mut();
            assert_eq!(ns_fit(scene, mode.as_ptr(), 5, 0, &mut field), NsStatus::Ok);
            assert_eq!(ns_field_len(field), 60);
            let mut img = ptr::null_mut();
            assert_eq!(ns_render(field, scene, 0, rgb.as_ptr(), &mut img), NsStatus::Ok);
            assert_eq!((ns_image_width(img), ns_image_height(img)), (16, 16));
            let mut buf = vec![0.0; 16 * 16 * 3];
            assert_eq!(ns_image_copy(img, buf.as_mut_ptr(), buf.len()), NsStatus::Ok);
            assert!(buf.iter().all(|v| v.is_finite()));
            assert_eq!(ns_image_copy(img, buf.as_mut_ptr(), 3), NsStatus::InvalidArgument);
            let mut gt = ptr::null_mut();
            assert_eq!(ns_scene_view_rgb(scene, 0, &mut gt), NsStatus::Ok);
            let mut value = 0.0;
            assert_eq!(ns_psnr(img, gt, &mut value), NsStatus::Ok);
            assert!(value.is_finite() && value > 0.0);
            assert_eq!(ns_render(field, scene, 9, rgb.as_ptr(), &mut img), NsStatus::InvalidArgument);
            ns_image_free(gt);
            ns_image_free(img);
            ns_field_free(field);
            ns_scene_free(scene);
        }
    }

    #[test]
    fn version_is_a_c_string() {
        let v = unsafe { CStr::from_ptr(ns_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
