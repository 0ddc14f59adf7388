//! C ABI over the glann library.
//!
//! Every function returns a [`GlannStatus`]. On failure, [`glann_last_error`]
//! gives a message for the calling thread. Handles are opaque and must be
//! released with [`glann_model_free`]. Panics are caught at the boundary and
//! reported as [`GlannStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use glann::eval::{f_beta_summary, prd_curve, prd_histograms};
use glann::synthesis::{sample_images, TrainedModel};
use glann::{pipeline::Bundle, Error};
use ndarray::{Array2, ArrayView2};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GlannStatus {
    Ok = 0,
    /// Bad argument, null pointer, or buffer of the wrong size.
    Argument = 1,
    /// Unreadable, corrupt or incompatible file.
    Format = 2,
    /// Numeric failure such as a non-finite loss or an indefinite matrix.
    Numeric = 3,
    /// Operation not valid for this object.
    State = 4,
    /// A panic was caught at the boundary.
    Panic = 5,
}

/// A loaded generator and mapper.
pub struct GlannModel {
    model: TrainedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> GlannStatus {
    match e {
        Error::Stage { source, .. } => status_of(source),
        Error::Argument(_) | Error::Config(_) => GlannStatus::Argument,
        Error::Numeric(_) | Error::NonFiniteLoss { .. } => GlannStatus::Numeric,
        Error::State(_) => GlannStatus::State,
        _ => GlannStatus::Format,
    }
}

fn guard(f: impl FnOnce() -> Result<(), Error>) -> GlannStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GlannStatus::Ok,
        Ok(Err(e)) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            GlannStatus::Panic
        }
    }
}

fn null_arg(what: &str) -> Error {
    Error::Argument(format!("`{what}` is null"))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Error> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null_arg(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Error> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null_arg(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn write_images(pixels: &ndarray::Array4<f64>, out: &mut [f64]) -> Result<(), Error> {
    if out.len() != pixels.len() {
        return Err(Error::Argument(format!("output buffer holds {} values, need {}", out.len(), pixels.len())));
    }
    for (o, &v) in out.iter_mut().zip(pixels.iter()) {
        *o = v;
    }
    Ok(())
}

/// Message for the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn glann_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Load a checkpoint that contains a mapper. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn glann_model_load(path: *const c_char, out: *mut *mut GlannModel) -> GlannStatus {
    guard(|| {
        if path.is_null() {
            return Err(null_arg("path"));
        }
        if out.is_null() {
            return Err(null_arg("out"));
        }
        let p = CStr::from_ptr(path).to_str().map_err(|_| Error::Argument("path is not UTF-8".into()))?;
        let model = Bundle::load(Path::new(p))?.model()?;
        *out = Box::into_raw(Box::new(GlannModel { model }));
        Ok(())
    })
}

/// Release a handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`glann_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn glann_model_free(model: *mut GlannModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Image shape and noise dimension of a model. Any output pointer may be null.
///
/// # Safety
/// `model` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn glann_model_image_shape(
    model: *const GlannModel,
    channels: *mut usize,
    height: *mut usize,
    width: *mut usize,
    noise_dim: *mut usize,
) -> GlannStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null_arg("model"))?.model;
        let [c, h, w] = m.shape().dims();
        for (p, v) in [(channels, c), (height, h), (width, w), (noise_dim, m.noise_dim())] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Draw `n` images with noise seeded by `seed`. `out` receives
/// `n * channels * height * width` values in NCHW order, in [-1, 1].
///
/// # Safety
/// `model` must be a live handle and `out` valid for `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn glann_model_sample(
    model: *const GlannModel,
    n: usize,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> GlannStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null_arg("model"))?.model;
        let batch = sample_images(m, n, seed)?;
        write_images(&batch.pixels, slice_mut(out, out_len, "out")?)
    })
}

/// Decode `n` noise rows (row-major, `n * noise_dim` values) to images.
///
/// # Safety
/// `model` must be a live handle, `noise` valid for `n * noise_dim` doubles and
/// `out` for `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn glann_model_decode_noise(
    model: *const GlannModel,
    noise: *const f64,
    n: usize,
    out: *mut f64,
    out_len: usize,
) -> GlannStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null_arg("model"))?.model;
        let d = m.noise_dim();
        let e = Array2::from_shape_vec((n, d), slice(noise, n * d, "noise")?.to_vec()).expect("length matches");
        let batch = m.decode_noise(&e)?;
        write_images(&batch.pixels, slice_mut(out, out_len, "out")?)
    })
}

unsafe fn features<'a>(p: *const f64, rows: usize, dim: usize, what: &str) -> Result<ArrayView2<'a, f64>, Error> {
    let s = slice(p, rows * dim, what)?;
    Ok(ArrayView2::from_shape((rows, dim), s).expect("length matches"))
}

/// FID between two row-major feature matrices of width `dim`.
///
/// # Safety
/// `real` and `gen` must be valid for `n_real * dim` and `n_gen * dim`
/// doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn glann_fid_from_features(
    real: *const f64,
    n_real: usize,
    gen: *const f64,
    n_gen: usize,
    dim: usize,
    out: *mut f64,
) -> GlannStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_arg("out"));
        }
        let r = glann::eval::gaussian_stats(features(real, n_real, dim, "real")?)?;
        let g = glann::eval::gaussian_stats(features(gen, n_gen, dim, "gen")?)?;
        *out = glann::eval::fid(&r, &g)?;
        Ok(())
    })
}

/// Precision/recall curve between two equally sized feature sets. `precision`
/// and `recall` receive `angles` values each; `f8` and `f1_8` may be null.
///
/// # Safety
/// `real` and `gen` must be valid for `n * dim` doubles, `precision` and
/// `recall` for `angles` doubles; non-null scalar outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn glann_prd_from_features(
    real: *const f64,
    gen: *const f64,
    n: usize,
    dim: usize,
    bins: usize,
    angles: usize,
    seed: u64,
    precision: *mut f64,
    recall: *mut f64,
    f8: *mut f64,
    f1_8: *mut f64,
) -> GlannStatus {
    guard(|| {
        let (p, q) = prd_histograms(features(real, n, dim, "real")?, features(gen, n, dim, "gen")?, bins, seed)?;
        let curve = prd_curve(&p, &q, angles)?;
        slice_mut(precision, angles, "precision")?.copy_from_slice(&curve.precision);
        slice_mut(recall, angles, "recall")?.copy_from_slice(&curve.recall);
        let (a, b) = f_beta_summary(&curve);
        if !f8.is_null() {
            *f8 = a;
        }
        if !f1_8.is_null() {
            *f1_8 = b;
        }
        Ok(())
    })
}
