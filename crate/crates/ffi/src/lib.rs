//! C ABI over the `pansharp` library.
//!
//! Images and networks cross the boundary as opaque handles owned by the
//! caller and released with the matching `*_free` function. Every fallible
//! call returns a [`PsStatus`]; on failure the message is kept per thread and
//! read with [`ps_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pansharp::fusenet::{self, FuseNetParams};
use pansharp::metrics::{self, MetricsReport};
use pansharp::pipeline;
use pansharp::raster::{self, Dtype, RasterImage};
use pansharp::Error;

/// Opaque multiband raster.
pub struct PsImage(RasterImage);

/// Opaque fusion network parameters.
pub struct PsNetwork(FuseNetParams<f32>);

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Format = 4,
    Length = 5,
    UnsupportedDtype = 6,
    Range = 7,
    Index = 8,
    Dimension = 9,
    Shape = 10,
    Lookup = 11,
    Size = 12,
    DegenerateBand = 13,
    Arity = 14,
    Usage = 15,
    Numeric = 16,
    Panic = 17,
}

/// Sample encoding for saved rasters.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsDtype {
    U16 = 0,
    F32 = 1,
}

/// Reduced-resolution quality indices.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PsReducedMetrics {
    pub qave: f64,
    pub sam: f64,
    pub ergas: f64,
    pub scc: f64,
}

/// Full-resolution quality indices.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PsFullMetrics {
    pub d_lambda: f64,
    pub d_s: f64,
    pub qnr: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(PsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Format(_) => PsStatus::Format,
            Error::Length(_) => PsStatus::Length,
            Error::UnsupportedDtype(_) => PsStatus::UnsupportedDtype,
            Error::Range(_) => PsStatus::Range,
            Error::Index(_) => PsStatus::Index,
            Error::Dimension(_) => PsStatus::Dimension,
            Error::Shape(_) => PsStatus::Shape,
            Error::Lookup(_) => PsStatus::Lookup,
            Error::Size(_) => PsStatus::Size,
            Error::DegenerateBand(_) => PsStatus::DegenerateBand,
            Error::Arity(_) => PsStatus::Arity,
            Error::Usage(_) => PsStatus::Usage,
            Error::Numeric(_) => PsStatus::Numeric,
            Error::Io { .. } => PsStatus::Io,
        };
        Failure(code, e.to_string())
    }
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PsStatus::Ok,
        Ok(Err(Failure(code, msg))) => {
            set_last_error(msg);
            code
        }
        Err(_) => {
            set_last_error("panic inside pansharp".into());
            PsStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(PsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(PsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn path<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(PsStatus::NullPointer, "path is null".into()));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(PsStatus::InvalidUtf8, "path is not valid UTF-8".into()))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message of the last failed call on this thread, or null. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn ps_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ps_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds an image from band-sequential samples (`width * height * bands` floats).
///
/// # Safety
/// `data` must point to `len` readable floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_image_new(
    width: u32,
    height: u32,
    bands: u32,
    data: *const f32,
    len: usize,
    radiometric_max: f32,
    out: *mut *mut PsImage,
) -> PsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let data = deref(data, "data").map(|d| std::slice::from_raw_parts(d, len))?;
        let img = RasterImage::new(
            width as usize,
            height as usize,
            bands as usize,
            data.to_vec(),
            radiometric_max,
        )?;
        *out = boxed(PsImage(img));
        Ok(())
    })
}

/// Reads an `MBR` raster file.
///
/// # Safety
/// `file` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_image_load(file: *const c_char, out: *mut *mut PsImage) -> PsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = boxed(PsImage(raster::load_mbr(path(file)?)?));
        Ok(())
    })
}

/// Writes an `MBR` raster file.
///
/// # Safety
/// `img` must be a live handle; `file` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ps_image_save(
    img: *const PsImage,
    file: *const c_char,
    dtype: PsDtype,
) -> PsStatus {
    guard(|| {
        let img = deref(img, "image")?;
        let dtype = match dtype {
            PsDtype::U16 => Dtype::U16,
            PsDtype::F32 => Dtype::F32,
        };
        raster::save_mbr(&img.0, path(file)?, dtype)?;
        Ok(())
    })
}

/// Image dimensions. Any output pointer may be null.
///
/// # Safety
/// `img` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ps_image_dims(
    img: *const PsImage,
    width: *mut u32,
    height: *mut u32,
    bands: *mut u32,
) -> PsStatus {
    guard(|| {
        let img = &deref(img, "image")?.0;
        for (p, v) in [
            (width, img.width()),
            (height, img.height()),
            (bands, img.bands()),
        ] {
            if let Some(p) = p.as_mut() {
                *p = v as u32;
            }
        }
        Ok(())
    })
}

/// Copies the normalized band-sequential samples into `dst`, which holds `len` floats.
///
/// # Safety
/// `img` must be a live handle; `dst` must point to `len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn ps_image_copy_data(
    img: *const PsImage,
    dst: *mut f32,
    len: usize,
) -> PsStatus {
    guard(|| {
        let data = deref(img, "image")?.0.data();
        if dst.is_null() {
            return Err(Failure(PsStatus::NullPointer, "dst is null".into()));
        }
        if len != data.len() {
            return Err(Failure(
                PsStatus::Length,
                format!("buffer holds {len} samples, image has {}", data.len()),
            ));
        }
        std::slice::from_raw_parts_mut(dst, len).copy_from_slice(data);
        Ok(())
    })
}

/// Releases an image handle. Null is ignored.
///
/// # Safety
/// `img` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ps_image_free(img: *mut PsImage) {
    if !img.is_null() {
        drop(Box::from_raw(img));
    }
}

/// Reads an `FNET` checkpoint.
///
/// # Safety
/// `file` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_network_load(
    file: *const c_char,
    out: *mut *mut PsNetwork,
) -> PsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = boxed(PsNetwork(fusenet::load_checkpoint(path(file)?)?));
        Ok(())
    })
}

/// Creates a network with every weight and bias zero (fusion then reduces to interpolation).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_network_zeros(
    bands: u32,
    blocks: u32,
    out: *mut *mut PsNetwork,
) -> PsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = boxed(PsNetwork(FuseNetParams::zeros(
            bands as usize,
            blocks as usize,
        )?));
        Ok(())
    })
}

/// Writes an `FNET` checkpoint.
///
/// # Safety
/// `net` must be a live handle; `file` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ps_network_save(net: *const PsNetwork, file: *const c_char) -> PsStatus {
    guard(|| {
        let net = deref(net, "network")?;
        fusenet::save_checkpoint(&net.0, path(file)?)?;
        Ok(())
    })
}

/// Band count, block count and total parameter count. Any output pointer may be null.
///
/// # Safety
/// `net` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ps_network_info(
    net: *const PsNetwork,
    bands: *mut u32,
    blocks: *mut u32,
    params: *mut u64,
) -> PsStatus {
    guard(|| {
        let net = &deref(net, "network")?.0;
        if let Some(p) = bands.as_mut() {
            *p = net.bands() as u32;
        }
        if let Some(p) = blocks.as_mut() {
            *p = net.blocks() as u32;
        }
        if let Some(p) = params.as_mut() {
            *p = net.param_count() as u64;
        }
        Ok(())
    })
}

/// Parameter count of a network with `bands` bands and `blocks` residual blocks.
#[no_mangle]
pub extern "C" fn ps_param_count(bands: u32, blocks: u32) -> u64 {
    fusenet::param_count(bands as usize, blocks as usize) as u64
}

/// Releases a network handle. Null is ignored.
///
/// # Safety
/// `net` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ps_network_free(net: *mut PsNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Fuses `pan` with `ms`, which is `2^levels` times coarser, into a new image.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_fuse(
    pan: *const PsImage,
    ms: *const PsImage,
    net: *const PsNetwork,
    levels: u32,
    out: *mut *mut PsImage,
) -> PsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let (pan, ms, net) = (deref(pan, "pan")?, deref(ms, "ms")?, deref(net, "network")?);
        if net.0.bands() != ms.0.bands() {
            return Err(Error::Format(format!(
                "network expects {} bands, multispectral image has {}",
                net.0.bands(),
                ms.0.bands()
            ))
            .into());
        }
        let fused = pipeline::fuse(&pan.0, &ms.0, &net.0, levels as usize)?.into_final();
        *out = boxed(PsImage(fused));
        Ok(())
    })
}

/// Pyramid interpolation of `ms` by `levels` expansions.
///
/// # Safety
/// `ms` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_interpolate(
    ms: *const PsImage,
    levels: u32,
    out: *mut *mut PsImage,
) -> PsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let ms = deref(ms, "ms")?;
        *out = boxed(PsImage(pipeline::interpolate(&ms.0, levels as usize)));
        Ok(())
    })
}

fn value(r: &MetricsReport, key: &str) -> f64 {
    r.get(key).unwrap_or(f64::NAN)
}

/// Reduced-resolution evaluation against a reference image.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_eval_reduced(
    fused: *const PsImage,
    gt: *const PsImage,
    out: *mut PsReducedMetrics,
) -> PsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let r = metrics::evaluate_reduced(&deref(fused, "fused")?.0, &deref(gt, "gt")?.0)?;
        *out = PsReducedMetrics {
            qave: value(&r, "QAVE"),
            sam: value(&r, "SAM"),
            ergas: value(&r, "ERGAS"),
            scc: value(&r, "SCC"),
        };
        Ok(())
    })
}

/// Full-resolution evaluation without a reference.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_eval_full(
    fused: *const PsImage,
    ms: *const PsImage,
    pan: *const PsImage,
    out: *mut PsFullMetrics,
) -> PsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let r = metrics::evaluate_full(
            &deref(fused, "fused")?.0,
            &deref(ms, "ms")?.0,
            &deref(pan, "pan")?.0,
        )?;
        *out = PsFullMetrics {
            d_lambda: value(&r, "D_lambda"),
            d_s: value(&r, "D_s"),
            qnr: value(&r, "QNR"),
        };
        Ok(())
    })
}
