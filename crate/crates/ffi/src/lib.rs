//! C ABI over the volseg engine.
//!
//! Every fallible call returns a [`VsStatus`]; on failure the message is
//! kept per thread and read back with [`vs_last_error`]. Objects cross the
//! boundary as opaque handles that the caller releases with the matching
//! `_free` function. Volumes are x-fastest, `dims = {x, y, z}`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use volseg::config::{Profile, RunConfig};
use volseg::data::{dsc, generate_phantom, read_intensity, read_mask, write_volume, Mask, Volume};
use volseg::nets::{count_parameters, load_checkpoint, receptive_field, CountMode, Net};
use volseg::pipeline::{localize, pad_to_min, segment_end_to_end};
use volseg::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Format = 5,
    NonFinite = 6,
    EmptyMask = 7,
    Config = 8,
    Panic = 9,
}

/// Intensity volume (f32).
pub struct VsVolume(Volume<f32>);

/// Binary mask (u8, 0 or 1).
pub struct VsMask(Mask);

/// Trained network loaded from a checkpoint.
pub struct VsNet(Net<f32>);

/// Run configuration: profile plus overrides.
pub struct VsConfig(RunConfig);

/// Box placed by localization.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct VsBox {
    pub anchor: [usize; 3],
    pub side: usize,
    /// Windows above the localization threshold.
    pub positive_windows: usize,
    /// 1 when no window cleared the threshold and the best one was used.
    pub fallback: u8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> VsStatus {
    match e {
        Error::Shape(_) => VsStatus::Shape,
        Error::InvalidArgument(_) => VsStatus::InvalidArgument,
        Error::NonFinite(_) => VsStatus::NonFinite,
        Error::EmptyMask(_) => VsStatus::EmptyMask,
        Error::BadMagic { .. }
        | Error::Truncated { .. }
        | Error::UnknownDtype(_)
        | Error::UnsupportedVersion(_)
        | Error::Malformed(_) => VsStatus::Format,
        Error::Generation(_) | Error::Config(_) => VsStatus::Config,
        Error::Io { .. } => VsStatus::Io,
    }
}

enum Fail {
    Null(&'static str),
    Engine(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Engine(e)
    }
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> VsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            VsStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            VsStatus::NullPointer
        }
        Ok(Err(Fail::Engine(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            VsStatus::Panic
        }
    }
}

unsafe fn obj<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    unsafe { p.as_ref() }.ok_or(Fail::Null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    unsafe { p.as_mut() }.ok_or(Fail::Null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Fail::Engine(Error::InvalidArgument(format!("{what} is not UTF-8"))))
}

unsafe fn path(p: *const c_char, what: &'static str) -> Result<PathBuf, Fail> {
    Ok(PathBuf::from(unsafe { text(p, what) }?))
}

unsafe fn handles<'a, T>(p: *const *const T, n: usize, what: &'static str) -> Result<Vec<&'a T>, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    unsafe { std::slice::from_raw_parts(p, n) }
        .iter()
        .map(|&h| unsafe { obj(h, what) })
        .collect()
}

fn boxed<T>(slot: &mut *mut T, v: T) {
    *slot = Box::into_raw(Box::new(v));
}

fn dims3(dims: *const usize) -> Result<[usize; 3], Fail> {
    let d = unsafe { std::slice::from_raw_parts(dims.as_ref().ok_or(Fail::Null("dims"))?, 3) };
    Ok([d[0], d[1], d[2]])
}

/// Library version, static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL after a
/// success. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn vs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

// ---- volumes and masks ----

/// Copies `dims[0]·dims[1]·dims[2]` floats into a new volume.
///
/// # Safety
/// `dims` points to 3 values, `data` to `len` floats.
#[no_mangle]
pub unsafe extern "C" fn vs_volume_new(
    dims: *const usize,
    data: *const f32,
    len: usize,
    result: *mut *mut VsVolume,
) -> VsStatus {
    guard(|| {
        let slot = unsafe { out(result, "result") }?;
        let dims = dims3(dims)?;
        if data.is_null() {
            return Err(Fail::Null("data"));
        }
        let values = unsafe { std::slice::from_raw_parts(data, len) }.to_vec();
        boxed(slot, VsVolume(Volume::new(dims, values)?));
        Ok(())
    })
}

/// Reads a DBV1 intensity volume; masks are widened to 0.0 / 1.0.
///
/// # Safety
/// `file` is a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn vs_volume_read(file: *const c_char, result: *mut *mut VsVolume) -> VsStatus {
    guard(|| {
        let slot = unsafe { out(result, "result") }?;
        boxed(slot, VsVolume(read_intensity(unsafe { path(file, "path") }?)?));
        Ok(())
    })
}

/// # Safety
/// `v` is a live handle, `file` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn vs_volume_write(v: *const VsVolume, file: *const c_char) -> VsStatus {
    guard(|| {
        write_volume(&unsafe { obj(v, "volume") }?.0, unsafe { path(file, "path") }?)?;
        Ok(())
    })
}

/// # Safety
/// `v` is a live handle, `dims` has room for 3 values.
#[no_mangle]
pub unsafe extern "C" fn vs_volume_dims(v: *const VsVolume, dims: *mut usize) -> VsStatus {
    guard(|| {
        let d = unsafe { obj(v, "volume") }?.0.dims();
        if dims.is_null() {
            return Err(Fail::Null("dims"));
        }
        unsafe { ptr::copy_nonoverlapping(d.as_ptr(), dims, 3) };
        Ok(())
    })
}

/// Copies the voxels into `data`, which must hold exactly the voxel count.
///
/// # Safety
/// `data` points to `len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn vs_volume_copy_data(v: *const VsVolume, data: *mut f32, len: usize) -> VsStatus {
    guard(|| {
        let src = unsafe { obj(v, "volume") }?.0.data();
        if data.is_null() {
            return Err(Fail::Null("data"));
        }
        if len != src.len() {
            return Err(Error::Shape(format!("buffer holds {len} values, volume has {}", src.len())).into());
        }
        unsafe { ptr::copy_nonoverlapping(src.as_ptr(), data, len) };
        Ok(())
    })
}

/// # Safety
/// `v` is NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vs_volume_free(v: *mut VsVolume) {
    if !v.is_null() {
        drop(unsafe { Box::from_raw(v) });
    }
}

/// # Safety
/// `file` is a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn vs_mask_read(file: *const c_char, result: *mut *mut VsMask) -> VsStatus {
    guard(|| {
        let slot = unsafe { out(result, "result") }?;
        boxed(slot, VsMask(read_mask(unsafe { path(file, "path") }?)?));
        Ok(())
    })
}

/// # Safety
/// `m` is a live handle, `file` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn vs_mask_write(m: *const VsMask, file: *const c_char) -> VsStatus {
    guard(|| {
        write_volume(&unsafe { obj(m, "mask") }?.0, unsafe { path(file, "path") }?)?;
        Ok(())
    })
}

/// # Safety
/// `m` is a live handle, `dims` has room for 3 values.
#[no_mangle]
pub unsafe extern "C" fn vs_mask_dims(m: *const VsMask, dims: *mut usize) -> VsStatus {
    guard(|| {
        let d = unsafe { obj(m, "mask") }?.0.dims();
        if dims.is_null() {
            return Err(Fail::Null("dims"));
        }
        unsafe { ptr::copy_nonoverlapping(d.as_ptr(), dims, 3) };
        Ok(())
    })
}

/// # Safety
/// `m` is a live handle, `count` writable.
#[no_mangle]
pub unsafe extern "C" fn vs_mask_count(m: *const VsMask, count: *mut usize) -> VsStatus {
    guard(|| {
        *unsafe { out(count, "count") }? = unsafe { obj(m, "mask") }?.0.count_nonzero();
        Ok(())
    })
}

/// Copies the 0/1 voxels into `data`, which must hold exactly the voxel count.
///
/// # Safety
/// `data` points to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn vs_mask_copy_data(m: *const VsMask, data: *mut u8, len: usize) -> VsStatus {
    guard(|| {
        let src = unsafe { obj(m, "mask") }?.0.data();
        if data.is_null() {
            return Err(Fail::Null("data"));
        }
        if len != src.len() {
            return Err(Error::Shape(format!("buffer holds {len} values, mask has {}", src.len())).into());
        }
        unsafe { ptr::copy_nonoverlapping(src.as_ptr(), data, len) };
        Ok(())
    })
}

/// # Safety
/// `m` is NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vs_mask_free(m: *mut VsMask) {
    if !m.is_null() {
        drop(unsafe { Box::from_raw(m) });
    }
}

/// Dice similarity of two masks of equal shape; two empty masks score 1.
///
/// # Safety
/// Both handles live, `score` writable.
#[no_mangle]
pub unsafe extern "C" fn vs_dsc(a: *const VsMask, b: *const VsMask, score: *mut f64) -> VsStatus {
    guard(|| {
        let s = unsafe { out(score, "score") }?;
        *s = dsc(&unsafe { obj(a, "a") }?.0, &unsafe { obj(b, "b") }?.0)?;
        Ok(())
    })
}

// ---- configuration ----

/// New configuration for `profile` ("full" or "desk").
///
/// # Safety
/// `profile` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vs_config_new(profile: *const c_char, result: *mut *mut VsConfig) -> VsStatus {
    guard(|| {
        let slot = unsafe { out(result, "result") }?;
        let p: Profile = unsafe { text(profile, "profile") }?.parse()?;
        boxed(slot, VsConfig(RunConfig::for_profile(p)));
        Ok(())
    })
}

/// Overrides one key, e.g. `seg_threshold` = `0.9`. The config is left
/// unchanged when the result would be invalid.
///
/// # Safety
/// `cfg` is a live handle; `key` and `value` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn vs_config_set(cfg: *mut VsConfig, key: *const c_char, value: *const c_char) -> VsStatus {
    guard(|| {
        let c = unsafe { out(cfg, "config") }?;
        let mut next = c.0.clone();
        next.set(unsafe { text(key, "key") }?, unsafe { text(value, "value") }?)?;
        next.validate()?;
        c.0 = next;
        Ok(())
    })
}

/// # Safety
/// `cfg` is NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vs_config_free(cfg: *mut VsConfig) {
    if !cfg.is_null() {
        drop(unsafe { Box::from_raw(cfg) });
    }
}

/// Synthetic phantom and its cavity mask for `seed`.
///
/// # Safety
/// `cfg` is a live handle; both result slots writable.
#[no_mangle]
pub unsafe extern "C" fn vs_phantom_generate(
    cfg: *const VsConfig,
    seed: u64,
    volume: *mut *mut VsVolume,
    mask: *mut *mut VsMask,
) -> VsStatus {
    guard(|| {
        let c = unsafe { obj(cfg, "config") }?;
        let (vs, ms) = (unsafe { out(volume, "volume") }?, unsafe { out(mask, "mask") }?);
        let (v, m) = generate_phantom(&c.0.phantom, seed)?;
        boxed(vs, VsVolume(v));
        boxed(ms, VsMask(m));
        Ok(())
    })
}

// ---- networks and inference ----

/// Loads a DBVW checkpoint.
///
/// # Safety
/// `file` is a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn vs_net_load(file: *const c_char, result: *mut *mut VsNet) -> VsStatus {
    guard(|| {
        let slot = unsafe { out(result, "result") }?;
        boxed(slot, VsNet(load_checkpoint(unsafe { path(file, "path") }?)?));
        Ok(())
    })
}

/// Learnable parameters; `dense_equivalent` counts cross kernels as full cubes.
///
/// # Safety
/// `net` is a live handle, `count` writable.
#[no_mangle]
pub unsafe extern "C" fn vs_net_param_count(net: *const VsNet, dense_equivalent: bool, count: *mut usize) -> VsStatus {
    guard(|| {
        let mode = if dense_equivalent { CountMode::DenseEquivalent } else { CountMode::Actual };
        *unsafe { out(count, "count") }? = count_parameters(&unsafe { obj(net, "net") }?.0, mode).total;
        Ok(())
    })
}

/// Receptive field side at the output.
///
/// # Safety
/// `net` is a live handle, `side` writable.
#[no_mangle]
pub unsafe extern "C" fn vs_net_receptive_field(net: *const VsNet, side: *mut usize) -> VsStatus {
    guard(|| {
        *unsafe { out(side, "side") }? = receptive_field(unsafe { obj(net, "net") }?.0.spec()).size[0];
        Ok(())
    })
}

/// # Safety
/// `net` is NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vs_net_free(net: *mut VsNet) {
    if !net.is_null() {
        drop(unsafe { Box::from_raw(net) });
    }
}

fn nets<'a>(handles: &[&'a VsNet]) -> Vec<&'a Net<f32>> {
    handles.iter().map(|n| &n.0).collect()
}

/// Places the segmentation box with a mean ensemble of `n_loc` classifiers.
///
/// # Safety
/// `loc` points to `n_loc` live handles; `bbox` writable.
#[no_mangle]
pub unsafe extern "C" fn vs_localize(
    cfg: *const VsConfig,
    volume: *const VsVolume,
    loc: *const *const VsNet,
    n_loc: usize,
    bbox: *mut VsBox,
) -> VsStatus {
    guard(|| {
        let c = &unsafe { obj(cfg, "config") }?.0;
        let v = &unsafe { obj(volume, "volume") }?.0;
        let nets = nets(&unsafe { handles(loc, n_loc, "loc") }?);
        let b = unsafe { out(bbox, "bbox") }?;
        let r = localize(&pad_to_min(v, c.pipeline.box_side).volume, &nets, &c.pipeline)?;
        *b = VsBox {
            anchor: r.bbox.anchor,
            side: r.bbox.side,
            positive_windows: r.positives.len(),
            fallback: r.fallback as u8,
        };
        Ok(())
    })
}

/// Full pipeline: localize, segment with an OR ensemble, drop small
/// components. `bbox` may be NULL.
///
/// # Safety
/// `loc` and `seg` point to `n_loc` and `n_seg` live handles.
#[no_mangle]
pub unsafe extern "C" fn vs_segment(
    cfg: *const VsConfig,
    volume: *const VsVolume,
    loc: *const *const VsNet,
    n_loc: usize,
    seg: *const *const VsNet,
    n_seg: usize,
    mask: *mut *mut VsMask,
    bbox: *mut VsBox,
) -> VsStatus {
    guard(|| {
        let c = &unsafe { obj(cfg, "config") }?.0;
        let v = &unsafe { obj(volume, "volume") }?.0;
        let loc = nets(&unsafe { handles(loc, n_loc, "loc") }?);
        let seg = nets(&unsafe { handles(seg, n_seg, "seg") }?);
        let slot = unsafe { out(mask, "mask") }?;
        let r = segment_end_to_end(v, &loc, &seg, &c.pipeline)?;
        if let Some(b) = unsafe { bbox.as_mut() } {
            let l = r.localization.as_ref().expect("end to end localizes");
            *b = VsBox {
                anchor: r.bbox.anchor,
                side: r.bbox.side,
                positive_windows: l.positives.len(),
                fallback: l.fallback as u8,
            };
        }
        boxed(slot, VsMask(r.mask));
        Ok(())
    })
}
