//! C interface to the planeopt pipeline.
//!
//! Every function returns a [`PoStatus`]; on failure the message is kept per
//! thread and read with [`po_last_error`]. Configs and results are opaque
//! handles owned by the caller and released with their `_free` function.
//! Panics are caught at the boundary and reported as `PO_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use planeopt::config::RunConfig;
use planeopt::pipeline::{self, RunOutput};
use planeopt::synth::{default_intrinsics, make_scene, render_frames, write_dataset, Preset};
use planeopt::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoStatus {
    PoOk = 0,
    PoNullArgument = 1,
    PoInvalidUtf8 = 2,
    PoIo = 3,
    PoFormat = 4,
    PoIngest = 5,
    PoArgument = 6,
    PoExport = 7,
    PoImage = 8,
    PoNumeric = 9,
    PoConfig = 10,
    PoOutOfRange = 11,
    PoPanic = 12,
}

/// Opaque run configuration.
pub struct PoConfig(RunConfig);

/// Opaque result of a pipeline run.
pub struct PoResult(RunOutput);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> PoStatus {
    match e {
        Error::Io { .. } => PoStatus::PoIo,
        Error::Format { .. } => PoStatus::PoFormat,
        Error::Ingest(_) => PoStatus::PoIngest,
        Error::Argument(_) => PoStatus::PoArgument,
        Error::Export(_) => PoStatus::PoExport,
        Error::Image(_) => PoStatus::PoImage,
        Error::Numeric(_) => PoStatus::PoNumeric,
        Error::Config(_) => PoStatus::PoConfig,
        Error::Stage { source, .. } => status_of(source),
    }
}

struct Fail(PoStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Runs `f` with panics caught and the error message recorded.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            PoStatus::PoOk
        }
        Ok(Err(Fail(s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            PoStatus::PoPanic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(PoStatus::PoNullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(PoStatus::PoInvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail(PoStatus::PoNullArgument, format!("{what} is null")))
}

fn null(what: &str) -> Fail {
    Fail(PoStatus::PoNullArgument, format!("{what} is null"))
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn po_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, static string.
#[no_mangle]
pub extern "C" fn po_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a config file; relative paths inside resolve against its directory.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn po_config_load(path: *const c_char, out: *mut *mut PoConfig) -> PoStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let cfg = RunConfig::from_file(Path::new(path))?;
        *out = Box::into_raw(Box::new(PoConfig(cfg)));
        Ok(())
    })
}

/// Parses config text; relative paths resolve against `base_dir`.
///
/// # Safety
/// `text` and `base_dir` must be NUL-terminated strings and `out` a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn po_config_parse(
    text: *const c_char,
    base_dir: *const c_char,
    out: *mut *mut PoConfig,
) -> PoStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let base = str_arg(base_dir, "base_dir")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let cfg = RunConfig::parse_str(text, Path::new(base))?;
        *out = Box::into_raw(Box::new(PoConfig(cfg)));
        Ok(())
    })
}

/// Overrides one config key, same syntax as a config file line.
///
/// # Safety
/// `cfg` must come from `po_config_load` or `po_config_parse`; `key` and
/// `value` must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn po_config_set(
    cfg: *mut PoConfig,
    key: *const c_char,
    value: *const c_char,
) -> PoStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        let key = str_arg(key, "key")?;
        let value = str_arg(value, "value")?;
        cfg.0.set(key, value)?;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn po_config_free(cfg: *mut PoConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs the whole pipeline and writes the outputs to the configured
/// directory.
///
/// # Safety
/// `cfg` must be a live config handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn po_run(cfg: *const PoConfig, out: *mut *mut PoResult) -> PoStatus {
    guard(|| {
        let cfg = ref_arg(cfg, "cfg")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let res = pipeline::run(&cfg.0)?;
        *out = Box::into_raw(Box::new(PoResult(res)));
        Ok(())
    })
}

/// # Safety
/// `res` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn po_result_free(res: *mut PoResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// Size counters of a finished run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PoCounts {
    pub input_vertices: usize,
    pub input_faces: usize,
    pub result_vertices: usize,
    pub result_faces: usize,
    pub keyframes: usize,
    pub planes: usize,
    pub poses: usize,
    pub total_seconds: f64,
}

/// # Safety
/// `res` must be a live result handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn po_result_counts(res: *const PoResult, out: *mut PoCounts) -> PoStatus {
    guard(|| {
        let r = &ref_arg(res, "res")?.0;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = PoCounts {
            input_vertices: r.stats.input_vertices,
            input_faces: r.stats.input_faces,
            result_vertices: r.stats.result_vertices,
            result_faces: r.stats.result_faces,
            keyframes: r.stats.keyframes,
            planes: r.planes.len(),
            poses: r.poses.len(),
            total_seconds: r.stats.total_seconds,
        };
        Ok(())
    })
}

/// Plane `index` as `(nx, ny, nz, w)` with `n·x + w = 0`.
///
/// # Safety
/// `res` must be a live result handle and `out` point to 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn po_result_plane(
    res: *const PoResult,
    index: usize,
    out: *mut f64,
) -> PoStatus {
    guard(|| {
        let r = &ref_arg(res, "res")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        let p = r.planes.get(index).ok_or_else(|| {
            Fail(
                PoStatus::PoOutOfRange,
                format!("plane {index} of {}", r.planes.len()),
            )
        })?;
        let v = [p.normal.x, p.normal.y, p.normal.z, p.offset];
        std::ptr::copy_nonoverlapping(v.as_ptr(), out, 4);
        Ok(())
    })
}

/// Optimized world-to-camera pose of keyframe `index` as a row-major 4×4
/// matrix.
///
/// # Safety
/// `res` must be a live result handle and `out` point to 16 doubles.
#[no_mangle]
pub unsafe extern "C" fn po_result_pose(
    res: *const PoResult,
    index: usize,
    out: *mut f64,
) -> PoStatus {
    guard(|| {
        let r = &ref_arg(res, "res")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        let p = r.poses.get(index).ok_or_else(|| {
            Fail(
                PoStatus::PoOutOfRange,
                format!("pose {index} of {}", r.poses.len()),
            )
        })?;
        let m = p.to_homogeneous();
        for i in 0..4 {
            for j in 0..4 {
                *out.add(4 * i + j) = m[(i, j)];
            }
        }
        Ok(())
    })
}

/// Writes a synthetic dataset (mesh, frames, trajectory, intrinsics and a
/// `planeopt.cfg`) to `dir`. `scene` is one of `box`, `room`, `room-box`,
/// `plane`.
///
/// # Safety
/// `scene` and `dir` must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn po_synth_write(
    scene: *const c_char,
    dir: *const c_char,
    edge_len: f64,
    noise_sigma: f64,
    frames: u32,
    width: u32,
    height: u32,
) -> PoStatus {
    guard(|| {
        let preset: Preset = str_arg(scene, "scene")?.parse()?;
        let dir = str_arg(dir, "dir")?;
        if !(edge_len > 0.0) || !(noise_sigma >= 0.0) || frames == 0 || width == 0 || height == 0 {
            return Err(Fail(
                PoStatus::PoArgument,
                "edge_len, frames and image size must be positive".into(),
            ));
        }
        let s = make_scene(&preset.spec(edge_len, noise_sigma));
        let k = default_intrinsics(width, height);
        let fs = render_frames(&s, &preset.poses(frames as usize), &k, 2);
        write_dataset(&s, &fs, Path::new(dir), "")?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_errors_map_to_the_inner_code() {
        let e = Error::Stage {
            stage: "simplify",
            source: Box::new(Error::Numeric("x".into())),
        };
        assert_eq!(status_of(&e), PoStatus::PoNumeric);
    }

    #[test]
    fn panics_become_a_status() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, PoStatus::PoPanic);
        let msg = unsafe { CStr::from_ptr(po_last_error()) }.to_str().unwrap();
        assert!(msg.contains("boom"), "{msg}");
    }
}
