//! C ABI over the meshpdr pipeline.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `_free` function. Every entry point returns a [`MeshpdrStatus`];
//! on failure [`meshpdr_last_error`] gives a message for the calling thread.
//! Buffers are filled with the two-call pattern: pass a null buffer to learn
//! the required length, then call again with enough room.

use meshpdr::cli::audit_mesh;
use meshpdr::mw::{pack, MwError};
use meshpdr::pipeline::{self, Input, Mode, RunConfig, RunError, RunOutput};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshpdrStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    ImageError = 3,
    RefineError = 4,
    ProtocolError = 5,
    AuditFailed = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshpdrMode {
    Seq = 0,
    Shared = 1,
    Mw = 2,
}

/// Headline numbers of a finished run.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MeshpdrCounts {
    pub vertices: u64,
    pub elements: u64,
    pub kept_elements: u64,
    pub insertions: u64,
    pub wall_secs: f64,
    /// Mean wait-for-work share of wall time over the refining ranks.
    pub idle_fraction: f64,
    pub sliver_fraction: f64,
    /// 1 when every audit passed.
    pub audits_passed: u8,
}

/// Run configuration under construction.
pub struct MeshpdrConfig {
    inner: RunConfig,
}

/// A finished run: report and final mesh.
pub struct MeshpdrResult {
    out: RunOutput,
    json: String,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: MeshpdrStatus, msg: impl Into<String>) -> MeshpdrStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning a panic into [`MeshpdrStatus::Panic`].
fn guard(f: impl FnOnce() -> MeshpdrStatus) -> MeshpdrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(MeshpdrStatus::Panic, format!("panic: {msg}"))
        }
    }
}

fn status_of(e: &RunError) -> MeshpdrStatus {
    match e {
        RunError::Config(_) => MeshpdrStatus::InvalidArgument,
        RunError::Image(_) => MeshpdrStatus::ImageError,
        RunError::Mw(MwError::Refine(_) | MwError::WallCap(_)) => MeshpdrStatus::RefineError,
        RunError::Mw(_) => MeshpdrStatus::ProtocolError,
        _ => MeshpdrStatus::RefineError,
    }
}

unsafe fn str_arg<'a>(s: *const c_char) -> Result<&'a str, MeshpdrStatus> {
    if s.is_null() {
        return Err(fail(MeshpdrStatus::NullArgument, "string argument is null"));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(MeshpdrStatus::InvalidArgument, "string argument is not UTF-8"))
}

/// Copies `src` into `buf` (capacity `len`) and stores its length in `needed`.
unsafe fn fill(src: &[u8], buf: *mut u8, len: usize, needed: *mut usize) -> MeshpdrStatus {
    if !needed.is_null() {
        *needed = src.len();
    }
    if buf.is_null() || len < src.len() {
        if buf.is_null() && !needed.is_null() {
            return MeshpdrStatus::Ok;
        }
        return fail(
            MeshpdrStatus::BufferTooSmall,
            format!("buffer holds {len} bytes, {} needed", src.len()),
        );
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    MeshpdrStatus::Ok
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn meshpdr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message, NUL-terminated, into
/// `buf`. Returns the message length without the NUL, or 0 if there is none.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn meshpdr_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// New configuration with defaults: sequential mode, `sphere:r=16,dims=64`,
/// h = 4, radius-edge bound 2, octree depth 2.
#[no_mangle]
pub extern "C" fn meshpdr_config_new() -> *mut MeshpdrConfig {
    Box::into_raw(Box::new(MeshpdrConfig {
        inner: RunConfig::default(),
    }))
}

/// # Safety
/// `cfg` must be null or come from [`meshpdr_config_new`] and not be freed yet.
#[no_mangle]
pub unsafe extern "C" fn meshpdr_config_free(cfg: *mut MeshpdrConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

unsafe fn with_config(cfg: *mut MeshpdrConfig, f: impl FnOnce(&mut RunConfig) -> MeshpdrStatus) -> MeshpdrStatus {
    if cfg.is_null() {
        return fail(MeshpdrStatus::NullArgument, "config handle is null");
    }
    guard(|| f(&mut (*cfg).inner))
}

/// Uses a synthetic phantom such as `sphere:r=16,dims=64`.
///
/// # Safety
/// `cfg` must be a live config handle and `spec` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn meshpdr_config_set_phantom(cfg: *mut MeshpdrConfig, spec: *const c_char) -> MeshpdrStatus {
    with_config(cfg, |c| match str_arg(spec) {
        Ok(s) => match meshpdr::image::PhantomSpec::parse(s) {
            Ok(_) => {
                c.input = Input::Phantom(s.to_string());
                MeshpdrStatus::Ok
            }
            Err(e) => fail(MeshpdrStatus::InvalidArgument, e.to_string()),
        },
        Err(s) => s,
    })
}

/// Reads the input from a labeled image file when the run starts.
///
/// # Safety
/// `cfg` must be a live config handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn meshpdr_config_set_image_path(cfg: *mut MeshpdrConfig, path: *const c_char) -> MeshpdrStatus {
    with_config(cfg, |c| match str_arg(path) {
        Ok(p) => {
            c.input = Input::Image(PathBuf::from(p));
            MeshpdrStatus::Ok
        }
        Err(s) => s,
    })
}

/// `mode` is a [`MeshpdrMode`] value.
///
/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn meshpdr_config_set_mode(cfg: *mut MeshpdrConfig, mode: u32) -> MeshpdrStatus {
    with_config(cfg, |c| {
        c.mode = match mode {
            m if m == MeshpdrMode::Seq as u32 => Mode::Seq,
            m if m == MeshpdrMode::Shared as u32 => Mode::Shared,
            m if m == MeshpdrMode::Mw as u32 => Mode::Mw,
            m => return fail(MeshpdrStatus::InvalidArgument, format!("unknown mode {m}")),
        };
        MeshpdrStatus::Ok
    })
}

/// Element size bound `h` and radius-edge bound `rho` (at least 2).
///
/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn meshpdr_config_set_sizing(cfg: *mut MeshpdrConfig, h: f64, rho: f64) -> MeshpdrStatus {
    with_config(cfg, |c| {
        if !(h > 0.0 && h.is_finite()) || !(rho >= 2.0 && rho.is_finite()) {
            return fail(
                MeshpdrStatus::InvalidArgument,
                format!("need h > 0 and rho >= 2, got {h}, {rho}"),
            );
        }
        c.h = h;
        c.rho = rho;
        MeshpdrStatus::Ok
    })
}

/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn meshpdr_config_set_octree_depth(cfg: *mut MeshpdrConfig, depth: u32) -> MeshpdrStatus {
    with_config(cfg, |c| {
        if depth > meshpdr::decomp::MAX_DEPTH {
            return fail(
                MeshpdrStatus::InvalidArgument,
                format!("octree depth {depth} is too deep"),
            );
        }
        c.depth = depth;
        MeshpdrStatus::Ok
    })
}

/// Worker ranks (mw mode), refinement threads per rank and pack helper
/// threads (0 for one per core). Ranks run as threads of the calling process.
///
/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn meshpdr_config_set_parallelism(
    cfg: *mut MeshpdrConfig,
    ranks: u32,
    threads_per_rank: u32,
    pack_threads: u32,
) -> MeshpdrStatus {
    with_config(cfg, |c| {
        if ranks == 0 || threads_per_rank == 0 {
            return fail(
                MeshpdrStatus::InvalidArgument,
                "ranks and threads per rank must be positive",
            );
        }
        c.ranks = ranks;
        c.threads_per_rank = threads_per_rank as usize;
        c.pack_threads = pack_threads as usize;
        MeshpdrStatus::Ok
    })
}

/// Phantom seed and the per-loop wall-time cap in seconds.
///
/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn meshpdr_config_set_limits(
    cfg: *mut MeshpdrConfig,
    seed: u64,
    max_wall_secs: f64,
) -> MeshpdrStatus {
    with_config(cfg, |c| {
        if !(max_wall_secs > 0.0) {
            return fail(MeshpdrStatus::InvalidArgument, "wall-time cap must be positive");
        }
        c.seed = seed;
        c.max_wall_secs = max_wall_secs;
        MeshpdrStatus::Ok
    })
}

/// Runs the configured pipeline. On success `*out` receives a result
/// handle, also when an audit failed; the status then is `AuditFailed`.
///
/// # Safety
/// `cfg` must be a live config handle and `out` valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn meshpdr_run(cfg: *const MeshpdrConfig, out: *mut *mut MeshpdrResult) -> MeshpdrStatus {
    if cfg.is_null() || out.is_null() {
        return fail(MeshpdrStatus::NullArgument, "config or output pointer is null");
    }
    *out = ptr::null_mut();
    guard(|| {
        let cfg = &(*cfg).inner;
        match pipeline::run(cfg) {
            Ok(o) => {
                let passed = o.report.audits.passed;
                let json = serde_json::to_string(&o.report).expect("report serializes");
                *out = Box::into_raw(Box::new(MeshpdrResult { out: o, json }));
                if passed {
                    MeshpdrStatus::Ok
                } else {
                    fail(MeshpdrStatus::AuditFailed, "run finished but an audit failed")
                }
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `res` must be null or come from [`meshpdr_run`] and not be freed yet.
#[no_mangle]
pub unsafe extern "C" fn meshpdr_result_free(res: *mut MeshpdrResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// # Safety
/// `res` must be a live result handle and `counts` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn meshpdr_result_counts(res: *const MeshpdrResult, counts: *mut MeshpdrCounts) -> MeshpdrStatus {
    if res.is_null() || counts.is_null() {
        return fail(MeshpdrStatus::NullArgument, "result or counts pointer is null");
    }
    let r = &(*res).out.report;
    *counts = MeshpdrCounts {
        vertices: r.vertices as u64,
        elements: r.elements as u64,
        kept_elements: r.kept_elements as u64,
        insertions: r.refine.insertions,
        wall_secs: r.wall_secs,
        idle_fraction: r.averages.idle_fraction,
        sliver_fraction: r.quality.sliver_fraction,
        audits_passed: r.audits.passed as u8,
    };
    MeshpdrStatus::Ok
}

/// The run report as JSON (not NUL-terminated).
///
/// # Safety
/// `res` must be a live result handle, `buf` null or valid for `len` bytes,
/// `needed` null or valid for one write.
#[no_mangle]
pub unsafe extern "C" fn meshpdr_result_report_json(
    res: *const MeshpdrResult,
    buf: *mut u8,
    len: usize,
    needed: *mut usize,
) -> MeshpdrStatus {
    if res.is_null() {
        return fail(MeshpdrStatus::NullArgument, "result handle is null");
    }
    fill((*res).json.as_bytes(), buf, len, needed)
}

/// Canonical pack of the final mesh, the same bytes `run --dump-mesh` writes.
///
/// # Safety
/// As for [`meshpdr_result_report_json`].
#[no_mangle]
pub unsafe extern "C" fn meshpdr_result_dump(
    res: *const MeshpdrResult,
    buf: *mut u8,
    len: usize,
    needed: *mut usize,
) -> MeshpdrStatus {
    if res.is_null() {
        return fail(MeshpdrStatus::NullArgument, "result handle is null");
    }
    guard(|| fill(&(*res).out.dump(), buf, len, needed))
}

/// Audits a mesh dump: adjacency, Delaunay (all pairs when `brute` is
/// nonzero, interior facets otherwise). `violations` receives the count.
///
/// # Safety
/// `bytes` must be valid for `len` bytes and `violations` for one write.
#[no_mangle]
pub unsafe extern "C" fn meshpdr_audit_dump(
    bytes: *const u8,
    len: usize,
    brute: u8,
    violations: *mut u64,
) -> MeshpdrStatus {
    if bytes.is_null() || violations.is_null() {
        return fail(MeshpdrStatus::NullArgument, "dump or output pointer is null");
    }
    guard(|| {
        let data = std::slice::from_raw_parts(bytes, len);
        let sub = match pack::unpack(data) {
            Ok(s) => s,
            Err(e) => return fail(MeshpdrStatus::InvalidArgument, e.to_string()),
        };
        let a = audit_mesh(&sub.mesh, brute != 0);
        *violations = (a.topology.len() + a.delaunay.len()) as u64;
        if a.passed() {
            MeshpdrStatus::Ok
        } else {
            let first = a.topology.iter().chain(&a.delaunay).next().map(|v| v.to_string());
            fail(MeshpdrStatus::AuditFailed, first.unwrap_or_default())
        }
    })
}
