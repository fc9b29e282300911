//! C interface to `cellalign`.
//!
//! Every fallible function returns a [`CaStatus`]; on failure the message is
//! available from [`ca_last_error`] on the same thread. Handles are opaque
//! and must be released with their `_free` function. Strings returned to the
//! caller are released with [`ca_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cellalign::cpd::{cpd_rigid, CpdConfig};
use cellalign::evaluation::{evaluate, Transform};
use cellalign::fit::{fit_affine, fit_rigid, CorrespondenceSet};
use cellalign::io::{read_cell_table, LandmarkPair, LandmarkSet, SchemaConfig};
use cellalign::pipeline::{align, align_large, AlignmentConfig, AlignmentResult};
use cellalign::synth::{generate, SynthScenario};
use cellalign::{AffineTransform, CellTable, Error, Point2D, RigidTransform};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Config = 3,
    TooFew = 4,
    Degenerate = 5,
    Io = 6,
    Parse = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaPoint {
    pub x: f64,
    pub y: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaRigidTransform {
    pub theta_rad: f64,
    pub scale: f64,
    pub dx_um: f64,
    pub dy_um: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaAffineTransform {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
    pub tx_um: f64,
    pub ty_um: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaEvaluation {
    pub delta_d: f64,
    pub delta_t: f64,
    pub delta_theta_rad: f64,
}

/// Opaque cell table.
pub struct CaCellTable(CellTable);

/// Opaque alignment result.
pub struct CaAlignment(AlignmentResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CaStatus {
    match e {
        Error::Config(_) => CaStatus::Config,
        Error::Io { .. } => CaStatus::Io,
        Error::ParseError { .. } | Error::Json(_) | Error::SchemaError { .. } => CaStatus::Parse,
        Error::TooFewLandmarks { .. }
        | Error::TooFewPoints { .. }
        | Error::TooFewPairs { .. }
        | Error::TooFewCells { .. }
        | Error::EmptyInput(_) => CaStatus::TooFew,
        Error::SingularTransform { .. }
        | Error::DegenerateAffinity
        | Error::DegenerateConfiguration(_)
        | Error::NoDenseRegion { .. }
        | Error::WindowsEmpty { .. }
        | Error::UndefinedCorrelation(_) => CaStatus::Degenerate,
        _ => CaStatus::InvalidInput,
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), CaFailure>) -> CaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CaStatus::Ok
        }
        Ok(Err(CaFailure::Null(what))) => {
            set_error(format!("NullPointer: `{what}` is null"));
            CaStatus::NullPointer
        }
        Ok(Err(CaFailure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("Panic: {msg}"));
            CaStatus::Panic
        }
    }
}

enum CaFailure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for CaFailure {
    fn from(e: Error) -> Self {
        CaFailure::Lib(e)
    }
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &'static str) -> Result<&'a [T], CaFailure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(CaFailure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, CaFailure> {
    p.as_mut().ok_or(CaFailure::Null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, CaFailure> {
    p.as_ref().ok_or(CaFailure::Null(what))
}

/// Parses optional JSON; a null pointer gives the default.
unsafe fn json_or_default<T: serde::de::DeserializeOwned + Default>(
    p: *const c_char,
) -> Result<T, CaFailure> {
    if p.is_null() {
        return Ok(T::default());
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::InvalidInput("JSON string is not UTF-8".into()))?;
    Ok(serde_json::from_str(s).map_err(Error::from)?)
}

fn points(p: &[CaPoint]) -> Vec<Point2D> {
    p.iter().map(|q| Point2D::new(q.x, q.y)).collect()
}

impl From<RigidTransform> for CaRigidTransform {
    fn from(t: RigidTransform) -> Self {
        Self {
            theta_rad: t.theta(),
            scale: t.scale(),
            dx_um: t.dx(),
            dy_um: t.dy(),
        }
    }
}

impl From<AffineTransform> for CaAffineTransform {
    fn from(a: AffineTransform) -> Self {
        Self {
            a11: a.a11,
            a12: a.a12,
            a21: a.a21,
            a22: a.a22,
            tx_um: a.tx,
            ty_um: a.ty,
        }
    }
}

impl From<CaAffineTransform> for AffineTransform {
    fn from(a: CaAffineTransform) -> Self {
        Self {
            a11: a.a11,
            a12: a.a12,
            a21: a.a21,
            a22: a.a22,
            tx: a.tx_um,
            ty: a.ty_um,
        }
    }
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .map(CString::into_raw)
        .unwrap_or(ptr::null_mut())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ca_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ca_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn ca_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Rigid CPD of `source` onto `target`. `config_json` may be null for the
/// defaults.
///
/// # Safety
/// Point arrays must hold the stated counts; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ca_cpd_rigid(
    source: *const CaPoint,
    n_source: usize,
    target: *const CaPoint,
    n_target: usize,
    config_json: *const c_char,
    out: *mut CaRigidTransform,
) -> CaStatus {
    guard(|| {
        let src = points(slice(source, n_source, "source")?);
        let tgt = points(slice(target, n_target, "target")?);
        let cfg: CpdConfig = json_or_default(config_json)?;
        let out = out_ref(out, "out")?;
        *out = cpd_rigid(&src, &tgt, &cfg)?.transform.into();
        Ok(())
    })
}

fn pairs(src: &[CaPoint], tgt: &[CaPoint]) -> Result<CorrespondenceSet, CaFailure> {
    let v = src
        .iter()
        .zip(tgt)
        .map(|(a, b)| (Point2D::new(a.x, a.y), Point2D::new(b.x, b.y)))
        .collect();
    Ok(CorrespondenceSet::new(v)?)
}

/// Least-squares rigid fit of `n` correspondences.
///
/// # Safety
/// Both arrays must hold `n` points; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ca_fit_rigid(
    source: *const CaPoint,
    target: *const CaPoint,
    n: usize,
    estimate_scale: bool,
    out: *mut CaRigidTransform,
) -> CaStatus {
    guard(|| {
        let set = pairs(slice(source, n, "source")?, slice(target, n, "target")?)?;
        let out = out_ref(out, "out")?;
        *out = fit_rigid(&set, estimate_scale)?.into();
        Ok(())
    })
}

/// Least-squares affine fit of `n` correspondences.
///
/// # Safety
/// Both arrays must hold `n` points; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ca_fit_affine(
    source: *const CaPoint,
    target: *const CaPoint,
    n: usize,
    out: *mut CaAffineTransform,
) -> CaStatus {
    guard(|| {
        let set = pairs(slice(source, n, "source")?, slice(target, n, "target")?)?;
        let out = out_ref(out, "out")?;
        *out = fit_affine(&set)?.transform.into();
        Ok(())
    })
}

/// Landmark accuracy of `estimated` against `ground_truth`.
///
/// # Safety
/// Landmark arrays must hold `n` points; transforms must be readable and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ca_evaluate(
    landmarks_source: *const CaPoint,
    landmarks_target: *const CaPoint,
    n: usize,
    estimated: *const CaAffineTransform,
    ground_truth: *const CaAffineTransform,
    out: *mut CaEvaluation,
) -> CaStatus {
    guard(|| {
        let s = slice(landmarks_source, n, "landmarks_source")?;
        let t = slice(landmarks_target, n, "landmarks_target")?;
        let lm = LandmarkSet::new(
            s.iter()
                .zip(t)
                .map(|(a, b)| LandmarkPair {
                    source: Point2D::new(a.x, a.y),
                    target: Point2D::new(b.x, b.y),
                })
                .collect(),
        )?;
        let est = Transform::Affine((*handle(estimated, "estimated")?).into());
        let gt = Transform::Affine((*handle(ground_truth, "ground_truth")?).into());
        let r = evaluate(&lm, &est, &gt)?;
        *out_ref(out, "out")? = CaEvaluation {
            delta_d: r.delta_d,
            delta_t: r.delta_t,
            delta_theta_rad: r.delta_theta,
        };
        Ok(())
    })
}

/// Reads a cell table CSV. `schema_json` may be null for the default
/// column mapping.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ca_cell_table_read(
    path: *const c_char,
    schema_json: *const c_char,
    out: *mut *mut CaCellTable,
) -> CaStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(CaFailure::Null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Error::InvalidInput("path is not UTF-8".into()))?;
        let schema: SchemaConfig = json_or_default(schema_json)?;
        *out = Box::into_raw(Box::new(CaCellTable(read_cell_table(path, &schema)?)));
        Ok(())
    })
}

/// Table of featureless cells with ids `0..n`.
///
/// # Safety
/// `points` must hold `n` points; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ca_cell_table_from_points(
    points_in: *const CaPoint,
    n: usize,
    out: *mut *mut CaCellTable,
) -> CaStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let t = CellTable::from_points(&points(slice(points_in, n, "points")?))?;
        *out = Box::into_raw(Box::new(CaCellTable(t)));
        Ok(())
    })
}

/// Number of cells; 0 for null.
///
/// # Safety
/// `table` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ca_cell_table_len(table: *const CaCellTable) -> usize {
    table.as_ref().map_or(0, |t| t.0.len())
}

/// # Safety
/// `table` must be null or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ca_cell_table_free(table: *mut CaCellTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Synthetic source/target pair from a scenario JSON (null for defaults).
///
/// # Safety
/// Output pointers must be writable; `truth` may be null.
#[no_mangle]
pub unsafe extern "C" fn ca_synth(
    scenario_json: *const c_char,
    source: *mut *mut CaCellTable,
    target: *mut *mut CaCellTable,
    truth: *mut CaRigidTransform,
) -> CaStatus {
    guard(|| {
        let src_out = out_ref(source, "source")?;
        let tgt_out = out_ref(target, "target")?;
        *src_out = ptr::null_mut();
        *tgt_out = ptr::null_mut();
        let scenario: SynthScenario = json_or_default(scenario_json)?;
        let g = generate(&scenario)?;
        if let Some(t) = truth.as_mut() {
            *t = g.truth_transform.into();
        }
        *src_out = Box::into_raw(Box::new(CaCellTable(g.source)));
        *tgt_out = Box::into_raw(Box::new(CaCellTable(g.target)));
        Ok(())
    })
}

/// Full alignment. `config_json` may be null for the defaults; a config
/// with a `supercell` entry runs the super-cell coarse stage.
///
/// # Safety
/// Tables must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ca_align(
    source: *const CaCellTable,
    target: *const CaCellTable,
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut CaAlignment,
) -> CaStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let s = &handle(source, "source")?.0;
        let t = &handle(target, "target")?.0;
        let cfg: AlignmentConfig = json_or_default(config_json)?;
        let r = if cfg.supercell.is_some() {
            align_large(s, t, &cfg, seed)?
        } else {
            align(s, t, &cfg, seed)?
        };
        *out = Box::into_raw(Box::new(CaAlignment(r)));
        Ok(())
    })
}

/// # Safety
/// `a` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ca_alignment_coarse(
    a: *const CaAlignment,
    out: *mut CaRigidTransform,
) -> CaStatus {
    guard(|| {
        *out_ref(out, "out")? = handle(a, "alignment")?.0.coarse.into();
        Ok(())
    })
}

/// # Safety
/// `a` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ca_alignment_refined(
    a: *const CaAlignment,
    out: *mut CaAffineTransform,
) -> CaStatus {
    guard(|| {
        *out_ref(out, "out")? = handle(a, "alignment")?.0.refined.into();
        Ok(())
    })
}

/// Whether refinement fell back to the coarse transform; false for null.
///
/// # Safety
/// `a` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ca_alignment_coarse_only(a: *const CaAlignment) -> bool {
    a.as_ref().is_some_and(|a| a.0.coarse_only)
}

/// Number of retained matches; 0 for null.
///
/// # Safety
/// `a` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ca_alignment_match_count(a: *const CaAlignment) -> usize {
    a.as_ref().map_or(0, |a| a.0.matches.len())
}

/// The whole result as JSON; free with [`ca_string_free`]. Null on failure.
///
/// # Safety
/// `a` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ca_alignment_to_json(a: *const CaAlignment) -> *mut c_char {
    let mut s = None;
    let status = guard(|| {
        s = Some(serde_json::to_string(&handle(a, "alignment")?.0).map_err(Error::from)?);
        Ok(())
    });
    match (status, s) {
        (CaStatus::Ok, Some(s)) => to_c_string(s),
        _ => ptr::null_mut(),
    }
}

/// # Safety
/// `a` must be null or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ca_alignment_free(a: *mut CaAlignment) {
    if !a.is_null() {
        drop(Box::from_raw(a));
    }
}
