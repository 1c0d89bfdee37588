//! C ABI over the blocking engine.
//!
//! Objects cross the boundary as opaque handles created by `sb_*_load`,
//! `sb_*_train` or `sb_block` and released with the matching `sb_*_free`.
//! Every fallible call returns an [`SbStatus`]; on failure the message is
//! available from [`sb_last_error_message`] on the same thread until the
//! next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use sigblock::blocking::{block_with_signatures, check_schema, compute_signatures, CandidateSet};
use sigblock::config::RunConfig;
use sigblock::data::{load_labels, Dataset, InputFormat};
use sigblock::model::SignatureModel;
use sigblock::training::train;
use sigblock::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    SchemaMismatch = 5,
    Config = 6,
    Data = 7,
    Panic = 8,
}

/// Loaded records.
pub struct SbDataset(Dataset);

/// Trained signature model.
pub struct SbModel(SignatureModel);

/// Candidate pairs, sorted by id.
pub struct SbCandidates {
    set: CandidateSet,
    rows: Vec<(CString, CString, i32, f64)>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> SbStatus {
    match err {
        Error::Io { .. } => SbStatus::Io,
        Error::Format(_) => SbStatus::Format,
        Error::SchemaMismatch(_) => SbStatus::SchemaMismatch,
        Error::Config(_) => SbStatus::Config,
        Error::InvalidArgument(_) => SbStatus::InvalidArgument,
        _ => SbStatus::Data,
    }
}

struct Failure(SbStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SbStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            SbStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(SbStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SbStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(Some)
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<T>(p: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(value);
    Ok(())
}

fn format_of(path: &str) -> Result<InputFormat, Failure> {
    InputFormat::from_path(path.as_ref()).ok_or_else(|| {
        Failure(
            SbStatus::InvalidArgument,
            format!("cannot infer the format of {path} (expected .csv, .tsv or .jsonl)"),
        )
    })
}

fn config_from(toml: Option<&str>) -> Result<RunConfig, Failure> {
    let cfg = match toml {
        Some(t) => RunConfig::from_toml(t)?,
        None => RunConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Message for the last failing call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a single table (self-join mode). `right_path` may be null; when
/// given, the dataset is bipartite. `id_column` may be null for `id`.
///
/// # Safety
/// String arguments must be NUL-terminated or null where allowed; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn sb_dataset_load(
    path: *const c_char,
    right_path: *const c_char,
    id_column: *const c_char,
    out_dataset: *mut *mut SbDataset,
) -> SbStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let right = opt_str_arg(right_path, "right_path")?;
        let id = opt_str_arg(id_column, "id_column")?.unwrap_or("id");
        let mut cfg = RunConfig::default();
        cfg.data.input = Some(PathBuf::from(path));
        cfg.data.format = Some(format_of(path)?);
        cfg.data.id_column = id.to_owned();
        if let Some(r) = right {
            format_of(r)?;
            cfg.data.right = Some(PathBuf::from(r));
        }
        let ds = cfg.load_dataset()?;
        out(out_dataset, Box::into_raw(Box::new(SbDataset(ds))), "out_dataset")
    })
}

/// Number of records, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sb_dataset_len(dataset: *const SbDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.n())
}

/// # Safety
/// `dataset` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sb_dataset_free(dataset: *mut SbDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Reads a model file.
///
/// # Safety
/// `path` must be NUL-terminated; `out_model` writable.
#[no_mangle]
pub unsafe extern "C" fn sb_model_load(path: *const c_char, out_model: *mut *mut SbModel) -> SbStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let m = SignatureModel::load(path.as_ref())?;
        out(out_model, Box::into_raw(Box::new(SbModel(m))), "out_model")
    })
}

/// Trains on `dataset` with the labeled pairs in `labels_path`.
/// `config_toml` holds a run configuration in TOML, or null for defaults.
///
/// # Safety
/// Handles must be live; strings NUL-terminated or null where allowed.
#[no_mangle]
pub unsafe extern "C" fn sb_model_train(
    dataset: *const SbDataset,
    labels_path: *const c_char,
    config_toml: *const c_char,
    out_model: *mut *mut SbModel,
) -> SbStatus {
    guard(|| {
        let ds = &handle(dataset, "dataset")?.0;
        let labels_path = str_arg(labels_path, "labels_path")?;
        let cfg = config_from(opt_str_arg(config_toml, "config_toml")?)?;
        let labels = load_labels(labels_path.as_ref(), ds)?;
        let m = train(ds, &labels, cfg.initial_embedding()?, &cfg.encoder, &cfg.training)?;
        out(out_model, Box::into_raw(Box::new(SbModel(m))), "out_model")
    })
}

/// # Safety
/// `model` must be live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sb_model_save(model: *const SbModel, path: *const c_char) -> SbStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        m.save(str_arg(path, "path")?.as_ref())?;
        Ok(())
    })
}

/// Number of learned signatures, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn sb_model_signature_count(model: *const SbModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.signature_count())
}

/// Maximum signature cosine between records `i` and `j` of `dataset`.
///
/// # Safety
/// Handles must be live; `out_similarity` writable.
#[no_mangle]
pub unsafe extern "C" fn sb_model_similarity(
    model: *const SbModel,
    dataset: *const SbDataset,
    i: usize,
    j: usize,
    out_similarity: *mut f64,
) -> SbStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        let ds = &handle(dataset, "dataset")?.0;
        check_schema(ds, m)?;
        if i >= ds.n() || j >= ds.n() {
            return Err(Failure(
                SbStatus::InvalidArgument,
                format!("record index out of range (n = {})", ds.n()),
            ));
        }
        out(
            out_similarity,
            m.tuple_similarity(ds.tuple(i), ds.tuple(j)),
            "out_similarity",
        )
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sb_model_free(model: *mut SbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Candidate pairs at cosine threshold `theta` (0 < theta < 1) with the
/// default index parameters. `max_results` of 0 selects the default cap.
///
/// # Safety
/// Handles must be live; `out_candidates` writable.
#[no_mangle]
pub unsafe extern "C" fn sb_block(
    model: *const SbModel,
    dataset: *const SbDataset,
    theta: f64,
    max_results: usize,
    out_candidates: *mut *mut SbCandidates,
) -> SbStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        let ds = &handle(dataset, "dataset")?.0;
        check_schema(ds, m)?;
        let sigs = compute_signatures(m, ds);
        let cap = (max_results > 0).then_some(max_results);
        let set = block_with_signatures(ds, &sigs, theta, &Default::default(), cap)?;
        let rows = set
            .iter()
            .map(|((a, b), p)| {
                let c = |s: &str| CString::new(s).expect("record ids hold no NUL");
                let (sig, cos) = p.map_or((-1, f64::NAN), |p| (p.signature as i32, p.cosine));
                (c(a), c(b), sig, cos)
            })
            .collect();
        out(
            out_candidates,
            Box::into_raw(Box::new(SbCandidates { set, rows })),
            "out_candidates",
        )
    })
}

/// # Safety
/// `candidates` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn sb_candidates_len(candidates: *const SbCandidates) -> usize {
    candidates.as_ref().map_or(0, |c| c.rows.len())
}

/// Pair `index`. The id strings belong to the handle and live until it is
/// freed. `signature` is -1 and `cosine` NaN when provenance is unknown.
///
/// # Safety
/// `candidates` must be live; out pointers writable.
#[no_mangle]
pub unsafe extern "C" fn sb_candidates_get(
    candidates: *const SbCandidates,
    index: usize,
    out_id_a: *mut *const c_char,
    out_id_b: *mut *const c_char,
    out_signature: *mut i32,
    out_cosine: *mut f64,
) -> SbStatus {
    guard(|| {
        let c = handle(candidates, "candidates")?;
        let (a, b, s, cos) = c.rows.get(index).ok_or_else(|| {
            Failure(
                SbStatus::InvalidArgument,
                format!("pair index {index} out of range (len = {})", c.rows.len()),
            )
        })?;
        out(out_id_a, a.as_ptr(), "out_id_a")?;
        out(out_id_b, b.as_ptr(), "out_id_b")?;
        out(out_signature, *s, "out_signature")?;
        out(out_cosine, *cos, "out_cosine")
    })
}

/// Writes the pairs as CSV (`id_a,id_b,signature_id,cosine`).
///
/// # Safety
/// `candidates` must be live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sb_candidates_write_csv(candidates: *const SbCandidates, path: *const c_char) -> SbStatus {
    guard(|| {
        let c = handle(candidates, "candidates")?;
        c.set.save(str_arg(path, "path")?.as_ref())?;
        Ok(())
    })
}

/// # Safety
/// `candidates` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sb_candidates_free(candidates: *mut SbCandidates) {
    if !candidates.is_null() {
        drop(Box::from_raw(candidates));
    }
}
