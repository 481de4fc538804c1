//! C interface: load a trained model, segment sentence pairs with it, and
//! score segmentations.
//!
//! Every fallible function returns an [`AlignsegStatus`]; on failure the
//! message is available from [`alignseg_last_error`] on the same thread.
//! Strings handed out by the library must be released with
//! [`alignseg_string_free`], models with [`alignseg_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use alignseg::corpus::{encode_corpus, parse_target_line, ParallelSentence, UnitSplitter};
use alignseg::evaluation::MetricsReport;
use alignseg::model::{Model, ModelError};
use alignseg::segmentation::{force_decode_corpus, segment_corpus, SegmentedSentence};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignsegStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    InvalidData = 4,
    Numeric = 5,
    Panic = 6,
}

/// Opaque handle to a trained model.
pub struct AlignsegModel {
    model: Model,
}

/// Boundary, token and exact-match scores, all in [0, 1].
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AlignsegScores {
    pub boundary_precision: f64,
    pub boundary_recall: f64,
    pub boundary_f: f64,
    pub token_precision: f64,
    pub token_recall: f64,
    pub token_f: f64,
    pub exact_match: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(AlignsegStatus, String);

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AlignsegStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AlignsegStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            AlignsegStatus::Panic
        }
    }
}

/// # Safety
/// `p` is null or points to a nul-terminated string.
unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(AlignsegStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(AlignsegStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn model_failure(e: ModelError) -> Failure {
    match e {
        ModelError::Io(_) => Failure(AlignsegStatus::Io, e.to_string()),
        ModelError::Grad(_) => Failure(AlignsegStatus::Numeric, e.to_string()),
        other => Failure(AlignsegStatus::InvalidData, other.to_string()),
    }
}

fn parse_segmented(text: &str) -> Vec<SegmentedSentence> {
    text.lines()
        .map(|l| {
            let (units, b) = parse_target_line(l, true, &UnitSplitter::Chars);
            SegmentedSentence::new(units, b.unwrap_or_default())
        })
        .collect()
}

/// Loads a model file written by `alignseg train`.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn alignseg_model_load(path: *const c_char, out: *mut *mut AlignsegModel) -> AlignsegStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(AlignsegStatus::NullPointer, "out is null".into()));
        }
        *out = ptr::null_mut();
        let path = read_str(path, "path")?;
        let model = Model::load(Path::new(path)).map_err(model_failure)?;
        *out = Box::into_raw(Box::new(AlignsegModel { model }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`alignseg_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn alignseg_model_free(model: *mut AlignsegModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Force-decodes one sentence pair and writes the segmented target line
/// (units joined, words separated by single spaces) to `out`.
///
/// Spaces in `target` are ignored. Symbols unknown to the model are
/// decoded as the unknown token.
///
/// # Safety
/// `model` must be a live handle, `source` and `target` nul-terminated
/// strings, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn alignseg_segment(
    model: *const AlignsegModel,
    source: *const c_char,
    target: *const c_char,
    out: *mut *mut c_char,
) -> AlignsegStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            return Err(Failure(AlignsegStatus::NullPointer, "model or out is null".into()));
        }
        *out = ptr::null_mut();
        let m = &(*model).model;
        let source = read_str(source, "source")?;
        let target = read_str(target, "target")?;
        let source_words: Vec<String> = source.split_whitespace().map(String::from).collect();
        let (target_units, _) = parse_target_line(target, false, &UnitSplitter::Chars);
        if source_words.is_empty() || target_units.is_empty() {
            return Err(Failure(AlignsegStatus::InvalidData, "empty source or target".into()));
        }
        let sentence = ParallelSentence {
            source_words,
            target_units,
            gold_boundaries: None,
        };
        let enc = encode_corpus(std::slice::from_ref(&sentence), &m.source_vocab, &m.target_vocab);
        let matrices = force_decode_corpus(&enc.pairs, &m.params, &m.hp)
            .map_err(|e| Failure(AlignsegStatus::Numeric, e.to_string()))?;
        let seg = segment_corpus(std::slice::from_ref(&sentence.target_units), &matrices)
            .map_err(|e| Failure(AlignsegStatus::InvalidData, e.to_string()))?;
        let line = CString::new(seg[0].to_line())
            .map_err(|_| Failure(AlignsegStatus::InvalidData, "segmented line contains nul".into()))?;
        *out = line.into_raw();
        Ok(())
    })
}

/// Scores newline-separated segmented lines against a reference with the
/// same units. Units are Unicode characters; spaces mark word breaks.
///
/// # Safety
/// `predicted` and `gold` must be nul-terminated strings, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn alignseg_evaluate(
    predicted: *const c_char,
    gold: *const c_char,
    out: *mut AlignsegScores,
) -> AlignsegStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(AlignsegStatus::NullPointer, "out is null".into()));
        }
        let pred = parse_segmented(read_str(predicted, "predicted")?);
        let gold = parse_segmented(read_str(gold, "gold")?);
        let r = MetricsReport::compute(&pred, &gold).map_err(|e| Failure(AlignsegStatus::InvalidData, e.to_string()))?;
        *out = AlignsegScores {
            boundary_precision: r.boundary.precision,
            boundary_recall: r.boundary.recall,
            boundary_f: r.boundary.f,
            token_precision: r.token.precision,
            token_recall: r.token.recall,
            token_f: r.token.f,
            exact_match: r.exact,
        };
        Ok(())
    })
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn alignseg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn alignseg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version, e.g. `0.1.0`.
#[no_mangle]
pub extern "C" fn alignseg_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version string"),
    };
    VERSION.as_ptr()
}
