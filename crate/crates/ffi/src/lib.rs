//! C ABI over the OpinionXf library.
//!
//! Models are loaded from checkpoint files into an opaque `OxfModel`
//! handle. Every fallible call returns an `OxfStatus`; on failure a
//! message is available from `oxf_last_error` on the same thread until the
//! next failing call. Nothing returned to the caller needs to be freed
//! except the model handle itself.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use libc::{c_char, size_t};

use opinionxf::checkpoint::{CheckpointFile, LoadedModel};
use opinionxf::corpus::CorpusContext;
use opinionxf::evaluation::Predictor;
use opinionxf::model::Example;
use opinionxf::numerics::fft;
use opinionxf::{quantum, Error};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OxfStatus {
    Ok = 0,
    NullArgument = 1,
    Io = 2,
    Format = 3,
    InvalidInput = 4,
    Numeric = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// A loaded checkpoint.
pub struct OxfModel {
    context: CorpusContext,
    model: LoadedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> OxfStatus {
    match e {
        Error::Io { .. } => OxfStatus::Io,
        Error::Parse { .. } | Error::Format(_) | Error::Schema(_) => OxfStatus::Format,
        Error::Numeric(_) | Error::SpectrumIntegrity { .. } => OxfStatus::Numeric,
        _ => OxfStatus::InvalidInput,
    }
}

fn fail(status: OxfStatus, message: &str) -> OxfStatus {
    set_error(message);
    status
}

/// Run `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (OxfStatus, String)>) -> OxfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OxfStatus::Ok,
        Ok(Err((status, message))) => fail(status, &message),
        Err(_) => fail(OxfStatus::Panic, "internal panic"),
    }
}

fn lib_err(e: Error) -> (OxfStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (OxfStatus, String) {
    (OxfStatus::NullArgument, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (OxfStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (OxfStatus::InvalidInput, format!("{what} is not valid UTF-8")))
}

unsafe fn model_ref<'a>(m: *const OxfModel) -> Result<&'a OxfModel, (OxfStatus, String)> {
    m.as_ref().ok_or_else(|| null("model"))
}

/// Message for the most recent failure on this thread; empty when none.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn oxf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn oxf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Load a checkpoint file and store a new handle in `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn oxf_model_load(path: *const c_char, out: *mut *mut OxfModel) -> OxfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let file = CheckpointFile::load(Path::new(path)).map_err(lib_err)?;
        let model = file.model().map_err(lib_err)?;
        *out = Box::into_raw(Box::new(OxfModel {
            context: file.context,
            model,
        }));
        Ok(())
    })
}

/// Release a handle from `oxf_model_load`. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn oxf_model_free(model: *mut OxfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of survey questions the model predicts.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn oxf_model_num_questions(model: *const OxfModel, out: *mut size_t) -> OxfStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = m.context.vocab.num_questions();
        Ok(())
    })
}

/// Number of answer options for `question`.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn oxf_model_num_answers(
    model: *const OxfModel,
    question: size_t,
    out: *mut size_t,
) -> OxfStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if question >= m.context.vocab.num_questions() {
            return Err((OxfStatus::InvalidInput, format!("question {question} out of range")));
        }
        *out = m.context.vocab.size(question);
        Ok(())
    })
}

/// Copy the text of answer `id` of `question` into `buf` (NUL-terminated).
/// `*needed` receives the required size including the terminator; when
/// `len` is smaller the call returns `BufferTooSmall` and writes nothing.
///
/// # Safety
/// `buf` must have room for `len` bytes (it may be null when `len` is 0);
/// `needed` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oxf_model_answer_label(
    model: *const OxfModel,
    question: size_t,
    id: size_t,
    buf: *mut c_char,
    len: size_t,
    needed: *mut size_t,
) -> OxfStatus {
    guard(|| {
        let m = model_ref(model)?;
        let needed = needed.as_mut().ok_or_else(|| null("needed"))?;
        if question >= m.context.vocab.num_questions() {
            return Err((OxfStatus::InvalidInput, format!("question {question} out of range")));
        }
        let label = m.context.vocab.answer(question, id).map_err(lib_err)?;
        *needed = label.len() + 1;
        if len < label.len() + 1 {
            return Err((OxfStatus::BufferTooSmall, format!("label needs {} bytes", label.len() + 1)));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(label.as_ptr() as *const c_char, buf, label.len());
        *buf.add(label.len()) = 0;
        Ok(())
    })
}

/// Id of answer text `label` for `question`.
///
/// # Safety
/// `label` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn oxf_model_answer_id(
    model: *const OxfModel,
    question: size_t,
    label: *const c_char,
    out: *mut size_t,
) -> OxfStatus {
    guard(|| {
        let m = model_ref(model)?;
        let label = str_arg(label, "label")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if question >= m.context.vocab.num_questions() {
            return Err((OxfStatus::InvalidInput, format!("question {question} out of range")));
        }
        *out = m.context.vocab.id(question, label).map_err(lib_err)?;
        Ok(())
    })
}

/// Predict post-exposure answer ids for one participant who saw deck
/// `deck_id` and gave the pre-exposure answer ids `pre_ids[0..n]`.
/// `n` must equal the question count; `out_ids` receives `n` ids.
///
/// # Safety
/// `deck_id` must be NUL-terminated; `pre_ids` readable and `out_ids`
/// writable for `n` elements.
#[no_mangle]
pub unsafe extern "C" fn oxf_model_predict(
    model: *const OxfModel,
    deck_id: *const c_char,
    pre_ids: *const size_t,
    n: size_t,
    out_ids: *mut size_t,
) -> OxfStatus {
    guard(|| {
        let m = model_ref(model)?;
        let deck_id = str_arg(deck_id, "deck_id")?;
        if pre_ids.is_null() || out_ids.is_null() {
            return Err(null("pre_ids or out_ids"));
        }
        let q = m.context.vocab.num_questions();
        if n != q {
            return Err((OxfStatus::InvalidInput, format!("got {n} answers, model has {q} questions")));
        }
        let deck = m
            .context
            .presentations
            .get(deck_id)
            .ok_or_else(|| (OxfStatus::InvalidInput, format!("unknown deck {deck_id:?}")))?;
        let example = Example {
            pre_ids: std::slice::from_raw_parts(pre_ids, n).to_vec(),
            post_ids: Vec::new(),
            deck: deck.clone(),
            topic: String::new(),
        };
        for (question, &id) in example.pre_ids.iter().enumerate() {
            let size = m.context.vocab.size(question);
            if id >= size {
                return Err(lib_err(Error::Encoding { question, id, size }));
            }
        }
        let preds = m.model.predict_ids(&[example]).map_err(lib_err)?;
        std::slice::from_raw_parts_mut(out_ids, n).copy_from_slice(&preds[0]);
        Ok(())
    })
}

/// `<Z (x) Z>` of the two-qubit Ry-Ry-CZ circuit.
#[no_mangle]
pub extern "C" fn oxf_quantum_zz(theta1: f64, theta2: f64) -> f64 {
    quantum::circuit_expectation(theta1, theta2)
}

/// Discrete Fourier transform of `input[0..n]` into `out_re`/`out_im`.
///
/// # Safety
/// `input` readable and both outputs writable for `n` elements.
#[no_mangle]
pub unsafe extern "C" fn oxf_fft(
    input: *const f64,
    n: size_t,
    out_re: *mut f64,
    out_im: *mut f64,
) -> OxfStatus {
    guard(|| {
        if input.is_null() || out_re.is_null() || out_im.is_null() {
            return Err(null("input or output"));
        }
        let spectrum = fft(std::slice::from_raw_parts(input, n));
        let (re, im) = (
            std::slice::from_raw_parts_mut(out_re, n),
            std::slice::from_raw_parts_mut(out_im, n),
        );
        for (k, z) in spectrum.iter().enumerate() {
            re[k] = z.re;
            im[k] = z.im;
        }
        Ok(())
    })
}
