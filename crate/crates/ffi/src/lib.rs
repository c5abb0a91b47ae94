//! C ABI over the `dpc` engine.
//!
//! Every fallible call returns a [`DpcStatus`]; on failure a message is
//! available from [`dpc_last_error`] on the same thread. Handles are opaque
//! and must be released with their `_free` function. An engine may be
//! shared by many streams across threads; a stream must not be used from
//! two threads at once.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use dpc::config::RunConfig;
use dpc::engine::{Engine, Stream};
use dpc::weights::WeightContainer;
use dpc::Error;

/// Result codes shared by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Config = 4,
    Weights = 5,
    Shape = 6,
    BufferTooSmall = 7,
    Signal = 8,
    Panic = 9,
}

/// Shared, immutable inference engine.
pub struct DpcEngine {
    inner: Arc<Engine>,
}

/// Per-stream state bound to one engine.
pub struct DpcStream {
    inner: Stream,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn status_of(e: &Error) -> DpcStatus {
    match e {
        Error::Io { .. } | Error::Wav { .. } | Error::UnsupportedAudio(_) => DpcStatus::Io,
        Error::InvalidConfig(_) | Error::Json(_) => DpcStatus::Config,
        Error::WeightMismatch(_)
        | Error::BadMagic
        | Error::UnsupportedVersion(_)
        | Error::UnsupportedDtype(_)
        | Error::TruncatedTensor(_)
        | Error::TruncatedFile
        | Error::DuplicateTensor(_) => DpcStatus::Weights,
        Error::ShapeMismatch(_) | Error::EmptyInput(_) => DpcStatus::Shape,
        Error::ZeroReference | Error::TooShort(_) | Error::SilentComponent(_) => DpcStatus::Signal,
        _ => DpcStatus::InvalidArgument,
    }
}

struct Fail(DpcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DpcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DpcStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            DpcStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(DpcStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn cstr<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(DpcStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

unsafe fn samples<'a>(p: *const f32, len: usize, what: &str) -> Result<&'a [f32], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn samples_mut<'a>(p: *mut f32, len: usize, what: &str) -> Result<&'a mut [f32], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn dpc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dpc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

fn run_config(json: &str) -> Result<RunConfig, Fail> {
    Ok(RunConfig::from_json(json)?)
}

fn make_engine(cfg: RunConfig, weights_path: &str, out: *mut *mut DpcEngine) -> Result<(), Fail> {
    let w = WeightContainer::load(weights_path)?;
    let engine = Engine::new(&cfg, &w)?;
    let h = Box::new(DpcEngine {
        inner: Arc::new(engine),
    });
    // SAFETY: caller checked `out` for null.
    unsafe { *out = Box::into_raw(h) };
    Ok(())
}

/// Creates an engine from a JSON run configuration (null selects the
/// defaults) and a weight container file.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpc_engine_new(
    config_json: *const c_char,
    weights_path: *const c_char,
    out: *mut *mut DpcEngine,
) -> DpcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = if config_json.is_null() {
            RunConfig::default()
        } else {
            run_config(cstr(config_json, "config_json")?)?
        };
        make_engine(cfg, cstr(weights_path, "weights_path")?, out)
    })
}

/// Creates an engine from a named preset such as `dualpath-2x4`.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpc_engine_new_preset(
    preset: *const c_char,
    weights_path: *const c_char,
    out: *mut *mut DpcEngine,
) -> DpcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = RunConfig::preset(cstr(preset, "preset")?)?;
        make_engine(cfg, cstr(weights_path, "weights_path")?, out)
    })
}

/// Releases an engine. Streams created from it stay valid.
///
/// # Safety
/// `engine` must come from `dpc_engine_new*` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dpc_engine_free(engine: *mut DpcEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Samples per STFT hop, the natural streaming chunk.
///
/// # Safety
/// `engine` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn dpc_engine_hop(engine: *const DpcEngine) -> usize {
    engine.as_ref().map_or(0, |e| e.inner.stft.hop)
}

/// Whole-signal enhancement; writes `len` samples to `out`.
///
/// # Safety
/// `mic`, `reference` and `out` must each hold `len` floats.
#[no_mangle]
pub unsafe extern "C" fn dpc_engine_enhance(
    engine: *const DpcEngine,
    mic: *const f32,
    reference: *const f32,
    len: usize,
    out: *mut f32,
) -> DpcStatus {
    guard(|| {
        let e = engine.as_ref().ok_or_else(|| null("engine"))?;
        let d = samples(mic, len, "mic")?;
        let x = samples(reference, len, "reference")?;
        let o = samples_mut(out, len, "out")?;
        o.copy_from_slice(&e.inner.enhance(d, x)?);
        Ok(())
    })
}

/// Opens a stream on `engine`.
///
/// # Safety
/// `engine` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpc_stream_new(engine: *const DpcEngine, out: *mut *mut DpcStream) -> DpcStatus {
    guard(|| {
        let e = engine.as_ref().ok_or_else(|| null("engine"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let s = Stream::new(Arc::clone(&e.inner))?;
        *out = Box::into_raw(Box::new(DpcStream { inner: s }));
        Ok(())
    })
}

/// Output capacity that always suffices for a `len`-sample push or for
/// the flush.
///
/// # Safety
/// `stream` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn dpc_stream_output_bound(stream: *const DpcStream, len: usize) -> usize {
    stream.as_ref().map_or(0, |s| {
        let stft = &s.inner.engine().stft;
        len + stft.window_len + stft.hop
    })
}

/// Feeds `len` samples of each signal; writes every finished output sample
/// to `out` and its count to `out_len`. Fails without consuming input if
/// `out_cap` is below [`dpc_stream_output_bound`].
///
/// # Safety
/// `mic`/`reference` hold `len` floats, `out` holds `out_cap` floats.
#[no_mangle]
pub unsafe extern "C" fn dpc_stream_process(
    stream: *mut DpcStream,
    mic: *const f32,
    reference: *const f32,
    len: usize,
    out: *mut f32,
    out_cap: usize,
    out_len: *mut usize,
) -> DpcStatus {
    guard(|| {
        let bound = dpc_stream_output_bound(stream, len);
        let s = stream.as_mut().ok_or_else(|| null("stream"))?;
        if out_len.is_null() {
            return Err(null("out_len"));
        }
        if out_cap < bound {
            return Err(Fail(
                DpcStatus::BufferTooSmall,
                format!("output capacity {out_cap} is below {bound}"),
            ));
        }
        let d = samples(mic, len, "mic")?;
        let x = samples(reference, len, "reference")?;
        let o = samples_mut(out, out_cap, "out")?;
        let y = s.inner.push(d, x)?;
        o[..y.len()].copy_from_slice(&y);
        *out_len = y.len();
        Ok(())
    })
}

/// Drains the stream so that total output equals total input, then
/// resets it for reuse.
///
/// # Safety
/// `out` holds `out_cap` floats; `out_len` is writable.
#[no_mangle]
pub unsafe extern "C" fn dpc_stream_flush(
    stream: *mut DpcStream,
    out: *mut f32,
    out_cap: usize,
    out_len: *mut usize,
) -> DpcStatus {
    guard(|| {
        let bound = dpc_stream_output_bound(stream, 0);
        let s = stream.as_mut().ok_or_else(|| null("stream"))?;
        if out_len.is_null() {
            return Err(null("out_len"));
        }
        if out_cap < bound {
            return Err(Fail(
                DpcStatus::BufferTooSmall,
                format!("output capacity {out_cap} is below {bound}"),
            ));
        }
        let o = samples_mut(out, out_cap, "out")?;
        let y = s.inner.finish()?;
        o[..y.len()].copy_from_slice(&y);
        *out_len = y.len();
        Ok(())
    })
}

/// Discards all buffered audio and recurrent state.
///
/// # Safety
/// `stream` must be live.
#[no_mangle]
pub unsafe extern "C" fn dpc_stream_reset(stream: *mut DpcStream) -> DpcStatus {
    guard(|| {
        let s = stream.as_mut().ok_or_else(|| null("stream"))?;
        s.inner.reset()?;
        Ok(())
    })
}

/// # Safety
/// `stream` must come from [`dpc_stream_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dpc_stream_free(stream: *mut DpcStream) {
    if !stream.is_null() {
        drop(Box::from_raw(stream));
    }
}

/// Complexity report of a configuration as a JSON string; release it with
/// [`dpc_string_free`]. Null `config_json` selects the defaults.
///
/// # Safety
/// `config_json` is NUL-terminated or null; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn dpc_profile_json(config_json: *const c_char, out: *mut *mut c_char) -> DpcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = if config_json.is_null() {
            RunConfig::default()
        } else {
            run_config(cstr(config_json, "config_json")?)?
        };
        let report = dpc::profiler::count(&cfg.model, &cfg.stft)?;
        *out = CString::new(report.to_json()).expect("JSON has no NUL").into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dpc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

type Metric = fn(&[f32], &[f32]) -> dpc::Result<f64>;

unsafe fn metric(f: Metric, a: *const f32, b: *const f32, len: usize, out: *mut f64) -> DpcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let v = f(samples(a, len, "a")?, samples(b, len, "b")?)?;
        *out = v;
        Ok(())
    })
}

/// Scale-invariant SNR of `est` against `reference` in dB.
///
/// # Safety
/// Both arrays hold `len` floats; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn dpc_si_snr(est: *const f32, reference: *const f32, len: usize, out: *mut f64) -> DpcStatus {
    metric(dpc::metrics::si_snr, est, reference, len, out)
}

/// Echo return loss enhancement of `output` relative to `mic` in dB.
///
/// # Safety
/// Both arrays hold `len` floats; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn dpc_erle(mic: *const f32, output: *const f32, len: usize, out: *mut f64) -> DpcStatus {
    metric(dpc::metrics::erle, mic, output, len, out)
}

/// STOI of 16 kHz `est` against `reference`.
///
/// # Safety
/// Both arrays hold `len` floats; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn dpc_stoi(est: *const f32, reference: *const f32, len: usize, out: *mut f64) -> DpcStatus {
    metric(dpc::metrics::stoi, est, reference, len, out)
}
