//! C ABI for kvplm.
//!
//! Every fallible function returns a [`KvplmStatus`]. On failure the message
//! is kept per thread and can be read with [`kvplm_last_error_message`].
//! Models are opaque [`KvplmModel`] handles released with
//! [`kvplm_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use kvplm::corpus::{EncodedCorpus, Split};
use kvplm::eval::{attention_profile, perplexity};
use kvplm::models::{count_params, load_checkpoint, match_hidden_size, save_checkpoint, Model, ModelConfig, Variant};
use kvplm::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KvplmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Format = 5,
    Shape = 6,
    InsufficientData = 7,
    NonFinite = 8,
    Unsupported = 9,
    Panic = 10,
}

/// Model variant codes accepted by the constructors.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KvplmVariant {
    Lstm = 0,
    Attention = 1,
    KeyValue = 2,
    KeyValuePredict = 3,
    Ngram = 4,
}

/// Opaque model handle.
pub struct KvplmModel {
    inner: Model<f64>,
}

/// Shape of a model. `variant` holds a [`KvplmVariant`] code; `window` is
/// ignored by non-attentive variants and `order` by everything except the
/// n-gram variant.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct KvplmConfig {
    pub variant: u32,
    pub embed_dim: usize,
    pub hidden: usize,
    pub window: usize,
    pub order: usize,
    pub vocab_size: usize,
}

/// Parameter counts; `model` leaves out the input embeddings.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct KvplmParamCount {
    pub model: u64,
    pub with_embeddings: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> KvplmStatus {
    match err {
        Error::InvalidArgument(_) => KvplmStatus::InvalidArgument,
        Error::Config(_) => KvplmStatus::Config,
        Error::Io { .. } => KvplmStatus::Io,
        Error::Parse { .. } | Error::Format { .. } => KvplmStatus::Format,
        Error::Shape { .. } => KvplmStatus::Shape,
        Error::InsufficientData(_) => KvplmStatus::InsufficientData,
        Error::NonFinite(_) => KvplmStatus::NonFinite,
        Error::Unsupported(_) => KvplmStatus::Unsupported,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> KvplmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            KvplmStatus::Ok
        }
        Ok(Err(Failure::Null(name))) => {
            set_last_error(format!("null pointer passed as `{name}`"));
            KvplmStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            KvplmStatus::Panic
        }
    }
}

fn non_null<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Failure> {
    // SAFETY: callers pass either null or a pointer valid for reads of T.
    unsafe { p.as_ref() }.ok_or(Failure::Null(name))
}

fn out<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Failure> {
    // SAFETY: callers pass either null or a pointer valid for writes of T.
    unsafe { p.as_mut() }.ok_or(Failure::Null(name))
}

fn path_arg(p: *const c_char, name: &'static str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    // SAFETY: non-null and documented as a NUL-terminated string.
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Error::InvalidArgument(format!("`{name}` is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

fn model_config(c: &KvplmConfig) -> Result<ModelConfig, Failure> {
    let variant = u8::try_from(c.variant)
        .ok()
        .and_then(Variant::from_tag)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown variant code {}", c.variant)))?;
    let window = if variant.is_attentive() { c.window } else { 0 };
    let order = if variant == Variant::Ngram { c.order } else { 0 };
    Ok(ModelConfig::new(variant, c.embed_dim, c.hidden, c.vocab_size)
        .with_window(window)
        .with_order(order))
}

/// Message for the last failed call on this thread, or null if the last call
/// succeeded. Valid until the next kvplm call on the same thread.
#[no_mangle]
pub extern "C" fn kvplm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn kvplm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Exact parameter counts for `config`.
///
/// # Safety
/// `config` must be readable and `out_count` writable, or null.
#[no_mangle]
pub unsafe extern "C" fn kvplm_count_params(
    config: *const KvplmConfig,
    out_count: *mut KvplmParamCount,
) -> KvplmStatus {
    guard(|| {
        let cfg = model_config(non_null(config, "config")?)?;
        let slot = out(out_count, "out_count")?;
        cfg.validate()?;
        let c = count_params(&cfg);
        *slot = KvplmParamCount {
            model: c.model as u64,
            with_embeddings: c.with_embeddings as u64,
        };
        Ok(())
    })
}

/// Hidden size whose model-parameter count is nearest `budget`; ties go to
/// the smaller size. `config.hidden` is ignored.
///
/// # Safety
/// `config` must be readable and `out_hidden` writable, or null.
#[no_mangle]
pub unsafe extern "C" fn kvplm_match_hidden_size(
    config: *const KvplmConfig,
    budget: f64,
    out_hidden: *mut usize,
) -> KvplmStatus {
    guard(|| {
        let cfg = model_config(non_null(config, "config")?)?;
        let slot = out(out_hidden, "out_hidden")?;
        *slot = match_hidden_size(&cfg, budget)?.hidden;
        Ok(())
    })
}

/// Fresh randomly initialised model.
///
/// # Safety
/// `config` must be readable and `out_model` writable, or null.
#[no_mangle]
pub unsafe extern "C" fn kvplm_model_init(
    config: *const KvplmConfig,
    seed: u64,
    out_model: *mut *mut KvplmModel,
) -> KvplmStatus {
    guard(|| {
        let cfg = model_config(non_null(config, "config")?)?;
        let slot = out(out_model, "out_model")?;
        let inner = Model::init(cfg, seed)?;
        *slot = Box::into_raw(Box::new(KvplmModel { inner }));
        Ok(())
    })
}

/// Loads a checkpoint written by the trainer.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out_model` writable, or null.
#[no_mangle]
pub unsafe extern "C" fn kvplm_model_load(path: *const c_char, out_model: *mut *mut KvplmModel) -> KvplmStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let slot = out(out_model, "out_model")?;
        let inner = load_checkpoint(&path)?.into_model()?;
        *slot = Box::into_raw(Box::new(KvplmModel { inner }));
        Ok(())
    })
}

/// Writes `model` as a checkpoint.
///
/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn kvplm_model_save(model: *const KvplmModel, path: *const c_char) -> KvplmStatus {
    guard(|| {
        let model = non_null(model, "model")?;
        let path = path_arg(path, "path")?;
        save_checkpoint(&model.inner, &path)?;
        Ok(())
    })
}

/// Releases a model. Null is accepted.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn kvplm_model_free(model: *mut KvplmModel) {
    if !model.is_null() {
        // SAFETY: produced by Box::into_raw in this crate.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Copies the model's configuration.
///
/// # Safety
/// `model` must come from this library and `out_config` be writable.
#[no_mangle]
pub unsafe extern "C" fn kvplm_model_config(model: *const KvplmModel, out_config: *mut KvplmConfig) -> KvplmStatus {
    guard(|| {
        let cfg = non_null(model, "model")?.inner.config();
        let slot = out(out_config, "out_config")?;
        *slot = KvplmConfig {
            variant: u32::from(cfg.variant.tag()),
            embed_dim: cfg.embed_dim,
            hidden: cfg.hidden,
            window: cfg.window,
            order: cfg.order,
            vocab_size: cfg.vocab_size,
        };
        Ok(())
    })
}

fn corpus_from_raw(
    ids: *const u32,
    len: usize,
    starts: *const usize,
    n_starts: usize,
) -> Result<EncodedCorpus, Failure> {
    if ids.is_null() && len > 0 {
        return Err(Failure::Null("ids"));
    }
    if starts.is_null() && n_starts > 0 {
        return Err(Failure::Null("article_starts"));
    }
    // SAFETY: non-null pointers are documented as valid for the given lengths.
    let ids = if len == 0 { &[][..] } else { unsafe { std::slice::from_raw_parts(ids, len) } };
    let starts = if n_starts == 0 {
        &[][..]
    } else {
        unsafe { std::slice::from_raw_parts(starts, n_starts) }
    };
    Ok(EncodedCorpus::new(ids.to_vec(), starts.to_vec(), Split::Test)?)
}

/// Perplexity over token ids. `article_starts` lists the first index of each
/// article (it may be null when `n_starts` is 0, meaning one article).
/// Each article is scored from a fresh state.
///
/// # Safety
/// `ids` must hold `len` values and `article_starts` `n_starts` values.
#[no_mangle]
pub unsafe extern "C" fn kvplm_model_perplexity(
    model: *const KvplmModel,
    ids: *const u32,
    len: usize,
    article_starts: *const usize,
    n_starts: usize,
    lanes: usize,
    out_perplexity: *mut f64,
) -> KvplmStatus {
    guard(|| {
        let model = non_null(model, "model")?;
        let slot = out(out_perplexity, "out_perplexity")?;
        let corpus = corpus_from_raw(ids, len, article_starts, n_starts)?;
        *slot = perplexity(&model.inner, &corpus, lanes)?.perplexity;
        Ok(())
    })
}

/// Perplexity over an encoded corpus file.
///
/// # Safety
/// `path` must be NUL-terminated and `out_perplexity` writable.
#[no_mangle]
pub unsafe extern "C" fn kvplm_model_perplexity_file(
    model: *const KvplmModel,
    path: *const c_char,
    lanes: usize,
    out_perplexity: *mut f64,
) -> KvplmStatus {
    guard(|| {
        let model = non_null(model, "model")?;
        let path = path_arg(path, "path")?;
        let slot = out(out_perplexity, "out_perplexity")?;
        let corpus = EncodedCorpus::read(&path)?;
        *slot = perplexity(&model.inner, &corpus, lanes)?.perplexity;
        Ok(())
    })
}

/// Mean attention weight per memory position, oldest first, written to
/// `out_weights` which must hold `window` values.
///
/// # Safety
/// Same as [`kvplm_model_perplexity`]; `out_weights` must hold `capacity`
/// values.
#[no_mangle]
pub unsafe extern "C" fn kvplm_model_attention_profile(
    model: *const KvplmModel,
    ids: *const u32,
    len: usize,
    article_starts: *const usize,
    n_starts: usize,
    lanes: usize,
    out_weights: *mut f64,
    capacity: usize,
) -> KvplmStatus {
    guard(|| {
        let model = non_null(model, "model")?;
        if out_weights.is_null() {
            return Err(Failure::Null("out_weights"));
        }
        let corpus = corpus_from_raw(ids, len, article_starts, n_starts)?;
        let profile = attention_profile(&model.inner, &corpus, lanes)?;
        if capacity < profile.len() {
            return Err(Error::InvalidArgument(format!(
                "output buffer holds {capacity} values, the profile has {}",
                profile.len()
            ))
            .into());
        }
        // SAFETY: checked non-null; caller guarantees `capacity` slots.
        unsafe { std::slice::from_raw_parts_mut(out_weights, profile.len()) }.copy_from_slice(&profile);
        Ok(())
    })
}
