//! C ABI over the mmsair engine.
//!
//! Conventions:
//! - every fallible call returns an [`MmsStatus`]; on failure a message is
//!   available from [`mms_last_error`] on the same thread;
//! - handles are opaque and released with their `_free` function;
//! - strings returned through `out` pointers are owned by the caller and
//!   released with [`mms_string_free`];
//! - nullable pointer arguments are documented per function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use mmsair::dataset::{label_statistics, load_dataset_with, ChatRecord, DatasetError, FieldMap, Validation};
use mmsair::encoders::{EmbeddingStore, EncodeError, Modality, ProviderKind, Providers, StoreError, ThumbnailSource};
use mmsair::harness::{self, PipelineCheckConfig, TrainConfig};
use mmsair::optim::AdamState;
use mmsair::{Checkpoint, CheckpointError, Error, Model};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Format = 4,
    InvalidArgument = 5,
    Dataset = 6,
    MissingInput = 7,
    Numeric = 8,
    Panic = 9,
}

/// A loaded, validated dataset.
pub struct MmsDataset {
    records: Vec<ChatRecord>,
    dir: PathBuf,
}

/// A trained or loaded model together with its training configuration.
pub struct MmsModel {
    config: TrainConfig,
    model: Model,
    adam: Option<AdamState>,
}

/// Where encoder inputs come from. Every field may be null. A null
/// `thumbnail_dir` means the dataset's own directory.
#[repr(C)]
pub struct MmsProviderPaths {
    pub thumbnail_dir: *const c_char,
    pub context_store: *const c_char,
    pub sticker_text_store: *const c_char,
    pub image_store: *const c_char,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(MmsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => MmsStatus::Io,
            Error::Dataset(DatasetError::Io { .. }) => MmsStatus::Io,
            Error::Dataset(_) => MmsStatus::Dataset,
            Error::Encode(EncodeError::MissingEmbedding { .. }) => MmsStatus::MissingInput,
            Error::Encode(EncodeError::Config(_)) | Error::Config(_) => MmsStatus::InvalidArgument,
            Error::Encode(EncodeError::Store(StoreError::Io { .. })) | Error::Store(StoreError::Io { .. }) => MmsStatus::Io,
            Error::Encode(EncodeError::Tensor(_)) | Error::Tensor(_) | Error::Optim(_) => MmsStatus::Numeric,
            Error::Encode(_) | Error::Store(_) | Error::Checkpoint(_) => MmsStatus::Format,
        };
        Failure(status, e.to_string())
    }
}

macro_rules! impl_failure {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Error::from(e).into()
            }
        }
    )*};
}
impl_failure!(DatasetError, EncodeError, StoreError);

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        let status = match &e {
            CheckpointError::Io { .. } => MmsStatus::Io,
            CheckpointError::Format { .. } => MmsStatus::Format,
            CheckpointError::Contract(_) => MmsStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn fail<T>(status: MmsStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MmsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MmsStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MmsStatus::Panic
        }
    }
}

unsafe fn opt_str<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        return Ok(None);
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(Some(s)),
        Err(_) => fail(MmsStatus::InvalidUtf8, format!("{what} is not valid UTF-8")),
    }
}

unsafe fn req_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    match opt_str(p, what)? {
        Some(s) => Ok(s),
        None => fail(MmsStatus::NullPointer, format!("{what} is null")),
    }
}

unsafe fn req_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().map_or_else(|| fail(MmsStatus::NullPointer, format!("{what} is null")), Ok)
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return fail(MmsStatus::NullPointer, format!("{what} is null"));
    }
    out.write(value);
    Ok(())
}

unsafe fn write_string(out: *mut *mut c_char, s: String, what: &str) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|_| Failure(MmsStatus::Format, "string contains NUL".into()))?;
    write_out(out, c.into_raw(), what)
}

unsafe fn providers(paths: *const MmsProviderPaths, config: &TrainConfig, default_dir: &Path) -> Result<Providers, Failure> {
    let (dir, ctx, st, img) = match paths.as_ref() {
        None => (None, None, None, None),
        Some(p) => (
            opt_str(p.thumbnail_dir, "thumbnail_dir")?,
            opt_str(p.context_store, "context_store")?,
            opt_str(p.sticker_text_store, "sticker_text_store")?,
            opt_str(p.image_store, "image_store")?,
        ),
    };
    let open = |path: Option<&str>, kind: ProviderKind, m: Modality, width: usize| -> Result<Option<EmbeddingStore>, Failure> {
        match (path, kind) {
            (Some(p), ProviderKind::Precomputed) => Ok(Some(EmbeddingStore::open_expecting(p, m, width)?)),
            (None, ProviderKind::Precomputed) => fail(MmsStatus::InvalidArgument, format!("{} provider is precomputed but no store path was given", m.name())),
            (_, ProviderKind::Toy) => Ok(None),
        }
    };
    Ok(Providers {
        context_store: open(ctx, config.context_provider, Modality::Context, config.d_model)?,
        sticker_text_store: open(st, config.sticker_text_provider, Modality::StickerText, config.d_model)?,
        image_store: open(img, config.image_provider, Modality::StickerImage, config.image_input_dim)?,
        thumbnails: ThumbnailSource::Dir(dir.map_or_else(|| default_dir.to_path_buf(), PathBuf::from)),
    })
}

/// Library version as a static NUL-terminated string. Do not free.
#[no_mangle]
pub extern "C" fn mms_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread. Do not free.
#[no_mangle]
pub extern "C" fn mms_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn mms_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a JSONL dataset.
///
/// `field_map` (nullable) overrides source keys, e.g. `"context=text"`.
/// With `lenient` set, class/text rule violations are logged, not fatal.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mms_dataset_load(path: *const c_char, field_map: *const c_char, lenient: bool, out: *mut *mut MmsDataset) -> MmsStatus {
    guard(|| {
        let path = req_str(path, "path")?;
        let fields = match opt_str(field_map, "field_map")? {
            Some(s) => FieldMap::parse(s)?,
            None => FieldMap::default(),
        };
        let mode = if lenient { Validation::Lenient } else { Validation::Strict };
        let records = load_dataset_with(path, &fields, mode)?;
        let dir = Path::new(path).parent().map(Path::to_path_buf).unwrap_or_default();
        write_out(out, Box::into_raw(Box::new(MmsDataset { records, dir })), "out")
    })
}

/// # Safety
/// `ds` must be a live dataset handle; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mms_dataset_len(ds: *const MmsDataset, out_len: *mut usize) -> MmsStatus {
    guard(|| write_out(out_len, req_ref(ds, "dataset")?.records.len(), "out_len"))
}

/// Label statistics as a JSON string.
///
/// # Safety
/// `ds` must be a live dataset handle; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mms_dataset_stats_json(ds: *const MmsDataset, out_json: *mut *mut c_char) -> MmsStatus {
    guard(|| {
        let report = label_statistics(&req_ref(ds, "dataset")?.records)?;
        write_string(out_json, report.to_json(), "out_json")
    })
}

/// # Safety
/// `ds` must be null or a dataset handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mms_dataset_free(ds: *mut MmsDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Trains a model.
///
/// `test` (nullable) enables per-epoch test scores in the log.
/// `config_toml` (nullable) holds training options; unset keys keep their defaults.
/// `paths` (nullable) locates thumbnails and embedding stores.
/// `out_log_jsonl` (nullable) receives the epoch log.
///
/// # Safety
/// Handles must be live; strings NUL-terminated; out pointers writable.
#[no_mangle]
pub unsafe extern "C" fn mms_train(
    train: *const MmsDataset,
    test: *const MmsDataset,
    config_toml: *const c_char,
    paths: *const MmsProviderPaths,
    out_model: *mut *mut MmsModel,
    out_log_jsonl: *mut *mut c_char,
) -> MmsStatus {
    guard(|| {
        let train = req_ref(train, "train")?;
        let config = match opt_str(config_toml, "config_toml")? {
            Some(t) => TrainConfig::from_toml_str(t)?,
            None => TrainConfig::default(),
        };
        let prov = providers(paths, &config, &train.dir)?;
        let test = test.as_ref().map(|t| t.records.as_slice());
        let outcome = harness::train(&config, &train.records, test, &prov)?;
        if !out_log_jsonl.is_null() {
            write_string(out_log_jsonl, outcome.log_jsonl(), "out_log_jsonl")?;
        }
        let handle = MmsModel {
            config: outcome.config,
            model: outcome.model,
            adam: Some(outcome.adam),
        };
        write_out(out_model, Box::into_raw(Box::new(handle)), "out_model")
    })
}

/// Writes the model (and optimizer state, if any) as a checkpoint file.
///
/// # Safety
/// `model` must be live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mms_model_save(model: *const MmsModel, path: *const c_char) -> MmsStatus {
    guard(|| {
        let m = req_ref(model, "model")?;
        let ck = Checkpoint {
            config: serde_json::to_value(&m.config).map_err(|e| Failure(MmsStatus::Format, e.to_string()))?,
            params: m.model.params.clone(),
            adam: m.adam.clone(),
        };
        ck.save(req_str(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `path` NUL-terminated; `out_model` writable.
#[no_mangle]
pub unsafe extern "C" fn mms_model_load(path: *const c_char, out_model: *mut *mut MmsModel) -> MmsStatus {
    guard(|| {
        let ck = Checkpoint::load(req_str(path, "path")?)?;
        let (config, model) = harness::model_from_checkpoint(&ck)?;
        let handle = MmsModel {
            config,
            model,
            adam: ck.adam,
        };
        write_out(out_model, Box::into_raw(Box::new(handle)), "out_model")
    })
}

/// # Safety
/// `model` must be null or a model handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mms_model_free(model: *mut MmsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Evaluates `model` on `ds`; writes the metrics report as JSON.
///
/// # Safety
/// Handles must be live; `paths` null or valid; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn mms_evaluate_json(model: *const MmsModel, ds: *const MmsDataset, paths: *const MmsProviderPaths, out_json: *mut *mut c_char) -> MmsStatus {
    guard(|| {
        let m = req_ref(model, "model")?;
        let ds = req_ref(ds, "dataset")?;
        let prov = providers(paths, &m.config, &ds.dir)?;
        let report = harness::evaluate(&m.model, &m.config, &ds.records, &prov)?;
        let json = serde_json::to_string(&report).map_err(|e| Failure(MmsStatus::Format, e.to_string()))?;
        write_string(out_json, json, "out_json")
    })
}

/// Full-pipeline gradient check with toy encoders over seeds `0..seeds`;
/// writes the largest relative error seen.
///
/// # Safety
/// `out_max_rel_error` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mms_gradcheck(seeds: u32, out_max_rel_error: *mut f64) -> MmsStatus {
    guard(|| {
        let cfg = PipelineCheckConfig::default();
        let mut worst = 0.0f64;
        for seed in 0..seeds as u64 {
            worst = worst.max(harness::pipeline_gradcheck(&cfg, seed)?.max_rel_error);
        }
        write_out(out_max_rel_error, worst, "out_max_rel_error")
    })
}

/// Reads an embedding store and reports its header fields.
/// `out_modality` receives 0 (context), 1 (sticker text) or 2 (sticker image).
///
/// # Safety
/// `path` NUL-terminated; out pointers writable.
#[no_mangle]
pub unsafe extern "C" fn mms_store_info(path: *const c_char, out_modality: *mut u8, out_width: *mut u32, out_count: *mut u64) -> MmsStatus {
    guard(|| {
        let store = EmbeddingStore::open(req_str(path, "path")?)?;
        write_out(out_modality, store.modality().tag(), "out_modality")?;
        write_out(out_width, store.width() as u32, "out_width")?;
        write_out(out_count, store.len() as u64, "out_count")
    })
}
