//! C interface to the view-synthesis autoencoder.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! functions and released by the matching `*_free`. Every fallible call
//! returns a [`VsaStatus`]; on failure the message is available from
//! [`vsa_last_error_message`] on the same thread until the next failing
//! call. Panics are caught and reported as [`VsaStatus::Panic`].
//!
//! All images are `[3, H, W]` float arrays in `[0, 1]`, row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use rand::SeedableRng;
use vsa::config::RunConfig;
use vsa::data::{generate_dataset, Dataset, GenConfig, Split};
use vsa::model::{ViewPose, VsaModel};
use vsa::rng::Rng;
use vsa::train::pretrain::{run_pretraining, Pretrainer, RunFiles};
use vsa::train::{linear_probe, Checkpoint};
use vsa::{Tensor, VsaError};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VsaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Format = 5,
    Config = 6,
    Diverged = 7,
    Internal = 8,
    Panic = 9,
}

/// Rendered multi-view dataset.
pub struct VsaDataset {
    inner: Dataset,
}

/// Model weights in single precision.
pub struct VsaModel32 {
    inner: VsaModel<f32>,
    seed: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &VsaError) -> VsaStatus {
    match e {
        VsaError::Shape(_) => VsaStatus::Shape,
        VsaError::InvalidArgument(_) => VsaStatus::InvalidArgument,
        VsaError::Autodiff(_) => VsaStatus::Internal,
        VsaError::Format(_) => VsaStatus::Format,
        VsaError::Config(_) => VsaStatus::Config,
        VsaError::NonFiniteLoss { .. } => VsaStatus::Diverged,
        VsaError::Io(_) => VsaStatus::Io,
    }
}

enum Fail {
    Null(&'static str),
    Err(VsaError),
}

impl From<VsaError> for Fail {
    fn from(e: VsaError) -> Self {
        Fail::Err(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> VsaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VsaStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            VsaStatus::NullPointer
        }
        Ok(Err(Fail::Err(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            VsaStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Err(VsaError::InvalidArgument(format!("{what} is not UTF-8"))))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn vsa_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vsa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Render a procedural split (`split` 0 = train, 1 = test).
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn vsa_dataset_generate(
    classes: u32,
    objects: u32,
    views: u32,
    size: u32,
    seed: u64,
    split: u32,
    out: *mut *mut VsaDataset,
) -> VsaStatus {
    guard(|| {
        let split = match split {
            0 => Split::Train,
            1 => Split::Test,
            s => return Err(VsaError::InvalidArgument(format!("split {s} is neither 0 nor 1")).into()),
        };
        let cfg = GenConfig {
            classes: classes as usize,
            objects: objects as usize,
            views: views as usize,
            size: size as usize,
            seed,
            ..GenConfig::default()
        };
        write_out(out, VsaDataset { inner: generate_dataset(&cfg, split)? })
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn vsa_dataset_read(path: *const c_char, out: *mut *mut VsaDataset) -> VsaStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        write_out(out, VsaDataset { inner: Dataset::read(Path::new(path))? })
    })
}

/// # Safety
/// `ds` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn vsa_dataset_write(ds: *const VsaDataset, path: *const c_char) -> VsaStatus {
    guard(|| {
        let ds = ref_arg(ds, "dataset")?;
        ds.inner.write(Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// Object count, or 0 for NULL.
///
/// # Safety
/// `ds` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn vsa_dataset_len(ds: *const VsaDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.len())
}

/// Views per object, or 0 for NULL.
///
/// # Safety
/// `ds` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn vsa_dataset_views(ds: *const VsaDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.views)
}

/// Copy one stored view into `pixels` (`len` floats, `3 * H * W`).
///
/// # Safety
/// `ds` must come from this library and `pixels` hold `len` floats.
#[no_mangle]
pub unsafe extern "C" fn vsa_dataset_image(
    ds: *const VsaDataset,
    object: usize,
    view: usize,
    pixels: *mut f32,
    len: usize,
) -> VsaStatus {
    guard(|| {
        let ds = &ref_arg(ds, "dataset")?.inner;
        let img = ds
            .samples
            .get(object)
            .and_then(|s| s.images.get(view))
            .ok_or_else(|| VsaError::InvalidArgument(format!("object {object} view {view} out of range")))?;
        copy_out(img, pixels, len)
    })
}

/// # Safety
/// `ds` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vsa_dataset_free(ds: *mut VsaDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

unsafe fn copy_out(t: &Tensor<f32>, pixels: *mut f32, len: usize) -> Result<(), Fail> {
    if pixels.is_null() {
        return Err(Fail::Null("pixels"));
    }
    if len != t.numel() {
        return Err(VsaError::Shape(format!("buffer holds {len} floats, image has {}", t.numel())).into());
    }
    ptr::copy_nonoverlapping(t.data().as_ptr(), pixels, len);
    Ok(())
}

/// Fresh model from a run-config TOML string (may be empty for defaults).
///
/// # Safety
/// `config_toml` must be NUL-terminated and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn vsa_model_new(config_toml: *const c_char, seed: u64, out: *mut *mut VsaModel32) -> VsaStatus {
    guard(|| {
        let cfg = RunConfig::from_toml(str_arg(config_toml, "config_toml")?)?;
        write_out(out, VsaModel32 { inner: VsaModel::new(cfg.model, seed)?, seed })
    })
}

/// Load the weights of a single-precision checkpoint.
///
/// # Safety
/// `path` must be NUL-terminated and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn vsa_model_load(path: *const c_char, out: *mut *mut VsaModel32) -> VsaStatus {
    guard(|| {
        let ck = Checkpoint::<f32>::load(Path::new(str_arg(path, "path")?))?;
        write_out(out, VsaModel32 { inner: ck.model()?, seed: ck.seed })
    })
}

/// Number of scalar parameters, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn vsa_model_num_params(model: *const VsaModel32) -> usize {
    model.as_ref().map_or(0, |m| m.inner.params.num_scalars())
}

/// Synthesize view `target_view` of `object` from `n_sources` source views
/// (the model's source count) into `pixels`.
///
/// # Safety
/// Handles must come from this library, `source_views` hold `n_sources`
/// indices and `pixels` hold `len` floats.
#[no_mangle]
pub unsafe extern "C" fn vsa_model_synthesize(
    model: *const VsaModel32,
    ds: *const VsaDataset,
    object: usize,
    source_views: *const usize,
    n_sources: usize,
    target_view: usize,
    pixels: *mut f32,
    len: usize,
) -> VsaStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let ds = &ref_arg(ds, "dataset")?.inner;
        if source_views.is_null() {
            return Err(Fail::Null("source_views"));
        }
        let views = std::slice::from_raw_parts(source_views, n_sources);
        let sample = ds
            .samples
            .get(object)
            .ok_or_else(|| VsaError::InvalidArgument(format!("object {object} out of range")))?;
        if let Some(&bad) = views.iter().chain([&target_view]).find(|&&v| v >= ds.views) {
            return Err(VsaError::InvalidArgument(format!("view {bad} out of range")).into());
        }
        let pose = |v: usize| ViewPose { index: v, camera: sample.poses[v].clone() };
        let sources: Vec<Tensor<f32>> = views.iter().map(|&v| sample.images[v].clone()).collect();
        let poses: Vec<ViewPose> = views.iter().map(|&v| pose(v)).collect();
        let mut rng = Rng::seed_from_u64(m.seed);
        let out = m.inner.synthesize(&sources, &poses, &pose(target_view), m.inner.cfg.mask_ratio, &mut rng)?;
        copy_out(&out, pixels, len)
    })
}

/// Linear-probe test accuracy of the model's frozen encoder, using the
/// probe settings of `config_toml`.
///
/// # Safety
/// Handles must come from this library, `config_toml` must be
/// NUL-terminated and `accuracy` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn vsa_model_linear_probe(
    model: *const VsaModel32,
    train: *const VsaDataset,
    test: *const VsaDataset,
    config_toml: *const c_char,
    accuracy: *mut f64,
) -> VsaStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let train = &ref_arg(train, "train")?.inner;
        let test = &ref_arg(test, "test")?.inner;
        let cfg = RunConfig::from_toml(str_arg(config_toml, "config_toml")?)?;
        if accuracy.is_null() {
            return Err(Fail::Null("accuracy"));
        }
        *accuracy = linear_probe(&m.inner, train, test, &cfg.probe, m.seed)?.test_acc;
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vsa_model_free(model: *mut VsaModel32) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Pretrain on `train` with the given run config (f32), writing the config,
/// metrics log and checkpoint into `out_dir`. `final_loss` receives the
/// last step's loss (NaN when no step ran).
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn vsa_pretrain(
    config_toml: *const c_char,
    train: *const VsaDataset,
    out_dir: *const c_char,
    final_loss: *mut f64,
) -> VsaStatus {
    guard(|| {
        let cfg = RunConfig::from_toml(str_arg(config_toml, "config_toml")?)?;
        let train = &ref_arg(train, "train")?.inner;
        let dir = str_arg(out_dir, "out_dir")?;
        if final_loss.is_null() {
            return Err(Fail::Null("final_loss"));
        }
        let mut trainer = Pretrainer::<f32>::new(cfg, train)?;
        let out = run_pretraining(&mut trainer, None, Some(&RunFiles::new(dir)))?;
        *final_loss = out.curve.last().map_or(f64::NAN, |e| e.loss);
        Ok(())
    })
}
