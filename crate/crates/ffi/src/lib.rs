//! C ABI for loading perturbench checkpoints, running inference and crafting
//! FGSM/BIM adversarial examples.
//!
//! Every fallible function returns a [`PbStatus`]. On failure the message is
//! available from [`pb_last_error_message`] on the same thread until the next
//! call. Models are opaque [`PbModel`] handles released with [`pb_model_free`].
//! Images are `C·H·W` row-major `double` buffers with values in `[0, 1]`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use perturbench::attack::{self, Classifier};
use perturbench::data::checkpoint_load;
use perturbench::model::{Model, ModelConfig};
use perturbench::{Error, Tensor};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Dimension = 3,
    Config = 4,
    Input = 5,
    State = 6,
    Training = 7,
    Degenerate = 8,
    Format = 9,
    Corruption = 10,
    Io = 11,
    Serde = 12,
    BufferTooSmall = 13,
    Panic = 14,
}

/// Opaque model handle.
pub struct PbModel {
    inner: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PbStatus {
    match e {
        Error::Dimension { .. } => PbStatus::Dimension,
        Error::Config { .. } => PbStatus::Config,
        Error::Input(_) => PbStatus::Input,
        Error::State(_) => PbStatus::State,
        Error::Training { .. } => PbStatus::Training,
        Error::Degenerate(_) => PbStatus::Degenerate,
        Error::Format(_) => PbStatus::Format,
        Error::Corruption(_) => PbStatus::Corruption,
        Error::Io { .. } => PbStatus::Io,
        Error::Serde(_) => PbStatus::Serde,
    }
}

struct Fail(PbStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PbStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PbStatus::Ok,
        Ok(Err(Fail(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            PbStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(PbStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn model_ref<'a>(model: *const PbModel) -> Result<&'a Model, Fail> {
    model.as_ref().map(|m| &m.inner).ok_or_else(|| null("model"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(PbStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn image_arg(model: &Model, image: *const f64, len: usize) -> Result<Tensor, Fail> {
    if image.is_null() {
        return Err(null("image"));
    }
    let shape = model.config().input_shape;
    let want: usize = shape.iter().product();
    if len != want {
        return Err(Fail(PbStatus::Dimension, format!("image has {len} values, model expects {want} ({shape:?})")));
    }
    let data = std::slice::from_raw_parts(image, len).to_vec();
    Ok(Tensor::new(shape.to_vec(), data)?)
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pb_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the next call.
#[no_mangle]
pub extern "C" fn pb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Loads a checkpoint file into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pb_model_load(path: *const c_char, out: *mut *mut PbModel) -> PbStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let (inner, _) = checkpoint_load(Path::new(path))?;
        out.write(Box::into_raw(Box::new(PbModel { inner })));
        Ok(())
    })
}

/// Builds a freshly initialised model from a JSON model configuration.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pb_model_build(config_json: *const c_char, seed: u64, out: *mut *mut PbModel) -> PbStatus {
    guard(|| {
        let text = str_arg(config_json, "config_json")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let config: ModelConfig = serde_json::from_str(text).map_err(Error::from)?;
        let inner = Model::build(config, seed)?;
        out.write(Box::into_raw(Box::new(PbModel { inner })));
        Ok(())
    })
}

/// Releases a model. NULL is ignored.
///
/// # Safety
/// `model` must come from `pb_model_load`/`pb_model_build` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pb_model_free(model: *mut PbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes the class count and the `[C, H, W]` input shape.
///
/// # Safety
/// `model` must be a live handle; `num_classes` and `shape` (3 elements) valid pointers.
#[no_mangle]
pub unsafe extern "C" fn pb_model_info(model: *const PbModel, num_classes: *mut usize, shape: *mut usize) -> PbStatus {
    guard(|| {
        let m = model_ref(model)?;
        write_out(num_classes, m.config().num_classes, "num_classes")?;
        if shape.is_null() {
            return Err(null("shape"));
        }
        std::slice::from_raw_parts_mut(shape, 3).copy_from_slice(&m.config().input_shape);
        Ok(())
    })
}

/// Writes the SHA-256 parameter checksum as 64 hex characters plus NUL; `len` must be at least 65.
///
/// # Safety
/// `model` must be a live handle and `buf` valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn pb_model_checksum(model: *const PbModel, buf: *mut c_char, len: usize) -> PbStatus {
    guard(|| {
        let m = model_ref(model)?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let sum = m.checksum();
        if len < sum.len() + 1 {
            return Err(Fail(PbStatus::BufferTooSmall, format!("need {} bytes, got {len}", sum.len() + 1)));
        }
        let dst = std::slice::from_raw_parts_mut(buf.cast::<u8>(), sum.len() + 1);
        dst[..sum.len()].copy_from_slice(sum.as_bytes());
        dst[sum.len()] = 0;
        Ok(())
    })
}

/// Classifies one image. `probabilities` may be NULL; otherwise it receives `num_classes` values
/// and `probabilities_len` must be at least that.
///
/// # Safety
/// `model` must be a live handle, `image` valid for `len` doubles, outputs valid pointers.
#[no_mangle]
pub unsafe extern "C" fn pb_predict(
    model: *const PbModel,
    image: *const f64,
    len: usize,
    predicted_class: *mut usize,
    confidence: *mut f64,
    probabilities: *mut f64,
    probabilities_len: usize,
) -> PbStatus {
    guard(|| {
        let m = model_ref(model)?;
        let x = image_arg(m, image, len)?;
        let p = m.predict(&x)?;
        write_out(predicted_class, p.class, "predicted_class")?;
        write_out(confidence, p.confidence, "confidence")?;
        if !probabilities.is_null() {
            if probabilities_len < p.probabilities.len() {
                return Err(Fail(
                    PbStatus::BufferTooSmall,
                    format!("need {} probabilities, got {probabilities_len}", p.probabilities.len()),
                ));
            }
            std::slice::from_raw_parts_mut(probabilities, p.probabilities.len()).copy_from_slice(&p.probabilities);
        }
        Ok(())
    })
}

/// FGSM: writes `clip(x + ε·sign(∇x J), 0, 1)` to `out` (`len` doubles).
///
/// # Safety
/// `model` must be a live handle; `image` and `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pb_fgsm(
    model: *const PbModel,
    image: *const f64,
    len: usize,
    label: usize,
    epsilon: f64,
    out: *mut f64,
) -> PbStatus {
    guard(|| {
        let m = model_ref(model)?;
        let x = image_arg(m, image, len)?;
        if out.is_null() {
            return Err(null("out"));
        }
        attack::AttackConfig::fgsm(epsilon).validate()?;
        let adv = attack::fgsm(m, &x, label, epsilon)?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(adv.data());
        Ok(())
    })
}

/// BIM: `iterations` signed steps of size `step_size`, clipped to the ε-ball and `[0, 1]`.
///
/// # Safety
/// `model` must be a live handle; `image` and `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pb_bim(
    model: *const PbModel,
    image: *const f64,
    len: usize,
    label: usize,
    epsilon: f64,
    step_size: f64,
    iterations: usize,
    out: *mut f64,
) -> PbStatus {
    guard(|| {
        let m = model_ref(model)?;
        let x = image_arg(m, image, len)?;
        if out.is_null() {
            return Err(null("out"));
        }
        attack::AttackConfig::bim(epsilon, step_size, iterations).validate()?;
        let adv = attack::bim(m, &x, label, epsilon, step_size, iterations)?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(adv.data());
        Ok(())
    })
}

/// `misclassified / attacked`; zero attacked gives rate 0 with `degenerate` set.
///
/// # Safety
/// `rate` and `degenerate` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn pb_fooling_rate(
    misclassified: usize,
    attacked: usize,
    rate: *mut f64,
    degenerate: *mut bool,
) -> PbStatus {
    guard(|| {
        let r = attack::fooling_rate(misclassified, attacked)?;
        write_out(rate, r.value, "rate")?;
        write_out(degenerate, r.degenerate, "degenerate")
    })
}

/// Confidence-gated success: the original prediction is `label` with confidence above
/// `threshold` and the adversarial prediction is another class with confidence above `threshold`.
#[no_mangle]
pub extern "C" fn pb_attack_success(
    original_class: usize,
    original_confidence: f64,
    adversarial_class: usize,
    adversarial_confidence: f64,
    label: usize,
    threshold: f64,
) -> bool {
    attack::attack_success(
        (original_class, original_confidence),
        (adversarial_class, adversarial_confidence),
        label,
        threshold,
    )
}
