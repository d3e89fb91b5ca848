//! C ABI over `arm-core`.
//!
//! Every fallible function returns an [`ArmStatus`]. On failure the message is kept
//! per thread and can be read with [`arm_last_error_message`]. Objects are handed out
//! as opaque pointers and must be released with their `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use arm_core::arm::{ArmConfig, ArmHead};
use arm_core::arrangement::{max_shuffle_ratio, pixel_shuffle, pixel_unshuffle};
use arm_core::data::{mrr_sample, ConfusionMatrix};
use arm_core::erosion::{albino_map, perception_map, LayerSpec};
use arm_core::ops::{conv2d_forward, ConvGeometry, Mode};
use arm_core::{tenfile, ArmError, Tensor};

/// Result of every fallible call. Values 3 to 9 match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Geometry = 3,
    Data = 4,
    Io = 5,
    Config = 6,
    NonFinite = 7,
    CheckFailed = 8,
    Uninitialized = 9,
    Panic = 10,
    BufferTooSmall = 11,
}

/// Dense f32 tensor of rank 1 to 4.
pub struct ArmTensor(Tensor);

/// ARM head with its own parameters and affinity buffer.
pub struct ArmHeadHandle(ArmHead);

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ArmLayer {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ArmMetrics {
    pub weighted_acc: f64,
    pub unweighted_acc: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul removed"));
}

struct Fail(ArmStatus, String);

impl From<ArmError> for Fail {
    fn from(e: ArmError) -> Self {
        let status = match e.exit_code() {
            3 => ArmStatus::Geometry,
            4 => ArmStatus::Data,
            5 => ArmStatus::Io,
            6 => ArmStatus::Config,
            7 => ArmStatus::NonFinite,
            8 => ArmStatus::CheckFailed,
            _ => ArmStatus::Uninitialized,
        };
        Fail(status, e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(ArmStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ArmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ArmStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ArmStatus::Panic
        }
    }
}

unsafe fn tensor_ref<'a>(t: *const ArmTensor, what: &str) -> Result<&'a Tensor, Fail> {
    t.as_ref().map(|t| &t.0).ok_or_else(|| null(what))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn path_arg(path: *const c_char) -> Result<String, Fail> {
    if path.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map(str::to_string)
        .map_err(|_| Fail(ArmStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn arm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates a tensor. `data` may be null for zeros, otherwise it must hold
/// the product of `shape` values.
///
/// # Safety
/// `shape` must point to `rank` values; `data`, when non-null, to the full payload.
#[no_mangle]
pub unsafe extern "C" fn arm_tensor_new(
    shape: *const usize,
    rank: usize,
    data: *const f32,
    out: *mut *mut ArmTensor,
) -> ArmStatus {
    guard(|| {
        if shape.is_null() {
            return Err(null("shape"));
        }
        let shape = std::slice::from_raw_parts(shape, rank);
        let numel: usize = shape.iter().product();
        let values = if data.is_null() {
            vec![0.0; numel]
        } else {
            std::slice::from_raw_parts(data, numel).to_vec()
        };
        emit(out, ArmTensor(Tensor::new(shape, values)?))
    })
}

/// # Safety
/// `t` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn arm_tensor_free(t: *mut ArmTensor) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// # Safety
/// `t` must be a live tensor or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn arm_tensor_rank(t: *const ArmTensor) -> usize {
    t.as_ref().map_or(0, |t| t.0.rank())
}

/// # Safety
/// `t` must be a live tensor or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn arm_tensor_numel(t: *const ArmTensor) -> usize {
    t.as_ref().map_or(0, |t| t.0.numel())
}

/// Copies the extents into `shape`, which must have room for `capacity` values.
///
/// # Safety
/// `shape` must be writable for `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn arm_tensor_shape(t: *const ArmTensor, shape: *mut usize, capacity: usize) -> ArmStatus {
    guard(|| {
        let t = tensor_ref(t, "tensor")?;
        if shape.is_null() {
            return Err(null("shape"));
        }
        if capacity < t.rank() {
            return Err(Fail(
                ArmStatus::BufferTooSmall,
                format!("shape needs {} slots, got {capacity}", t.rank()),
            ));
        }
        ptr::copy_nonoverlapping(t.shape().as_ptr(), shape, t.rank());
        Ok(())
    })
}

/// Read-only view of the values; valid while the tensor lives.
///
/// # Safety
/// `t` must be a live tensor or null (returns null).
#[no_mangle]
pub unsafe extern "C" fn arm_tensor_data(t: *const ArmTensor) -> *const f32 {
    t.as_ref().map_or(ptr::null(), |t| t.0.data().as_ptr())
}

/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn arm_tensor_load(path: *const c_char, out: *mut *mut ArmTensor) -> ArmStatus {
    guard(|| {
        let path = path_arg(path)?;
        emit(out, ArmTensor(tenfile::load(path)?))
    })
}

/// # Safety
/// `t` must be a live tensor and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn arm_tensor_save(t: *const ArmTensor, path: *const c_char) -> ArmStatus {
    guard(|| {
        let t = tensor_ref(t, "tensor")?;
        tenfile::save(path_arg(path)?, t)?;
        Ok(())
    })
}

/// `N×C×H×W → N×(C/r²)×rH×rW`.
///
/// # Safety
/// `x` must be a live tensor.
#[no_mangle]
pub unsafe extern "C" fn arm_pixel_shuffle(x: *const ArmTensor, ratio: usize, out: *mut *mut ArmTensor) -> ArmStatus {
    guard(|| emit(out, ArmTensor(pixel_shuffle(tensor_ref(x, "input")?, ratio)?)))
}

/// Inverse of [`arm_pixel_shuffle`].
///
/// # Safety
/// `y` must be a live tensor.
#[no_mangle]
pub unsafe extern "C" fn arm_pixel_unshuffle(y: *const ArmTensor, ratio: usize, out: *mut *mut ArmTensor) -> ArmStatus {
    guard(|| emit(out, ArmTensor(pixel_unshuffle(tensor_ref(y, "input")?, ratio)?)))
}

/// Square-kernel convolution. With `shared` the kernel is `1×1×k×k` and applied to
/// every channel separately; otherwise it is `Cout×Cin×k×k`.
///
/// # Safety
/// `x` and `kernel` must be live tensors.
#[no_mangle]
pub unsafe extern "C" fn arm_conv2d(
    x: *const ArmTensor,
    kernel: *const ArmTensor,
    stride: usize,
    padding: usize,
    shared: bool,
    out: *mut *mut ArmTensor,
) -> ArmStatus {
    guard(|| {
        let x = tensor_ref(x, "input")?;
        let k = tensor_ref(kernel, "kernel")?;
        let (_, cin, _, _) = x.dims4()?;
        let (kout, kin, kh, kw) = k.dims4()?;
        if kh != kw {
            return Err(Fail(ArmStatus::Geometry, format!("kernel must be square, got {kh}×{kw}")));
        }
        let geom = if shared {
            ConvGeometry::shared(kh, stride, padding, cin)?
        } else {
            if kin != cin {
                return Err(Fail(
                    ArmStatus::Geometry,
                    format!("kernel expects {kin} input channels, input has {cin}"),
                ));
            }
            ConvGeometry::new(kh, stride, padding, cin, kout)?
        };
        emit(out, ArmTensor(conv2d_forward(x, k, &geom)?))
    })
}

/// Window-coverage counts as an `H×W` tensor.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn arm_perception_map(
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out: *mut *mut ArmTensor,
) -> ArmStatus {
    guard(|| {
        let m = perception_map(height, width, kernel, stride, padding)?;
        let t = Tensor::new(&[m.height, m.width], m.counts.iter().map(|&c| c as f32).collect())?;
        emit(out, ArmTensor(t))
    })
}

/// Contamination after the whole stack as an `H'×W'` tensor.
///
/// # Safety
/// `layers` must point to `count` entries.
#[no_mangle]
pub unsafe extern "C" fn arm_albino_map(
    height: usize,
    width: usize,
    layers: *const ArmLayer,
    count: usize,
    out: *mut *mut ArmTensor,
) -> ArmStatus {
    guard(|| {
        if layers.is_null() {
            return Err(null("layers"));
        }
        let specs = std::slice::from_raw_parts(layers, count)
            .iter()
            .map(|l| LayerSpec::new(l.kernel, l.stride, l.padding))
            .collect::<Result<Vec<_>, _>>()?;
        let m = albino_map(height, width, &specs)?;
        let t = Tensor::new(&[m.height, m.width], m.contamination.iter().map(|&c| c as f32).collect())?;
        emit(out, ArmTensor(t))
    })
}

/// Largest `r` with `r²` dividing `channels`.
#[no_mangle]
pub extern "C" fn arm_max_shuffle_ratio(channels: usize) -> usize {
    max_shuffle_ratio(channels)
}

/// Head for a `channels×height×width` backbone output, sized like the reference network.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn arm_head_new(
    channels: usize,
    height: usize,
    width: usize,
    classes: usize,
    seed: u64,
    out: *mut *mut ArmHeadHandle,
) -> ArmStatus {
    guard(|| {
        let cfg = ArmConfig::for_backbone(channels, height, width, classes);
        let head = ArmHead::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed))?;
        emit(out, ArmHeadHandle(head))
    })
}

/// # Safety
/// `h` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn arm_head_free(h: *mut ArmHeadHandle) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Trainable parameter count, or 0 for null.
///
/// # Safety
/// `h` must be a live head or null.
#[no_mangle]
pub unsafe extern "C" fn arm_head_param_count(h: *const ArmHeadHandle) -> usize {
    h.as_ref().map_or(0, |h| h.0.param_count().total())
}

/// Logits `N×K`. Training mode updates the affinity buffer and batch-norm statistics;
/// evaluation mode needs a buffer from an earlier training-mode call.
///
/// # Safety
/// `h` must be a live head and `x` a live tensor.
#[no_mangle]
pub unsafe extern "C" fn arm_head_forward(
    h: *mut ArmHeadHandle,
    x: *const ArmTensor,
    train: bool,
    out: *mut *mut ArmTensor,
) -> ArmStatus {
    guard(|| {
        let head = h.as_mut().ok_or_else(|| null("head"))?;
        let mode = if train { Mode::Train } else { Mode::Eval };
        let (logits, _) = head.0.forward(tensor_ref(x, "input")?, mode)?;
        emit(out, ArmTensor(logits))
    })
}

/// WA and UA of a row-major `classes×classes` confusion matrix (rows are true classes).
///
/// # Safety
/// `counts` must hold `classes²` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn arm_metrics(counts: *const u64, classes: usize, out: *mut ArmMetrics) -> ArmStatus {
    guard(|| {
        if counts.is_null() {
            return Err(null("counts"));
        }
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let mut cm = ConfusionMatrix::new(classes);
        cm.counts.copy_from_slice(std::slice::from_raw_parts(counts, classes * classes));
        let m = cm.metrics()?;
        *out = ArmMetrics {
            weighted_acc: m.weighted_acc,
            unweighted_acc: m.unweighted_acc,
        };
        Ok(())
    })
}

/// One balanced epoch over classes of the given sizes. Samples are numbered class by
/// class: class 0 owns `0..counts[0]`, class 1 the next `counts[1]`, and so on.
///
/// `len` receives the epoch length. With a null `indices` only the length is reported;
/// otherwise `capacity` must be at least that length.
///
/// # Safety
/// `counts` must hold `classes` values; `indices` must be writable for `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn arm_mrr_sample(
    counts: *const usize,
    classes: usize,
    seed: u64,
    indices: *mut usize,
    capacity: usize,
    len: *mut usize,
) -> ArmStatus {
    guard(|| {
        if counts.is_null() {
            return Err(null("counts"));
        }
        if len.is_null() {
            return Err(null("len"));
        }
        let counts = std::slice::from_raw_parts(counts, classes);
        let mut next = 0;
        let per_class: Vec<Vec<usize>> = counts
            .iter()
            .map(|&n| {
                let members = (next..next + n).collect();
                next += n;
                members
            })
            .collect();
        let names: Vec<String> = (0..classes).map(|c| c.to_string()).collect();
        let epoch = mrr_sample(&per_class, &names, seed)?;
        *len = epoch.len();
        if indices.is_null() {
            return Ok(());
        }
        if capacity < epoch.len() {
            return Err(Fail(
                ArmStatus::BufferTooSmall,
                format!("epoch has {} samples, buffer holds {capacity}", epoch.len()),
            ));
        }
        ptr::copy_nonoverlapping(epoch.as_ptr(), indices, epoch.len());
        Ok(())
    })
}
