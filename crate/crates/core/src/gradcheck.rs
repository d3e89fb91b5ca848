//! Central-difference gradient oracle used to verify every backward pass.

use crate::error::{ArmError, Result};
use crate::tensor::Tensor;

/// Central-difference gradient of `f` at `x`, one coordinate at a time, in `f64`.
///
/// The divisor is the perturbation actually realised in `f32` storage, so
/// rounding of `x ± step` does not bias the estimate.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, step: f32) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> f64,
{
    if !(step > 0.0) {
        return Err(ArmError::geometry("finite-difference step must be > 0"));
    }
    let mut probe = x.detach();
    let mut grad = vec![0.0f32; x.numel()];
    for (i, g) in grad.iter_mut().enumerate() {
        let orig = x.data()[i];
        let up = orig + step;
        let down = orig - step;
        probe.data_mut()[i] = up;
        let f_up = f(&probe);
        probe.data_mut()[i] = down;
        let f_down = f(&probe);
        probe.data_mut()[i] = orig;
        if !f_up.is_finite() || !f_down.is_finite() {
            return Err(ArmError::Oracle { index: i });
        }
        *g = ((f_up - f_down) / (up as f64 - down as f64)) as f32;
    }
    Tensor::new(x.shape(), grad)
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, or 0 when both are exactly zero.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "relative_error of mismatched shapes");
    let mut diff = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (x, y) = (x as f64, y as f64);
        diff += (x - y) * (x - y);
        na += x * x;
        nb += y * y;
    }
    let scale = na.max(nb).sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff.sqrt() / scale
    }
}
