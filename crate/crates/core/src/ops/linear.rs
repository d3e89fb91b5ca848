use rand::Rng;

use crate::error::{ArmError, Result};
use crate::init::kaiming_uniform;
use crate::tensor::Tensor;

/// `input (N×F) · weightᵀ (F×K) + bias (K)`.
pub fn linear_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, f) = input.dims2()?;
    let (k, wf) = weight.dims2()?;
    if wf != f {
        return Err(ArmError::geometry(format!(
            "feature dimension: input has {f} features, weight expects {wf}"
        )));
    }
    if bias.shape() != [k] {
        return Err(ArmError::geometry(format!(
            "bias shape {:?} does not match {k} outputs",
            bias.shape()
        )));
    }
    let x = input.data();
    let wd = weight.data();
    let mut out = vec![0.0f32; n * k];
    for b in 0..n {
        let row = &x[b * f..(b + 1) * f];
        for o in 0..k {
            let acc: f64 = wd[o * f..(o + 1) * f]
                .iter()
                .zip(row)
                .map(|(&a, &c)| a as f64 * c as f64)
                .sum();
            out[b * k + o] = (acc + bias.data()[o] as f64) as f32;
        }
    }
    Tensor::new(&[n, k], out)
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn linear_backward(
    grad_out: &Tensor,
    input: &Tensor,
    weight: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, f) = input.dims2()?;
    let (k, _) = weight.dims2()?;
    if grad_out.shape() != [n, k] {
        return Err(ArmError::geometry(format!(
            "grad_out shape {:?} does not match [{n}, {k}]",
            grad_out.shape()
        )));
    }
    let (g, x, wd) = (grad_out.data(), input.data(), weight.data());
    let mut gi = vec![0.0f32; n * f];
    for b in 0..n {
        for j in 0..f {
            let acc: f64 = (0..k).map(|o| g[b * k + o] as f64 * wd[o * f + j] as f64).sum();
            gi[b * f + j] = acc as f32;
        }
    }
    let mut gw = vec![0.0f32; k * f];
    let mut gb = vec![0.0f32; k];
    for o in 0..k {
        for j in 0..f {
            let acc: f64 = (0..n).map(|b| g[b * k + o] as f64 * x[b * f + j] as f64).sum();
            gw[o * f + j] = acc as f32;
        }
        gb[o] = (0..n).map(|b| g[b * k + o] as f64).sum::<f64>() as f32;
    }
    Ok((
        Tensor::new(&[n, f], gi)?,
        Tensor::new(&[k, f], gw)?,
        Tensor::new(&[k], gb)?,
    ))
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        Linear {
            weight: kaiming_uniform(&[out_features, in_features], in_features, rng).requires_grad(),
            bias: Tensor::zeros(&[out_features]).requires_grad(),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        linear_forward(input, &self.weight, &self.bias)
    }

    pub fn backward(&mut self, grad_out: &Tensor, input: &Tensor) -> Result<Tensor> {
        let (gi, gw, gb) = linear_backward(grad_out, input, &self.weight)?;
        self.weight.accumulate_grad(&gw)?;
        self.bias.accumulate_grad(&gb)?;
        Ok(gi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_grad, relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reference_fc_parameter_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(Linear::new(121, 7, &mut rng).param_count(), 854);
    }

    #[test]
    fn identity_weight() {
        let x = Tensor::new(&[1, 3], vec![0.5, -2.0, 3.0]).unwrap();
        let w = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let y = linear_forward(&x, &w, &Tensor::zeros(&[3])).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn matches_naive_dot_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = Tensor::uniform(&[1, 5], -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(&[2, 5], -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(&[2], -1.0, 1.0, &mut rng);
        let y = linear_forward(&x, &w, &b).unwrap();
        for o in 0..2 {
            let mut acc = b.data()[o] as f64;
            for j in 0..5 {
                acc += w.data()[o * 5 + j] as f64 * x.data()[j] as f64;
            }
            assert!((y.data()[o] as f64 - acc).abs() < 1e-6);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let err = linear_forward(&Tensor::zeros(&[1, 4]), &Tensor::zeros(&[2, 5]), &Tensor::zeros(&[2]));
        assert!(matches!(err, Err(ArmError::Geometry(_))));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let x = Tensor::uniform(&[3, 4], -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(&[2, 4], -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(&[2], -1.0, 1.0, &mut rng);
        let go = Tensor::uniform(&[3, 2], -1.0, 1.0, &mut rng);
        let (gi, gw, gb) = linear_backward(&go, &x, &w).unwrap();
        let f = |x: &Tensor, w: &Tensor, b: &Tensor| linear_forward(x, w, b).unwrap().dot(&go);
        assert!(relative_error(&gi, &finite_diff_grad(|t| f(t, &w, &b), &x, 1e-3).unwrap()) < 1e-3);
        assert!(relative_error(&gw, &finite_diff_grad(|t| f(&x, t, &b), &w, 1e-3).unwrap()) < 1e-3);
        assert!(relative_error(&gb, &finite_diff_grad(|t| f(&x, &w, t), &b, 1e-3).unwrap()) < 1e-3);
    }
}
