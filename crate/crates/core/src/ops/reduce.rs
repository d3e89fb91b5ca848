//! Channel mean, global average pooling and ReLU.

use crate::error::{ArmError, Result};
use crate::tensor::Tensor;

/// Mean over the channel axis: `N×C×H×W → N×H×W`.
pub fn channel_mean(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    if c == 0 {
        return Err(ArmError::geometry("channel_mean over zero channels"));
    }
    let hw = h * w;
    let x = input.data();
    let mut out = vec![0.0f32; n * hw];
    for b in 0..n {
        for i in 0..hw {
            let acc: f64 = (0..c).map(|ch| x[(b * c + ch) * hw + i] as f64).sum();
            out[b * hw + i] = (acc / c as f64) as f32;
        }
    }
    Tensor::new(&[n, h, w], out)
}

pub fn channel_mean_backward(grad_out: &Tensor, channels: usize) -> Result<Tensor> {
    let (n, h, w) = grad_out.dims3()?;
    let hw = h * w;
    let g = grad_out.data();
    let inv = 1.0 / channels as f32;
    let mut out = vec![0.0f32; n * channels * hw];
    for b in 0..n {
        for ch in 0..channels {
            for i in 0..hw {
                out[(b * channels + ch) * hw + i] = g[b * hw + i] * inv;
            }
        }
    }
    Tensor::new(&[n, channels, h, w], out)
}

/// Global average pooling: `N×C×H×W → N×C`.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    let hw = h * w;
    let out = input
        .data()
        .chunks_exact(hw)
        .map(|plane| (plane.iter().map(|&v| v as f64).sum::<f64>() / hw as f64) as f32)
        .collect();
    Tensor::new(&[n, c], out)
}

pub fn global_avg_pool_backward(grad_out: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (n, c) = grad_out.dims2()?;
    let hw = height * width;
    let inv = 1.0 / hw as f32;
    let out = grad_out
        .data()
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g * inv, hw))
        .collect();
    Tensor::new(&[n, c, height, width], out)
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Gradient of ReLU given its forward input.
pub fn relu_backward(grad_out: &Tensor, input: &Tensor) -> Result<Tensor> {
    if grad_out.shape() != input.shape() {
        return Err(ArmError::geometry("relu grad_out shape mismatch"));
    }
    let out = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_grad, relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reference_mean_shape() {
        let y = channel_mean(&Tensor::zeros(&[1, 2, 11, 11])).unwrap();
        assert_eq!(y.shape(), &[1, 11, 11]);
    }

    #[test]
    fn single_channel_is_identity() {
        let x = Tensor::from_fn(&[2, 1, 3, 3], |i| i as f32);
        assert_eq!(channel_mean(&x).unwrap().data(), x.data());
    }

    #[test]
    fn opposite_channels_cancel() {
        let x = Tensor::from_fn(&[1, 2, 2, 2], |i| if i < 4 { i as f32 } else { -((i - 4) as f32) });
        assert!(channel_mean(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_mean_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x = Tensor::uniform(&[2, 3, 2, 2], -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(&[2, 2, 2], -1.0, 1.0, &mut rng);
        let g = channel_mean_backward(&w, 3).unwrap();
        let fd = finite_diff_grad(|t| channel_mean(t).unwrap().dot(&w), &x, 1e-3).unwrap();
        assert!(relative_error(&g, &fd) < 1e-3);
    }

    #[test]
    fn gap_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let x = Tensor::uniform(&[2, 3, 3, 2], -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(&[2, 3], -1.0, 1.0, &mut rng);
        let g = global_avg_pool_backward(&w, 3, 2).unwrap();
        let fd = finite_diff_grad(|t| global_avg_pool(t).unwrap().dot(&w), &x, 1e-3).unwrap();
        assert!(relative_error(&g, &fd) < 1e-3);
    }

    #[test]
    fn relu_gates_gradient() {
        let x = Tensor::new(&[4], vec![-1.0, 0.5, 0.0, 2.0]).unwrap();
        let g = relu_backward(&Tensor::ones(&[4]), &x).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.5, 0.0, 2.0]);
    }
}
