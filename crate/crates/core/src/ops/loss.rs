use crate::error::{ArmError, Result};
use crate::tensor::Tensor;

/// Mean cross-entropy of `softmax(logits)` against integer labels, with its gradient.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (n, k) = logits.dims2()?;
    if labels.len() != n {
        return Err(ArmError::data(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    if n == 0 {
        return Err(ArmError::data("empty batch"));
    }
    let mut grad = vec![0.0f32; n * k];
    let mut loss = 0.0f64;
    for (i, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(ArmError::data(format!(
                "sample {i}: label {label} outside [0, {k})"
            )));
        }
        let row = &logits.data()[i * k..(i + 1) * k];
        let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
        let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss += z.ln() - (row[label] as f64 - max);
        for (j, e) in exps.iter().enumerate() {
            let p = e / z;
            let target = if j == label { 1.0 } else { 0.0 };
            grad[i * k + j] = ((p - target) / n as f64) as f32;
        }
    }
    Ok((loss / n as f64, Tensor::new(&[n, k], grad)?))
}

/// Row-wise argmax.
pub fn argmax_rows(logits: &Tensor) -> Result<Vec<usize>> {
    let (_, k) = logits.dims2()?;
    Ok(logits
        .data()
        .chunks_exact(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                .0
        })
        .collect())
}
