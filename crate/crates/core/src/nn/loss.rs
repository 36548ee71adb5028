use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{validation, Result};

/// `-log softmax(logits)[label]` and its gradient `softmax - onehot`.
pub fn cross_entropy(logits: ArrayView1<'_, f64>, label: usize) -> Result<(f64, Array1<f64>)> {
    if label >= logits.len() {
        return Err(validation(format!("label {label} out of range for {} classes", logits.len())));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp = logits.mapv(|z| (z - max).exp());
    let sum = exp.sum();
    let loss = sum.ln() + max - logits[label];
    let mut grad = exp / sum;
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Mean loss over rows and the gradient of that mean.
pub fn cross_entropy_batch(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    if labels.len() != logits.nrows() || labels.is_empty() {
        return Err(validation("one label per logit row is required"));
    }
    let b = labels.len() as f64;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let (l, g) = cross_entropy(logits.row(i), y)?;
        total += l;
        grad.row_mut(i).assign(&(g / b));
    }
    Ok((total / b, grad))
}
