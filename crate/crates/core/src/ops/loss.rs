use super::OpError;
use crate::tensor::{Real, Shape, Tensor};

/// Row-wise softmax over channels of an `N×K×1×1` tensor, max-subtracted.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>, OpError> {
    let s = logits.shape();
    if s.h != 1 || s.w != 1 {
        return Err(OpError::Shape(format!("softmax expects N×K×1×1 logits, got {s}")));
    }
    let mut out = Vec::with_capacity(s.element_count());
    for row in logits.data().chunks(s.c) {
        let max = row.iter().map(|v| v.widen()).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v.widen() - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| T::cast(e / total)));
    }
    Ok(Tensor::from_vec(s, out)?)
}

fn check_labels(s: Shape, labels: &[usize]) -> Result<(), OpError> {
    if labels.len() != s.n {
        return Err(OpError::Data(format!("{} labels for batch of {}", labels.len(), s.n)));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= s.c) {
        return Err(OpError::Data(format!("label {bad} outside [0, {})", s.c)));
    }
    Ok(())
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
///
/// The loss is computed from the log-sum-exp directly rather than from the
/// rounded probabilities, so saturated logits give a loss near zero instead of
/// `-ln(1)` rounding noise.
pub fn softmax_cross_entropy<T: Real>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(f64, Tensor<T>), OpError> {
    let s = logits.shape();
    let probs = softmax(logits)?;
    check_labels(s, labels)?;
    let mut total = 0.0f64;
    for (row, &label) in logits.data().chunks(s.c).zip(labels) {
        let max = row.iter().map(|v| v.widen()).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v.widen() - max).exp()).sum::<f64>().ln();
        total += lse - row[label].widen();
    }
    Ok((total / s.n as f64, probs))
}

/// Gradient of the mean loss w.r.t. logits: `(probs − onehot) / N`.
pub fn softmax_cross_entropy_backward<T: Real>(
    probs: &Tensor<T>,
    labels: &[usize],
) -> Result<Tensor<T>, OpError> {
    let s = probs.shape();
    check_labels(s, labels)?;
    let scale = 1.0 / s.n as f64;
    let mut out = Vec::with_capacity(s.element_count());
    for (row, &label) in probs.data().chunks(s.c).zip(labels) {
        for (k, p) in row.iter().enumerate() {
            let onehot = if k == label { 1.0 } else { 0.0 };
            out.push(T::cast((p.widen() - onehot) * scale));
        }
    }
    Ok(Tensor::from_vec(s, out)?)
}
