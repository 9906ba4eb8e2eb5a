use super::EvalError;
use crate::tensor::Real;

/// Whether `label` ranks among the `k` largest `logits`. Among equal logits
/// the lower class index ranks first.
pub fn topk_hit<T: Real>(logits: &[T], label: usize, k: usize) -> Result<bool, EvalError> {
    if k == 0 || k > logits.len() {
        return Err(EvalError::Param(format!("k = {k} outside 1..={}", logits.len())));
    }
    let target = *logits
        .get(label)
        .ok_or_else(|| EvalError::Param(format!("label {label} outside {} classes", logits.len())))?;
    let ahead = logits
        .iter()
        .enumerate()
        .filter(|&(i, &v)| v > target || (v == target && i < label))
        .count();
    Ok(ahead < k)
}

/// Class indices ordered by descending logit, ties by ascending index.
pub fn ranking<T: Real>(logits: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    idx
}
