use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 3;

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, k) = logits.dims2("softmax")?;
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks(k) {
        out.extend(softmax_row(row).into_iter().map(T::lit));
    }
    Tensor::from_vec(logits.shape(), out)
}

pub(crate) fn softmax_row<T: Scalar>(row: &[T]) -> Vec<f64> {
    let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Mean cross-entropy over the batch and its gradient `(softmax - onehot) / B`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let (b, k) = logits.dims2("softmax_cross_entropy")?;
    if k != NUM_CLASSES {
        return Err(Error::shape("softmax_cross_entropy", "classes", NUM_CLASSES, k));
    }
    if labels.len() != b {
        return Err(Error::shape("softmax_cross_entropy", "labels", b, labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= NUM_CLASSES) {
        return Err(Error::LabelOutOfRange(bad));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(b * k);
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln() + max;
        loss += log_sum - row[label].as_f64();
        for (j, v) in row.iter().enumerate() {
            let p = (v.as_f64() - log_sum).exp();
            let target = if j == label { 1.0 } else { 0.0 };
            grad.push(T::lit((p - target) / b as f64));
        }
    }
    Ok((loss / b as f64, Tensor::from_vec(&[b, k], grad)?))
}
