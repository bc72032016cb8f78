use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let s = logits.shape();
    if s.len() != 2 {
        return Err(Error::InvalidShape(format!("softmax expects [N,C], got {s:?}")));
    }
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(s[1]) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    Ok(out)
}

/// Mean cross-entropy over the batch and its gradient `(softmax - onehot) / N`.
pub fn softmax_xent<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let s = logits.shape();
    if s.len() != 2 || s[1] != 2 || s[0] != labels.len() {
        return Err(Error::InvalidShape(format!(
            "softmax_xent expects [N,2] logits with N labels, got {s:?} and {} labels",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::InvalidLabel(bad));
    }
    let n = s[0];
    let nf = T::from_usize(n).unwrap();
    let mut grad = softmax(logits)?;
    let mut loss = 0.0;
    for ((row, lrow), &label) in grad.data_mut().chunks_mut(2).zip(logits.data().chunks(2)).zip(labels) {
        let max = lrow[0].max(lrow[1]);
        let lse = max + ((lrow[0] - max).exp() + (lrow[1] - max).exp()).ln();
        loss += (lse - lrow[label]).to_f64().unwrap_or(f64::NAN);
        row[label] -= T::one();
        for v in row.iter_mut() {
            *v = *v / nf;
        }
    }
    Ok((loss / n as f64, grad))
}
