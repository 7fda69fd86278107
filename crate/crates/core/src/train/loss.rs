use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean `−ln p[label]` over rows of a `[B, K]` probability matrix.
///
/// Training uses the fused logits form [`crate::Graph::cross_entropy`]; this
/// variant scores probabilities that are already normalised.
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let shape = probs.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::shape("cross_entropy", format!("{shape:?} vs {} labels", labels.len())));
    }
    let k = shape[1];
    let mut total = 0.0;
    for (row, &l) in probs.data().chunks(k).zip(labels) {
        if l >= k {
            return Err(Error::LabelOutOfRange { label: l, classes: k });
        }
        total -= row[l].ln();
    }
    Ok(total / labels.len() as f64)
}
