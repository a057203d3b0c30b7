use crate::diffmath::{sigmoid, softplus};
use crate::error::{Error, Result};

/// Value of one smoothed-triplet row and its gradient with respect to the
/// row's scores.
#[derive(Debug, Clone, PartialEq)]
pub struct TalRow {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Smoothed triplet alignment loss over one row of scores:
///
/// `(1/|Pos|) Σ_{p∈Pos} log(1 + Σ_{n∈Neg} exp((s_n − s_p + margin) / τ))`
///
/// Returns `Ok(None)` when `positives` is empty (the caller skips the row).
pub fn tal_row(
    scores: &[f64],
    positives: &[usize],
    negatives: &[usize],
    tau: f64,
    margin: f64,
) -> Result<Option<TalRow>> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::param(format!("tau_tal must be positive, got {tau}")));
    }
    if let Some(&bad) = positives.iter().chain(negatives).find(|&&j| j >= scores.len()) {
        return Err(Error::param(format!(
            "index {bad} out of range for a row of {}",
            scores.len()
        )));
    }
    if positives.is_empty() {
        return Ok(None);
    }
    let mut grad = vec![0.0; scores.len()];
    if negatives.is_empty() {
        return Ok(Some(TalRow { value: 0.0, grad }));
    }

    let inv_pos = 1.0 / positives.len() as f64;
    let mut logits = vec![0.0; negatives.len()];
    let mut value = 0.0;
    for &p in positives {
        let sp = scores[p];
        let mut max = f64::NEG_INFINITY;
        for (l, &n) in logits.iter_mut().zip(negatives) {
            *l = (scores[n] - sp + margin) / tau;
            max = max.max(*l);
        }
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        value += softplus(lse);
        // d softplus(lse) = σ(lse) · softmax(logits) / τ on each negative,
        // and −σ(lse) / τ on the positive.
        let outer = sigmoid(lse) * inv_pos / tau;
        for (l, &n) in logits.iter().zip(negatives) {
            grad[n] += outer * (l - lse).exp();
        }
        grad[p] -= outer;
    }
    Ok(Some(TalRow {
        value: value * inv_pos,
        grad,
    }))
}
