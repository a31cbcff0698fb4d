use crate::error::{Error, Result};
use crate::linalg::log_sum_exp;

const PROB_CLAMP: f64 = 1e-12;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BceOutput {
    pub loss: f64,
    /// Gradient with respect to the pre-sigmoid logit, `p − y`.
    pub logit_grad: f64,
}

/// Binary cross-entropy of a sigmoid output `probability` against a 0/1 label.
pub fn bce_loss(probability: f64, label: bool) -> BceOutput {
    let p = probability.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let y = if label { 1.0 } else { 0.0 };
    let loss = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
    BceOutput {
        loss: loss.max(0.0),
        logit_grad: probability - y,
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Softmax cross-entropy against class `label`; returns the loss and its
/// gradient with respect to the logits.
pub fn softmax_xent(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("softmax logits".into()));
    }
    let logp = log_softmax(logits);
    let loss = (-logp[label]).max(0.0);
    let mut grad: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}
