use crate::error::{Error, Result};

/// Unnormalised forward weight `(λ_from + λ_to) / Σ_{j=from..=to} λ_j`.
///
/// The denominator grows with every skipped action, so long skips are
/// penalised; consecutive labels get weight 1.
fn skip_weight(from: usize, to: usize, lambdas: &[f64]) -> f64 {
    let span: f64 = lambdas[from..=to].iter().sum();
    (lambdas[from] + lambdas[to]) / span
}

/// `ln p(to | from)` for 0-based labels: `−∞` unless `to > from`, otherwise
/// the skip weight normalised over all admissible successors of `from`.
pub fn transition_log_prob(from: usize, to: usize, lambdas: &[f64]) -> Result<f64> {
    let n = lambdas.len();
    if from >= n || to >= n {
        return Err(Error::InvalidArgument(format!(
            "transition {from} -> {to} outside 0..{n}"
        )));
    }
    if to <= from {
        return Ok(f64::NEG_INFINITY);
    }
    let total: f64 = (from + 1..n).map(|c| skip_weight(from, c, lambdas)).sum();
    Ok((skip_weight(from, to, lambdas) / total).ln())
}

/// `ln p(c_1 | c_0) = ln κ`, the same for every first action.
pub fn start_log_prob(kappa: f64) -> f64 {
    kappa.ln()
}

/// Dense `N × N` table of transition log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTable {
    n: usize,
    log_probs: Vec<f64>,
}

impl TransitionTable {
    pub fn new(lambdas: &[f64]) -> Self {
        let n = lambdas.len();
        let mut log_probs = vec![f64::NEG_INFINITY; n * n];
        for from in 0..n {
            let total: f64 = (from + 1..n).map(|c| skip_weight(from, c, lambdas)).sum();
            for to in from + 1..n {
                log_probs[from * n + to] = (skip_weight(from, to, lambdas) / total).ln();
            }
        }
        TransitionTable { n, log_probs }
    }

    /// Only `c → c+1`, with probability 1.
    pub fn fixed_transcript(n: usize) -> Self {
        let mut log_probs = vec![f64::NEG_INFINITY; n * n];
        for from in 0..n.saturating_sub(1) {
            log_probs[from * n + from + 1] = 0.0;
        }
        TransitionTable { n, log_probs }
    }

    pub fn n_actions(&self) -> usize {
        self.n
    }

    pub fn log_prob(&self, from: usize, to: usize) -> f64 {
        self.log_probs[from * self.n + to]
    }
}
