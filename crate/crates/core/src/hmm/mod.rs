//! Explicit-duration HMM over monotone action transcripts.
//!
//! A segmentation of a `T`-frame video is a strictly increasing list of
//! action labels `c_1 < … < c_K` with segment lengths `l_1 … l_K` summing to
//! `T`. Its unnormalised log posterior is
//!
//! ```text
//! ln κ + Σ_t ln p(x_t | c_k(t)) + Σ_k ln Poisson(l_k; λ_{c_k}) + Σ_k ln p(c_{k+1} | c_k)
//! ```
//!
//! where the frame terms come from a [`LikelihoodModel`], the durations from
//! [`poisson_log_pmf`] and the transitions from [`transition_log_prob`].
//! [`viterbi_decode`] returns the exact maximiser.
//!
//! Action labels are 0-based throughout the crate: the initial ordering is
//! `[0, 1, …, N-1]`.

mod duration;
mod likelihood;
mod transition;
mod viterbi;

pub use duration::poisson_log_pmf;
pub use likelihood::{
    frame_log_likelihoods, mean_frame_nll, train_likelihood_mlp, LikelihoodModel,
    LikelihoodTraining, LIKELIHOOD_HIDDEN,
};
pub use transition::{start_log_prob, transition_log_prob, TransitionTable};
pub use viterbi::{
    default_max_len, score_segmentation, viterbi_decode, viterbi_decode_with, DecodeOptions,
    Decoded, DurationModel, TranscriptMode,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An ordered list of `(action, length)` pairs covering a video exactly.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segmentation {
    actions: Vec<usize>,
    lengths: Vec<usize>,
}

impl Segmentation {
    pub fn new(actions: Vec<usize>, lengths: Vec<usize>) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::InvalidArgument("a segmentation needs at least one segment".into()));
        }
        if actions.len() != lengths.len() {
            return Err(Error::dim("segment lengths", actions.len(), lengths.len()));
        }
        if actions.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(format!(
                "transcript {actions:?} is not strictly increasing"
            )));
        }
        if lengths.contains(&0) {
            return Err(Error::InvalidArgument("segments must have at least one frame".into()));
        }
        Ok(Segmentation { actions, lengths })
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn n_segments(&self) -> usize {
        self.actions.len()
    }

    /// Total frame count `Σ l_k`.
    pub fn total_len(&self) -> usize {
        self.lengths.iter().sum()
    }

    /// `(action, start_frame, length)` for every segment.
    pub fn segments(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut start = 0;
        self.actions.iter().zip(&self.lengths).map(move |(&a, &l)| {
            let s = start;
            start += l;
            (a, s, l)
        })
    }

    /// Expands to one label per frame.
    pub fn frame_labels(&self) -> Vec<usize> {
        self.actions
            .iter()
            .zip(&self.lengths)
            .flat_map(|(&a, &l)| std::iter::repeat(a).take(l))
            .collect()
    }

    /// Checks the invariants against an action count and a frame count.
    pub fn validate(&self, n_actions: usize, frames: usize) -> Result<()> {
        if self.actions.iter().any(|&a| a >= n_actions) {
            return Err(Error::InvalidArgument(format!(
                "transcript {:?} uses labels outside 0..{n_actions}",
                self.actions
            )));
        }
        if self.total_len() != frames {
            return Err(Error::dim("segmentation frame total", frames, self.total_len()));
        }
        Ok(())
    }
}

/// Duration means `Λ` and the start constant `κ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmParams {
    lambdas: Vec<f64>,
    kappa: f64,
}

impl HmmParams {
    pub fn new(lambdas: Vec<f64>, kappa: f64) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(Error::InvalidArgument("need at least one action".into()));
        }
        if let Some(bad) = lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidArgument(format!("mean lengths must be positive, got {bad}")));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidArgument(format!("kappa must be positive, got {kappa}")));
        }
        Ok(HmmParams { lambdas, kappa })
    }

    /// `κ = 1/N`.
    pub fn with_default_kappa(lambdas: Vec<f64>) -> Result<Self> {
        let n = lambdas.len().max(1) as f64;
        Self::new(lambdas, 1.0 / n)
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn n_actions(&self) -> usize {
        self.lambdas.len()
    }

    pub fn set_lambdas(&mut self, lambdas: Vec<f64>) -> Result<()> {
        *self = HmmParams::new(lambdas, self.kappa)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segmentation_invariants() {
        assert!(Segmentation::new(vec![0, 2], vec![3, 1]).is_ok());
        assert!(Segmentation::new(vec![1, 1], vec![3, 1]).is_err());
        assert!(Segmentation::new(vec![2, 1], vec![3, 1]).is_err());
        assert!(Segmentation::new(vec![0], vec![0]).is_err());
        assert!(Segmentation::new(vec![], vec![]).is_err());
        let s = Segmentation::new(vec![0, 2], vec![2, 3]).unwrap();
        assert_eq!(s.frame_labels(), vec![0, 0, 2, 2, 2]);
        assert_eq!(s.segments().collect::<Vec<_>>(), vec![(0, 0, 2), (2, 2, 3)]);
        assert!(s.validate(3, 5).is_ok());
        assert!(s.validate(2, 5).is_err());
        assert!(s.validate(3, 4).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(HmmParams::new(vec![1.0, 0.0], 0.5).is_err());
        assert!(HmmParams::new(vec![1.0], 0.0).is_err());
        let p = HmmParams::with_default_kappa(vec![2.0; 4]).unwrap();
        assert_eq!(p.kappa(), 0.25);
    }
}
