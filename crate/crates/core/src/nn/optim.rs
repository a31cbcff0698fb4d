use super::Parameters;
use crate::error::{Error, Result};

/// Stochastic gradient descent with classical momentum:
/// `v ← μ·v − lr·g; p ← p + v`.
///
/// Velocity buffers are allocated on the first step and must keep the same
/// shapes afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdMomentum {
    learning_rate: f64,
    momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Default for SgdMomentum {
    fn default() -> Self {
        SgdMomentum {
            learning_rate: 0.001,
            momentum: 0.9,
            velocity: Vec::new(),
        }
    }
}

impl SgdMomentum {
    pub fn new(learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be non-negative, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        Ok(SgdMomentum {
            learning_rate,
            momentum,
            velocity: Vec::new(),
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    pub fn reset(&mut self) {
        self.velocity.clear();
    }

    pub fn step<P: Parameters, G: Parameters>(&mut self, params: &mut P, grads: &G) -> Result<()> {
        self.step_slices(params.param_slices_mut(), grads.param_slices())
    }

    /// Applies one update to an explicit list of buffers.
    pub fn step_slices(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::dim("sgd buffer count", params.len(), grads.len()));
        }
        for (i, (p, g)) in params.iter().zip(&grads).enumerate() {
            if p.len() != g.len() {
                return Err(Error::dim(format!("sgd gradient buffer {i}"), p.len(), g.len()));
            }
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        } else {
            if self.velocity.len() != params.len() {
                return Err(Error::dim("sgd velocity buffer count", self.velocity.len(), params.len()));
            }
            for (i, (v, p)) in self.velocity.iter().zip(&params).enumerate() {
                if v.len() != p.len() {
                    return Err(Error::dim(format!("sgd velocity buffer {i}"), v.len(), p.len()));
                }
            }
        }
        let (lr, mu) = (self.learning_rate, self.momentum);
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            for ((pi, gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = mu * *vi - lr * gi;
                *pi += *vi;
            }
        }
        Ok(())
    }
}
