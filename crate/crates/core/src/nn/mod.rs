//! Minimal dense-layer and vanilla-RNN machinery with hand-written backward
//! passes.
//!
//! Every learnable component of the pipeline (the frame embedding, the
//! likelihood network, the shuffle classifier) is assembled from the pieces
//! here. Gradients are computed analytically and verified against central
//! finite differences with [`grad_check`].

mod dense;
mod gradcheck;
mod loss;
mod optim;
mod rnn;

pub use dense::{mlp_apply, mlp_backward, Activation, DenseLayer, LayerGrad, Mlp, MlpGrad};
pub use gradcheck::grad_check;
pub use loss::{bce_loss, log_softmax, sigmoid, softmax, softmax_xent, BceOutput};
pub use optim::SgdMomentum;
pub use rnn::{rnn_forward, RnnCell, RnnGrad};

use crate::error::{Error, Result};

/// A bag of real-valued parameter buffers in a fixed order.
///
/// Gradient types implement this too, with buffers in the same order as the
/// parameters they differentiate, so an optimizer can zip them.
pub trait Parameters {
    fn param_slices(&self) -> Vec<&[f64]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }
}

/// Concatenates all parameter buffers into one vector.
pub fn flatten(p: &impl Parameters) -> Vec<f64> {
    p.param_slices().concat()
}

/// Inverse of [`flatten`].
pub fn assign(p: &mut impl Parameters, flat: &[f64]) -> Result<()> {
    let expected = p.param_count();
    if flat.len() != expected {
        return Err(Error::dim("assign parameters", expected, flat.len()));
    }
    let mut offset = 0;
    for slice in p.param_slices_mut() {
        let n = slice.len();
        slice.copy_from_slice(&flat[offset..offset + n]);
        offset += n;
    }
    Ok(())
}

/// `dst += scale · src`, buffer by buffer.
pub fn axpy(dst: &mut impl Parameters, scale: f64, src: &impl Parameters) -> Result<()> {
    let src = src.param_slices();
    let mut dst = dst.param_slices_mut();
    if src.len() != dst.len() {
        return Err(Error::dim("axpy buffer count", dst.len(), src.len()));
    }
    for (i, (d, s)) in dst.iter_mut().zip(&src).enumerate() {
        if d.len() != s.len() {
            return Err(Error::dim(format!("axpy buffer {i}"), d.len(), s.len()));
        }
        for (x, y) in d.iter_mut().zip(s.iter()) {
            *x += scale * y;
        }
    }
    Ok(())
}

pub fn scale(p: &mut impl Parameters, factor: f64) {
    for s in p.param_slices_mut() {
        s.iter_mut().for_each(|v| *v *= factor);
    }
}

/// Uniform Glorot bound `sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out).max(1) as f64).sqrt()
}
